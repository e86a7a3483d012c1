"""Propositions, the shipped inference rules and forward chaining.

Text syntax: ``A``, ``!A``, ``A -> B`` (right associative, loosest),
``A & B``, parentheses, and triples ``sub(A,B)``, ``is(x,A)``,
``permitted(act)`` or any ``pred(s,o)``. Terms starting with ``?`` are
variables, instantiated over the finite set of constants in play.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Union

from ..crypto import Digest, hash_record
from ..encoding import Tag, ce, split_fields
from ..errors import ValidationError

SUBCLASS = "SubClassOf"
CLASS_ASSERTION = "ClassAssertion"
PERMITTED = "Permitted"


@dataclass(frozen=True)
class Atom:
    name: str

    def canonical(self) -> bytes:
        return ce(Tag.PROPOSITION, "atom", self.name)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Not:
    body: "Proposition"

    def canonical(self) -> bytes:
        return ce(Tag.PROPOSITION, "not", self.body)

    def __str__(self) -> str:
        return "!" + _wrap(self.body, (Atom, Not, Triple))


@dataclass(frozen=True)
class Implies:
    antecedent: "Proposition"
    consequent: "Proposition"

    def canonical(self) -> bytes:
        return ce(Tag.PROPOSITION, "implies", self.antecedent, self.consequent)

    def __str__(self) -> str:
        return f"{_wrap(self.antecedent, (Atom, Not, Triple, And))} -> {self.consequent}"


@dataclass(frozen=True)
class And:
    left: "Proposition"
    right: "Proposition"

    def canonical(self) -> bytes:
        return ce(Tag.PROPOSITION, "and", self.left, self.right)

    def __str__(self) -> str:
        return f"{_wrap(self.left, (Atom, Not, Triple, And))} & {_wrap(self.right, (Atom, Not, Triple))}"


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    obj: str

    def canonical(self) -> bytes:
        return ce(Tag.PROPOSITION, "triple", self.subject, self.predicate, self.obj)

    def __str__(self) -> str:
        if self.predicate == SUBCLASS:
            return f"sub({self.subject},{self.obj})"
        if self.predicate == CLASS_ASSERTION:
            return f"is({self.subject},{self.obj})"
        if self.predicate == PERMITTED and self.obj == "true":
            return f"permitted({self.subject})"
        return f"{self.predicate}({self.subject},{self.obj})"


Proposition = Union[Atom, Not, Implies, And, Triple]


def proposition_from_canonical(raw: bytes) -> Proposition:
    _, f = split_fields(raw, Tag.PROPOSITION)
    kind = f[0].decode()
    if kind == "atom":
        return Atom(f[1].decode())
    if kind == "not":
        return Not(proposition_from_canonical(f[1]))
    if kind == "implies":
        return Implies(proposition_from_canonical(f[1]), proposition_from_canonical(f[2]))
    if kind == "and":
        return And(proposition_from_canonical(f[1]), proposition_from_canonical(f[2]))
    if kind == "triple":
        return Triple(f[1].decode(), f[2].decode(), f[3].decode())
    raise ValidationError(f"unknown proposition kind {kind!r}")


def _wrap(p: Proposition, bare: tuple) -> str:
    return str(p) if isinstance(p, bare) else f"({p})"


def sub(a: str, b: str) -> Triple:
    return Triple(a, SUBCLASS, b)


def is_a(x: str, cls: str) -> Triple:
    return Triple(x, CLASS_ASSERTION, cls)


def permitted(action: str) -> Triple:
    return Triple(action, PERMITTED, "true")


def neg(p: Proposition) -> Proposition:
    """The complement: strips one negation instead of stacking two."""
    return p.body if isinstance(p, Not) else Not(p)


def prop_digest(p: Proposition) -> Digest:
    return hash_record(Tag.PROPOSITION, p)


# -- parser -------------------------------------------------------------------

_NAME_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_?.:-")


def _tokens(text: str) -> list[str]:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif text.startswith("->", i):
            out.append("->")
            i += 2
        elif c in "!&(),":
            out.append(c)
            i += 1
        elif c in _NAME_CHARS:
            j = i
            while j < len(text) and text[j] in _NAME_CHARS and not text.startswith("->", j):
                j += 1
            out.append(text[i:j])
            i = j
        else:
            raise ValidationError(f"unexpected character {c!r} in {text!r}")
    return out


def parse(text: str) -> Proposition:
    toks = _tokens(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def take(expected=None):
        nonlocal pos
        tok = peek()
        if tok is None or (expected is not None and tok != expected):
            raise ValidationError(f"expected {expected or 'a token'} in {text!r}")
        pos += 1
        return tok

    def implication():
        left = conjunction()
        if peek() == "->":
            take()
            return Implies(left, implication())
        return left

    def conjunction():
        left = unary()
        while peek() == "&":
            take()
            left = And(left, unary())
        return left

    def unary():
        tok = peek()
        if tok == "!":
            take()
            return Not(unary())
        if tok == "(":
            take()
            inner = implication()
            take(")")
            return inner
        name = take()
        if name in ("->", "&", ")", ","):
            raise ValidationError(f"unexpected {name!r} in {text!r}")
        if peek() != "(":
            return Atom(name)
        take("(")
        args = [take()]
        while peek() == ",":
            take()
            args.append(take())
        take(")")
        return _triple(name, args, text)

    result = implication()
    if pos != len(toks):
        raise ValidationError(f"trailing input in {text!r}")
    return result


def _triple(name: str, args: list[str], text: str) -> Triple:
    if name == "sub" and len(args) == 2:
        return sub(*args)
    if name == "is" and len(args) == 2:
        return is_a(*args)
    if name == "permitted" and len(args) == 1:
        return permitted(args[0])
    if len(args) == 2 and name not in ("sub", "is", "permitted"):
        return Triple(args[0], name, args[1])
    raise ValidationError(f"bad arity for {name} in {text!r}")


# -- structure helpers --------------------------------------------------------


def subformulas(p: Proposition) -> Iterable[Proposition]:
    yield p
    if isinstance(p, Not):
        yield from subformulas(p.body)
    elif isinstance(p, Implies):
        yield from subformulas(p.antecedent)
        yield from subformulas(p.consequent)
    elif isinstance(p, And):
        yield from subformulas(p.left)
        yield from subformulas(p.right)


def terms(p: Proposition) -> set[str]:
    return {t for q in subformulas(p) if isinstance(q, Triple) for t in (q.subject, q.obj)}


def variables(p: Proposition) -> set[str]:
    return {t for t in terms(p) if t.startswith("?")}


def substitute(p: Proposition, binding: dict[str, str]) -> Proposition:
    if isinstance(p, Triple):
        return Triple(binding.get(p.subject, p.subject), p.predicate, binding.get(p.obj, p.obj))
    if isinstance(p, Not):
        return Not(substitute(p.body, binding))
    if isinstance(p, Implies):
        return Implies(substitute(p.antecedent, binding), substitute(p.consequent, binding))
    if isinstance(p, And):
        return And(substitute(p.left, binding), substitute(p.right, binding))
    return p


# -- rules --------------------------------------------------------------------


@dataclass(frozen=True)
class InferenceRule:
    rule_id: str
    arity: int
    checker: Callable[[tuple, Proposition], bool]


def _mp(prem, concl):
    a, b = prem
    return (isinstance(b, Implies) and b.antecedent == a and b.consequent == concl) or (
        isinstance(a, Implies) and a.antecedent == b and a.consequent == concl
    )


def _conj_intro(prem, concl):
    return concl == And(prem[0], prem[1])


def _conj_elim(prem, concl):
    (p,) = prem
    return isinstance(p, And) and concl in (p.left, p.right)


def _is_sub(p):
    return isinstance(p, Triple) and p.predicate == SUBCLASS


def _is_member(p):
    return isinstance(p, Triple) and p.predicate == CLASS_ASSERTION


def _sub_trans(prem, concl):
    for x, y in (prem, prem[::-1]):
        if _is_sub(x) and _is_sub(y) and x.obj == y.subject and concl == sub(x.subject, y.obj):
            return True
    return False


def _class_prop(prem, concl):
    for x, y in (prem, prem[::-1]):
        if _is_member(x) and _is_sub(y) and x.obj == y.subject and concl == is_a(x.subject, y.obj):
            return True
    return False


def _univ_inst(prem, concl):
    (p,) = prem
    vs = sorted(variables(p))
    if not vs:
        return False
    binding = _match(p, concl, {})
    return binding is not None and set(binding) == set(vs) and not any(v.startswith("?") for v in binding.values())


def _match(pattern, target, binding):
    if type(pattern) is not type(target):
        return None
    if isinstance(pattern, Triple):
        if pattern.predicate != target.predicate:
            return None
        for pt, tt in ((pattern.subject, target.subject), (pattern.obj, target.obj)):
            if pt.startswith("?"):
                if binding.setdefault(pt, tt) != tt:
                    return None
            elif pt != tt:
                return None
        return binding
    if isinstance(pattern, Atom):
        return binding if pattern == target else None
    if isinstance(pattern, Not):
        return _match(pattern.body, target.body, binding)
    if isinstance(pattern, Implies):
        b = _match(pattern.antecedent, target.antecedent, binding)
        return None if b is None else _match(pattern.consequent, target.consequent, b)
    b = _match(pattern.left, target.left, binding)
    return None if b is None else _match(pattern.right, target.right, b)


MODUS_PONENS = InferenceRule("modus-ponens", 2, _mp)
CONJ_INTRO = InferenceRule("conjunction-intro", 2, _conj_intro)
CONJ_ELIM = InferenceRule("conjunction-elim", 1, _conj_elim)
SUBCLASS_TRANSITIVITY = InferenceRule("subclass-transitivity", 2, _sub_trans)
CLASS_PROPAGATION = InferenceRule("class-propagation", 2, _class_prop)
UNIVERSAL_INSTANTIATION = InferenceRule("universal-instantiation", 1, _univ_inst)

RULES: dict[str, InferenceRule] = {
    r.rule_id: r
    for r in (MODUS_PONENS, CONJ_INTRO, CONJ_ELIM, SUBCLASS_TRANSITIVITY, CLASS_PROPAGATION, UNIVERSAL_INSTANTIATION)
}


def proof_sketch(rule_id: str, premises: Iterable[Proposition], conclusion: Proposition) -> Digest:
    return hash_record(Tag.PROOF_SKETCH, rule_id, list(premises), conclusion)


def verify_edge(premises: list[Proposition], conclusion: Proposition, rule: InferenceRule) -> tuple[bool, Digest | None]:
    premises = tuple(premises)
    if len(premises) != rule.arity:
        raise ValidationError(f"{rule.rule_id} takes {rule.arity} premises, got {len(premises)}")
    if not rule.checker(premises, conclusion):
        return False, None
    return True, proof_sketch(rule.rule_id, premises, conclusion)


# -- forward chaining ---------------------------------------------------------

Justification = Union[None, tuple[str, tuple[Proposition, ...]]]


def saturate(
    facts: Iterable[Proposition], goals: Iterable[Proposition] = (), rules: Iterable[str] | None = None
) -> dict[Proposition, Justification]:
    """Closure of ``facts`` under the shipped rules, with one justification each.

    ``rules`` restricts chaining to the given rule ids.

    Conjunction introduction only builds conjunctions that occur as
    subformulas of the facts or goals, which keeps the fixpoint finite.
    Variable-bearing facts feed only universal instantiation.
    """
    facts = list(facts)
    goals = list(goals)
    universe_ands: dict[Proposition, list[And]] = {}
    constants: set[str] = set()
    for p in itertools.chain(facts, goals):
        constants |= {t for t in terms(p) if not t.startswith("?")}
        for q in subformulas(p):
            if isinstance(q, And) and not variables(q):
                universe_ands.setdefault(q.left, []).append(q)
                universe_ands.setdefault(q.right, []).append(q)
    consts = sorted(constants)
    allowed = set(RULES) if rules is None else set(rules)

    known: dict[Proposition, Justification] = {}
    by_antecedent: dict[Proposition, list[Implies]] = {}
    sub_from: dict[str, list[Triple]] = {}
    sub_to: dict[str, list[Triple]] = {}
    members_of: dict[str, list[Triple]] = {}
    agenda: deque = deque((p, None) for p in facts)

    while agenda:
        p, why = agenda.popleft()
        if p in known:
            continue
        known[p] = why
        derived: list[tuple[Proposition, str, tuple]] = []
        vs = sorted(variables(p))
        if vs:
            for combo in itertools.product(consts, repeat=len(vs)):
                derived.append((substitute(p, dict(zip(vs, combo))), UNIVERSAL_INSTANTIATION.rule_id, (p,)))
            agenda.extend((c, (r, prem)) for c, r, prem in derived if r in allowed)
            continue
        if isinstance(p, Implies):
            by_antecedent.setdefault(p.antecedent, []).append(p)
            if p.antecedent in known:
                derived.append((p.consequent, MODUS_PONENS.rule_id, (p.antecedent, p)))
        for imp in by_antecedent.get(p, ()):
            derived.append((imp.consequent, MODUS_PONENS.rule_id, (p, imp)))
        if isinstance(p, And):
            derived.append((p.left, CONJ_ELIM.rule_id, (p,)))
            derived.append((p.right, CONJ_ELIM.rule_id, (p,)))
        for conj in universe_ands.get(p, ()):
            if conj.left in known and conj.right in known:
                derived.append((conj, CONJ_INTRO.rule_id, (conj.left, conj.right)))
        if _is_sub(p):
            sub_from.setdefault(p.subject, []).append(p)
            sub_to.setdefault(p.obj, []).append(p)
            for nxt in list(sub_from.get(p.obj, ())):
                derived.append((sub(p.subject, nxt.obj), SUBCLASS_TRANSITIVITY.rule_id, (p, nxt)))
            for prev in list(sub_to.get(p.subject, ())):
                derived.append((sub(prev.subject, p.obj), SUBCLASS_TRANSITIVITY.rule_id, (prev, p)))
            for m in list(members_of.get(p.subject, ())):
                derived.append((is_a(m.subject, p.obj), CLASS_PROPAGATION.rule_id, (m, p)))
        if _is_member(p):
            members_of.setdefault(p.obj, []).append(p)
            for s in list(sub_from.get(p.obj, ())):
                derived.append((is_a(p.subject, s.obj), CLASS_PROPAGATION.rule_id, (p, s)))
        agenda.extend((c, (r, prem)) for c, r, prem in derived if c not in known and r in allowed)
    return known


@dataclass(frozen=True)
class Derivation:
    """Witness premises plus rule-labelled steps in dependency order."""

    premises: tuple[Proposition, ...]
    steps: tuple[tuple[str, tuple[Proposition, ...], Proposition], ...]

    def replay(self) -> bool:
        have = set(self.premises)
        for rule_id, prem, concl in self.steps:
            if rule_id not in RULES or not all(p in have for p in prem):
                return False
            if not verify_edge(list(prem), concl, RULES[rule_id])[0]:
                return False
            have.add(concl)
        return True


def extract_derivation(known: dict[Proposition, Justification], goal: Proposition) -> Derivation:
    premises: list[Proposition] = []
    steps: list = []
    done: set = set()
    stack = [(goal, False)]
    while stack:
        p, expanded = stack.pop()
        if p in done:
            continue
        why = known[p]
        if why is None:
            done.add(p)
            premises.append(p)
        elif expanded:
            done.add(p)
            steps.append((why[0], why[1], p))
        else:
            stack.append((p, True))
            stack.extend((q, False) for q in why[1] if q not in done)
    return Derivation(tuple(premises), tuple(steps))


def derive(facts: Iterable[Proposition], goal: Proposition) -> Derivation | None:
    known = saturate(facts, [goal])
    return extract_derivation(known, goal) if goal in known else None


def complementary_pairs(props: Iterable[Proposition]) -> list[tuple[Proposition, Proposition]]:
    s = set(props)
    return sorted(((p.body, p) for p in s if isinstance(p, Not) and p.body in s), key=lambda pr: str(pr[0]))
