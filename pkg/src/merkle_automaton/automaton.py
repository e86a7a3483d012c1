"""The ledgered Mealy-style DFA and its verifiable execution traces.

Every step emits a :class:`TransitionRecord` whose hash covers
``(from_state, symbol, to_state, timestamp)``. A committed trace has one Merkle
tree over those record hashes (anchored on the chain) and, per step, a tree
over the output events emitted so far; the per-step output roots are folded
into a :class:`~merkle_automaton.merkle.RootChain`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .crypto import Digest, KeyPair, hash_record
from .encoding import Tag, ce
from .errors import DomainError, EmptyInputError, ValidationError
from .ledger import Chain, anchor_root, append_block, verify_anchor
from .merkle import (
    InclusionProof,
    RootChain,
    build_tree,
    prove_inclusion,
    replay_root_chain,
    verify_inclusion,
)


@dataclass(frozen=True)
class Dfa:
    states: frozenset[str]
    alphabet: frozenset[str]
    delta: dict[tuple[str, str], tuple[str, str]]
    start: str
    accepting: frozenset[str]

    def __post_init__(self):
        if self.start not in self.states:
            raise ValidationError(f"start state {self.start!r} not in Q")
        if not self.accepting <= self.states:
            raise ValidationError("accepting states must be a subset of Q")
        for q in self.states:
            for a in self.alphabet:
                target = self.delta.get((q, a))
                if target is None:
                    raise ValidationError(f"delta undefined for ({q!r}, {a!r})")
                if target[0] not in self.states:
                    raise ValidationError(f"delta({q!r}, {a!r}) leaves Q")

    def __hash__(self) -> int:
        return hash((self.states, self.alphabet, tuple(sorted(self.delta.items())), self.start, self.accepting))

    @classmethod
    def build(cls, transitions: dict, start: str, accepting: Iterable[str]) -> "Dfa":
        """``transitions`` maps ``(state, symbol)`` to ``next`` or ``(next, output)``."""
        delta = {}
        for key, val in transitions.items():
            delta[key] = (val, "") if isinstance(val, str) else tuple(val)
        states = {start} | {q for q, _ in delta} | {t for t, _ in delta.values()}
        alphabet = {a for _, a in delta}
        return cls(frozenset(states), frozenset(alphabet), delta, start, frozenset(accepting))

    def run_classical(self, word: Iterable[str]) -> str:
        q = self.start
        for a in word:
            q = self.delta[(q, a)][0]
        return q

    def accepts(self, word: Iterable[str]) -> bool:
        return self.run_classical(word) in self.accepting

    def canonical(self) -> bytes:
        rows = [[q, a, t, o] for (q, a), (t, o) in sorted(self.delta.items())]
        return ce(Tag.DFA, sorted(self.states), sorted(self.alphabet), rows, self.start, sorted(self.accepting))

    # text format ------------------------------------------------------------
    @classmethod
    def parse(cls, text: str) -> "Dfa":
        transitions: dict = {}
        start = None
        accepting: list[str] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("start:"):
                start = line[len("start:") :].strip()
            elif line.startswith("accept:"):
                accepting = line[len("accept:") :].split()
            else:
                lhs, sep, rhs = line.partition("->")
                parts = lhs.split()
                if not sep or len(parts) != 2:
                    raise ValidationError(f"line {lineno}: expected 'state symbol -> state / output'")
                target, _, output = rhs.partition("/")
                transitions[(parts[0], parts[1])] = (target.strip(), output.strip())
        if start is None:
            raise ValidationError("missing 'start:' line")
        return cls.build(transitions, start, accepting)

    @classmethod
    def load(cls, path: str | Path) -> "Dfa":
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        lines = [f"start: {self.start}", "accept: " + " ".join(sorted(self.accepting))]
        for (q, a), (t, o) in sorted(self.delta.items()):
            lines.append(f"{q} {a} -> {t} / {o}" if o else f"{q} {a} -> {t}")
        return "\n".join(lines) + "\n"


def transition_hash(from_state: str, symbol: str, to_state: str, timestamp: int) -> Digest:
    return hash_record(Tag.TRANSITION, from_state, symbol, to_state, timestamp)


@dataclass(frozen=True)
class TransitionRecord:
    from_state: str
    symbol: str
    to_state: str
    timestamp: int
    record_hash: Digest

    def hash_ok(self) -> bool:
        return transition_hash(self.from_state, self.symbol, self.to_state, self.timestamp) == self.record_hash


@dataclass(frozen=True)
class OutputEvent:
    step: int
    from_state: str
    symbol: str
    to_state: str
    output: str

    def canonical(self) -> bytes:
        return ce(Tag.OUTPUT_EVENT, self.step, self.from_state, self.symbol, self.to_state, self.output)


@dataclass
class ExecutionTrace:
    start: str
    records: list[TransitionRecord] = field(default_factory=list)
    outputs: list[OutputEvent] = field(default_factory=list)
    per_step_roots: list[Digest] = field(default_factory=list)
    anchors: list[tuple[int, int]] = field(default_factory=list)
    accepted: bool = False

    @property
    def final_state(self) -> str:
        return self.records[-1].to_state if self.records else self.start

    @property
    def record_hashes(self) -> list[Digest]:
        return [r.record_hash for r in self.records]

    def output_root_chain(self) -> RootChain | None:
        if not self.per_step_roots:
            return None
        return replay_root_chain(self.per_step_roots[0], self.per_step_roots[1:])

    def output_proof(self, step: int) -> InclusionProof:
        """Proof that output ``step`` (0-based) is the last leaf of its step tree."""
        tree = build_tree([o.canonical() for o in self.outputs[: step + 1]])
        return prove_inclusion(tree, step)


def step(dfa: Dfa, state: str, symbol: str, clock: int) -> tuple[str, str, TransitionRecord]:
    if state not in dfa.states:
        raise DomainError(f"unknown state {state!r}")
    if symbol not in dfa.alphabet:
        raise DomainError(f"symbol {symbol!r} not in alphabet")
    nxt, out = dfa.delta[(state, symbol)]
    return nxt, out, TransitionRecord(state, symbol, nxt, clock, transition_hash(state, symbol, nxt, clock))


class ChainClock:
    """Reads consensus time from the tip of a chain (0 before genesis)."""

    def __init__(self, chain: Chain):
        self.chain = chain

    def __call__(self) -> int:
        return self.chain.tip.timestamp if self.chain.blocks else 0


def run(dfa: Dfa, word: Iterable[str], clock_source: Callable[[], int] | int = 0) -> ExecutionTrace:
    clock = clock_source if callable(clock_source) else (lambda: clock_source)
    trace = ExecutionTrace(dfa.start)
    q = dfa.start
    last_t = None
    output_leaves: list[bytes] = []
    for i, a in enumerate(word):
        t = clock()
        if last_t is not None and t < last_t:
            raise ValidationError("clock went backwards during a run")
        last_t = t
        nxt, out, rec = step(dfa, q, a, t)
        event = OutputEvent(i, q, a, nxt, out)
        trace.records.append(rec)
        trace.outputs.append(event)
        output_leaves.append(event.canonical())
        trace.per_step_roots.append(build_tree(output_leaves).root)
        q = nxt
    trace.accepted = q in dfa.accepting
    return trace


def commit_trace(
    trace: ExecutionTrace, chain: Chain, signer: KeyPair, epoch_id: int | None = None, timestamp: int | None = None
) -> tuple[Digest, tuple[int, int]]:
    """Anchor the transition-hash root (and the output root-chain head).

    Both anchors go into one freshly appended block; returns the transition
    root and its locator.
    """
    if not trace.records:
        raise EmptyInputError("cannot commit an empty trace")
    if epoch_id is None:
        epoch_id = len(chain.blocks)
    root = build_tree(trace.record_hashes).root
    anchor_root(chain, root, epoch_id, signer, b"transitions")
    index = len(chain.pending) - 1
    out_chain = trace.output_root_chain()
    anchor_root(chain, out_chain.head, epoch_id, signer, b"outputs")
    block = append_block(chain, (), timestamp)
    locator = (block.height, index)
    trace.anchors = [locator, (block.height, index + 1)]
    return root, locator


def verify_trace(
    dfa: Dfa,
    word: list[str],
    trace: ExecutionTrace,
    root: bytes,
    chain: Chain,
    pk: bytes | None = None,
) -> bool:
    """Decide membership of ``word`` in the verifiable language.

    (a) replaying the word reproduces every record's states, (b) every record
    hash recomputes, (c) the Merkle root over record hashes equals ``root``,
    (d) ``root`` is anchored on ``chain`` (signature-checked when ``pk`` is
    given), (e) the final state is accepting.
    """
    word = list(word)
    if len(word) != len(trace.records) or not trace.records:
        return False
    q = dfa.start
    last_t = None
    for a, rec in zip(word, trace.records):
        if (q, a) not in dfa.delta:
            return False
        nxt = dfa.delta[(q, a)][0]
        if rec.from_state != q or rec.symbol != a or rec.to_state != nxt:
            return False
        if not rec.hash_ok():
            return False
        if last_t is not None and rec.timestamp < last_t:
            return False
        last_t = rec.timestamp
        q = nxt
    if build_tree(trace.record_hashes).root != root:
        return False
    locator = chain.find_anchor(root)
    if locator is None:
        return False
    if pk is not None and not verify_anchor(chain, locator, root, pk):
        return False
    return q in dfa.accepting


def verify_output_trace(
    outputs: list[OutputEvent | bytes], proofs: list[InclusionProof], roots: list[bytes]
) -> bool:
    """Every output must verify against its own step root; any miss rejects all."""
    if not (len(outputs) == len(proofs) == len(roots)):
        raise ValidationError("outputs, proofs and roots must have equal length")
    for out, proof, root in zip(outputs, proofs, roots):
        leaf = out.canonical() if isinstance(out, OutputEvent) else bytes(out)
        if not verify_inclusion(leaf, proof, root):
            return False
    return True
