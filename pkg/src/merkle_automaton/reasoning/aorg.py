"""The append-only reasoning graph (AORG) and the output verifier.

A node is ``(φ, σ, h, t)`` with rule-labelled parent edges. ``h`` covers the
proposition, the author signature and the commit time; the signature itself
covers the parent edges and any temporal qualifier. The graph root is the
Merkle root over node hashes in insertion order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .. import crypto
from ..crypto import Digest, KeyPair, SignatureValue, hash_record
from ..encoding import Tag, ce, split_fields, split_list, to_int
from ..errors import (
    ConsistencyViolation,
    JustificationError,
    MissingReferenceError,
    SignatureDecodeError,
    TraceabilityError,
    ValidationError,
)
from ..merkle import InclusionProof, build_tree, prove_inclusion, verify_inclusion
from .logic import RULES, Proposition, complementary_pairs, parse, proposition_from_canonical, saturate, verify_edge


def node_message(prop: Proposition, t: int, parents: Iterable[tuple[str, str]], temporal: str | None) -> Digest:
    return hash_record(Tag.REASONING_NODE, prop, t, [[p, r] for p, r in parents], temporal or "")


def node_hash_for(prop: Proposition, sig: SignatureValue, t: int) -> Digest:
    return hash_record(Tag.REASONING_NODE, prop, sig.data, t)


@dataclass(frozen=True)
class ReasoningNode:
    proposition: Proposition
    author_sig: SignatureValue
    committed_at: int
    parents: tuple[tuple[str, str], ...]
    sketches: tuple[Digest, ...]
    node_hash: Digest
    temporal: str | None = None

    @property
    def node_id(self) -> str:
        return self.node_hash.hex()

    @property
    def proof_sketch(self) -> Digest:
        """One commitment over every rule application that justifies the node."""
        return hash_record(Tag.PROOF_SKETCH, list(self.sketches))

    def hash_ok(self) -> bool:
        return node_hash_for(self.proposition, self.author_sig, self.committed_at) == self.node_hash

    def signature_ok(self) -> bool:
        msg = node_message(self.proposition, self.committed_at, self.parents, self.temporal)
        try:
            return crypto.verify(self.author_sig.signer_public, msg, self.author_sig)
        except SignatureDecodeError:
            return False

    def canonical(self) -> bytes:
        return ce(
            Tag.REASONING_NODE,
            self.proposition,
            self.author_sig.data,
            self.author_sig.signer_public,
            self.committed_at,
            [[p, r] for p, r in self.parents],
            list(self.sketches),
            self.node_hash,
            self.temporal or "",
        )

    @classmethod
    def from_canonical(cls, raw: bytes) -> "ReasoningNode":
        _, f = split_fields(raw, Tag.REASONING_NODE)
        parents = []
        for item in split_list(f[4]):
            p, r = split_list(item)
            parents.append((p.decode(), r.decode()))
        return cls(
            proposition_from_canonical(f[0]),
            SignatureValue(bytes(f[1]), bytes(f[2])),
            to_int(f[3]),
            tuple(parents),
            tuple(Digest(x) for x in split_list(f[5])),
            Digest(f[6]),
            f[7].decode() or None,
        )


@dataclass
class Aorg:
    nodes: dict[str, ReasoningNode] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.order)

    def require(self, node_id: str) -> ReasoningNode:
        if node_id not in self.nodes:
            raise MissingReferenceError(node_id)
        return self.nodes[node_id]

    def root(self) -> Digest:
        if not self.order:
            raise ValidationError("empty reasoning graph has no root")
        return build_tree([self.nodes[n].node_hash for n in self.order]).root

    def inclusion(self, node_id: str) -> InclusionProof:
        tree = build_tree([self.nodes[n].node_hash for n in self.order])
        return prove_inclusion(tree, self.order.index(node_id))

    def canonical(self) -> bytes:
        return ce(Tag.AORG_EXPORT, [self.nodes[n] for n in self.order])

    @classmethod
    def from_canonical(cls, raw: bytes) -> "Aorg":
        _, f = split_fields(raw, Tag.AORG_EXPORT)
        g = cls()
        for item in split_list(f[0]):
            node = ReasoningNode.from_canonical(item)
            if any(p not in g.nodes for p, _ in node.parents):
                raise TraceabilityError("exported node precedes its parents")
            g.nodes[node.node_id] = node
            g.order.append(node.node_id)
        return g

    def ancestors(self, node_id: str, depth: int | None = None) -> list[str]:
        """Ancestors within ``depth`` hops (all when ``None``), in insertion order."""
        self.require(node_id)
        seen: set[str] = set()
        frontier = [node_id]
        hops = 0
        while frontier and (depth is None or hops < depth):
            nxt = []
            for n in frontier:
                for p, _ in self.nodes[n].parents:
                    if p not in seen:
                        seen.add(p)
                        nxt.append(p)
            frontier = nxt
            hops += 1
        return [n for n in self.order if n in seen]

    def subgraph(self, node_id: str, depth: int | None = None) -> list[str]:
        """The node plus its depth-bounded ancestry, in insertion order."""
        keep = set(self.ancestors(node_id, depth)) | {node_id}
        return [n for n in self.order if n in keep]


@dataclass(frozen=True)
class Contradiction:
    positive: Proposition
    negative: Proposition


def check_consistency(
    aorg: Aorg, prop: Proposition, ancestors: Iterable[str], temporal: str | None = None
) -> Contradiction | None:
    """``None`` when consistent, else a witness pair found by forward chaining.

    Temporally tagged propositions only meet untagged ones and those with the
    same tag; an untagged candidate is checked against every tag group.
    """
    anc = [aorg.require(n) for n in ancestors]
    tags = {n.temporal for n in anc if n.temporal is not None}
    groups = [temporal] if temporal is not None else [None, *sorted(tags)]
    for g in groups:
        facts = [n.proposition for n in anc if n.temporal is None or n.temporal == g]
        pairs = complementary_pairs(saturate(facts + [prop]))
        if pairs:
            return Contradiction(*pairs[0])
    return None


def add_node(
    aorg: Aorg,
    prop: Proposition | str,
    parents: Iterable[tuple[str, str]],
    signer: KeyPair,
    clock: int,
    temporal: str | None = None,
) -> str:
    if isinstance(prop, str):
        prop = parse(prop)
    parents = tuple((p, r) for p, r in parents)
    for p, r in parents:
        if p not in aorg.nodes:
            raise TraceabilityError(f"parent {p[:12]} is not in the graph")
        if r not in RULES:
            raise JustificationError(f"rule {r!r} is not registered")
    groups: dict[str, list[Proposition]] = {}
    for p, r in parents:
        groups.setdefault(r, []).append(aorg.nodes[p].proposition)
    sketches = []
    for rule_id, premises in sorted(groups.items()):
        try:
            ok, sketch = verify_edge(premises, prop, RULES[rule_id])
        except ValidationError as exc:
            raise JustificationError(str(exc)) from None
        if not ok:
            raise JustificationError(f"{rule_id} does not yield {prop} from {', '.join(map(str, premises))}")
        sketches.append(sketch)
    ancestors: set[str] = set()
    for p, _ in parents:
        ancestors.add(p)
        ancestors.update(aorg.ancestors(p))
    for a in ancestors:
        if any(p not in aorg.nodes for p, _ in aorg.nodes[a].parents):
            raise TraceabilityError(f"ancestor {a[:12]} does not reduce to axioms")
    witness = check_consistency(aorg, prop, sorted(ancestors), temporal)
    if witness is not None:
        raise ConsistencyViolation(
            f"{prop} contradicts its ancestry: {witness.positive} vs {witness.negative}",
            (witness.positive, witness.negative),
        )
    sig = crypto.sign(signer.secret_scalar, node_message(prop, clock, parents, temporal))
    node = ReasoningNode(prop, sig, clock, parents, tuple(sketches), node_hash_for(prop, sig, clock), temporal)
    if node.node_id in aorg.nodes:
        return node.node_id
    aorg.nodes[node.node_id] = node
    aorg.order.append(node.node_id)
    return node.node_id


def replay_node(aorg: Aorg, node_id: str) -> bool:
    """Re-run the rule checkers and compare against the stored sketches."""
    node = aorg.require(node_id)
    groups: dict[str, list[Proposition]] = {}
    for p, r in node.parents:
        if p not in aorg.nodes or r not in RULES:
            return False
        groups.setdefault(r, []).append(aorg.nodes[p].proposition)
    sketches = []
    for rule_id, premises in sorted(groups.items()):
        try:
            ok, sketch = verify_edge(premises, node.proposition, RULES[rule_id])
        except ValidationError:
            return False
        if not ok:
            return False
        sketches.append(sketch)
    return tuple(sketches) == node.sketches and node.hash_ok()


# -- output verification ------------------------------------------------------


@dataclass(frozen=True)
class TraceEntry:
    node: ReasoningNode
    inclusion: InclusionProof


@dataclass(frozen=True)
class Output:
    proposition: Proposition
    trace: tuple[TraceEntry, ...]
    clock: int
    signature: SignatureValue


def output_message(prop: Proposition, trace: Iterable[TraceEntry], clock: int) -> Digest:
    return hash_record(Tag.OUTPUT_MESSAGE, prop, [e.node.node_hash for e in trace], clock)


def sign_output(prop: Proposition, trace: tuple[TraceEntry, ...], clock: int, signer: KeyPair) -> Output:
    sig = crypto.sign(signer.secret_scalar, output_message(prop, trace, clock))
    return Output(prop, trace, clock, sig)


def make_output(aorg: Aorg, node_id: str, signer: KeyPair, clock: int, depth: int | None = None) -> Output:
    """Package node ``node_id`` with its ancestry as a signed output."""
    tree = build_tree([aorg.nodes[n].node_hash for n in aorg.order])
    index = {n: i for i, n in enumerate(aorg.order)}
    trace = tuple(TraceEntry(aorg.nodes[n], prove_inclusion(tree, index[n])) for n in aorg.subgraph(node_id, depth))
    return sign_output(aorg.nodes[node_id].proposition, trace, clock, signer)


@dataclass(frozen=True)
class OutputVerdict:
    closure: bool
    inclusion: bool
    acyclic: bool
    certificates: bool
    signature: bool

    @property
    def valid(self) -> bool:
        return self.closure and self.inclusion and self.acyclic and self.certificates and self.signature


def check_output(output: Output, dag_root: bytes, author_pk: bytes, rules: Iterable[str] | None = None) -> OutputVerdict:
    rule_ids = set(RULES) if rules is None else set(rules)
    nodes = [e.node for e in output.trace]

    premises = [n.proposition for n in nodes if not n.parents]
    closure_ok = output.proposition in saturate(premises, [output.proposition], rule_ids)

    inclusion_ok = all(
        e.node.hash_ok() and verify_inclusion(e.node.node_hash, e.inclusion, dag_root) for e in output.trace
    )

    hashes = [n.node_hash for n in nodes]
    acyclic_ok = len(set(hashes)) == len(hashes)

    by_id = {n.node_id: n for n in nodes}
    certs_ok = True
    for n in nodes:
        groups: dict[str, list[Proposition]] = {}
        for p, r in n.parents:
            if p not in by_id or r not in rule_ids or r not in RULES:
                certs_ok = False
                break
            groups.setdefault(r, []).append(by_id[p].proposition)
        if not certs_ok:
            break
        sketches = []
        for rule_id, prem in sorted(groups.items()):
            try:
                ok, sketch = verify_edge(prem, n.proposition, RULES[rule_id])
            except ValidationError:
                ok = False
            if not ok:
                certs_ok = False
                break
            sketches.append(sketch)
        if not certs_ok or tuple(sketches) != n.sketches:
            certs_ok = False
            break

    try:
        sig_ok = crypto.verify(author_pk, output_message(output.proposition, output.trace, output.clock), output.signature)
    except SignatureDecodeError:
        sig_ok = False
    return OutputVerdict(closure_ok, inclusion_ok, acyclic_ok, certs_ok, sig_ok)


def verify_output(
    outputs: Iterable[Output], dag_root: bytes, author_pk: bytes, rules: Iterable[str] | None = None
) -> list[bool]:
    """Per-output verdicts; any failed check marks that output invalid."""
    return [check_output(o, dag_root, author_pk, rules).valid for o in outputs]
