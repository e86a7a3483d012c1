"""Versioned policy graphs: derivation paths, conflict detection, succession."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Union

from ..crypto import Digest, hash_record
from ..encoding import Tag
from ..errors import AcyclicityError, MissingReferenceError, UnderivableError, ValidationError
from ..merkle import InclusionProof, build_tree, prove_inclusion, verify_inclusion
from .logic import RULES, Implies, Proposition, complementary_pairs, parse, saturate, verify_edge

ZERO = Digest(bytes(32))

PropLike = Union[Proposition, str]


def policy_node_hash(prop: Proposition) -> Digest:
    return hash_record(Tag.POLICY_NODE, prop)


def _prop(p: PropLike) -> Proposition:
    return parse(p) if isinstance(p, str) else p


@dataclass(frozen=True)
class PolicyEdge:
    src: Digest
    dst: Digest
    rule_id: str

    @property
    def edge_hash(self) -> Digest:
        return hash_record(Tag.POLICY_EDGE, self.src, self.dst, self.rule_id)


@dataclass(frozen=True)
class PolicyGraph:
    layer: str
    nodes: tuple[tuple[Digest, Proposition], ...]
    edges: tuple[PolicyEdge, ...] = ()
    version: int = 0
    predecessor: Digest = ZERO
    successions: tuple[tuple[Digest, Digest], ...] = ()

    def __post_init__(self):
        for h, p in self.nodes:
            if policy_node_hash(p) != h:
                raise ValidationError(f"node hash for {p} does not recompute")
        ids = {h for h, _ in self.nodes}
        for e in self.edges:
            if e.src not in ids or e.dst not in ids:
                raise MissingReferenceError("edge references a node outside the graph")
            if e.rule_id not in RULES:
                raise ValidationError(f"unregistered rule {e.rule_id!r}")
        if not _acyclic(ids, self.edges):
            raise AcyclicityError("policy graph must be acyclic")

    @classmethod
    def build(
        cls, layer: str, nodes: Iterable[PropLike], edges: Iterable[tuple[PropLike, PropLike, str]] = ()
    ) -> "PolicyGraph":
        props = [_prop(p) for p in nodes]
        node_map = {policy_node_hash(p): p for p in props}
        es = tuple(PolicyEdge(policy_node_hash(_prop(a)), policy_node_hash(_prop(b)), r) for a, b, r in edges)
        return cls(layer, tuple(sorted(node_map.items())), tuple(sorted(set(es), key=lambda e: e.edge_hash)))

    @cached_property
    def node_map(self) -> dict[Digest, Proposition]:
        return dict(self.nodes)

    def node_id(self, p: PropLike) -> Digest:
        h = policy_node_hash(_prop(p))
        if h not in self.node_map:
            raise MissingReferenceError(str(p))
        return h

    def incoming(self, h: Digest) -> list[PolicyEdge]:
        return [e for e in self.edges if e.dst == h]

    def leaves(self) -> list[bytes]:
        return sorted(h for h, _ in self.nodes) + sorted(e.edge_hash for e in self.edges)

    def root(self) -> Digest:
        leaves = self.leaves()
        return build_tree(leaves).root if leaves else ZERO

    @cached_property
    def version_hash(self) -> Digest:
        return hash_record(
            Tag.POLICY_VERSION,
            self.layer,
            self.version,
            self.predecessor,
            self.root(),
            [[new, old] for new, old in self.successions],
        )

    def superseded_by(self, h: Digest) -> list[Digest]:
        return [new for new, old in self.successions if old == h]


def _acyclic(ids, edges) -> bool:
    indeg = {h: 0 for h in ids}
    out: dict = {}
    for e in edges:
        indeg[e.dst] += 1
        out.setdefault(e.src, []).append(e.dst)
    ready = [h for h, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        h = ready.pop()
        seen += 1
        for nxt in out.get(h, ()):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    return seen == len(indeg)


# -- derivation paths ---------------------------------------------------------


@dataclass(frozen=True)
class PolicyPath:
    nodes: tuple[Digest, ...]
    edges: tuple[tuple[PolicyEdge, Digest], ...]
    proofs: tuple[tuple[bytes, InclusionProof], ...]
    graph_root: Digest

    def __len__(self) -> int:
        return len(self.nodes)

    def verify(self, graph: PolicyGraph) -> bool:
        """Recheck hashes, rule certificates and inclusion against ``graph``'s root."""
        root = graph.root()
        if root != self.graph_root:
            return False
        for leaf, proof in self.proofs:
            if not verify_inclusion(leaf, proof, root):
                return False
        groups: dict[tuple[Digest, str], list[Digest]] = {}
        for edge, _ in self.edges:
            groups.setdefault((edge.dst, edge.rule_id), []).append(edge.src)
        for edge, sketch in self.edges:
            srcs = groups[(edge.dst, edge.rule_id)]
            ok, want = _group_check(graph, srcs, edge.dst, edge.rule_id)
            if not ok or want != sketch:
                return False
        covered = {leaf for leaf, _ in self.proofs}
        return all(h in covered for h in self.nodes) and all(e.edge_hash in covered for e, _ in self.edges)


def _group_check(graph: PolicyGraph, srcs: list[Digest], dst: Digest, rule_id: str) -> tuple[bool, Digest | None]:
    if rule_id not in RULES:
        return False, None
    premises = [graph.node_map[s] for s in srcs]
    try:
        return verify_edge(premises, graph.node_map[dst], RULES[rule_id])
    except ValidationError:
        return False, None


def _justifications(graph: PolicyGraph, h: Digest) -> list[tuple[str, list[PolicyEdge]]]:
    groups: dict[str, list[PolicyEdge]] = {}
    for e in graph.incoming(h):
        groups.setdefault(e.rule_id, []).append(e)
    return sorted(groups.items())


def derivable_nodes(graph: PolicyGraph) -> dict[Digest, tuple[str, list[PolicyEdge]] | None]:
    """Every derivable node mapped to the rule group that justifies it (``None`` for axioms)."""
    memo: dict[Digest, object] = {}
    result: dict[Digest, tuple[str, list[PolicyEdge]] | None] = {}

    def visit(h: Digest) -> bool:
        if h in memo:
            return memo[h] is not False
        groups = _justifications(graph, h)
        if not groups:
            memo[h] = None
            result[h] = None
            return True
        memo[h] = False
        for rule_id, edges in groups:
            srcs = sorted(e.src for e in edges)
            if all(visit(s) for s in srcs) and _group_check(graph, srcs, h, rule_id)[0]:
                memo[h] = (rule_id, edges)
                result[h] = (rule_id, sorted(edges, key=lambda e: e.src))
                return True
        return False

    for h, _ in graph.nodes:
        visit(h)
    return result


def derive_policy(graph: PolicyGraph, conclusion: PropLike | Digest) -> PolicyPath:
    target = conclusion if isinstance(conclusion, Digest) else graph.node_id(conclusion)
    if target not in graph.node_map:
        raise MissingReferenceError(target.hex())
    just = derivable_nodes(graph)
    if target not in just:
        raise UnderivableError(f"{graph.node_map[target]} has no valid derivation in layer {graph.layer}")
    order: list[Digest] = []
    edges: list[tuple[PolicyEdge, Digest]] = []
    seen: set[Digest] = set()

    def walk(h: Digest) -> None:
        if h in seen:
            return
        seen.add(h)
        j = just[h]
        if j is not None:
            rule_id, group = j
            srcs = sorted(e.src for e in group)
            for s in srcs:
                walk(s)
            _, sketch = _group_check(graph, srcs, h, rule_id)
            edges.extend((e, sketch) for e in group)
        order.append(h)

    walk(target)
    leaves = graph.leaves()
    tree = build_tree(leaves)
    index = {leaf: i for i, leaf in enumerate(leaves)}
    wanted = list(order) + [e.edge_hash for e, _ in edges]
    proofs = tuple((bytes(leaf), prove_inclusion(tree, index[leaf])) for leaf in wanted)
    return PolicyPath(tuple(order), tuple(edges), proofs, tree.root)


# -- conflicts ----------------------------------------------------------------


@dataclass(frozen=True)
class Morphism:
    source: int
    target: int
    mapping: tuple[tuple[Digest, Digest], ...] = ()


@dataclass(frozen=True)
class ConflictWitness:
    positive: Proposition
    negative: Proposition
    layers: tuple[str, ...]


def detect_conflict(layers: list[PolicyGraph], morphisms: Iterable[Morphism] = ()) -> list[ConflictWitness]:
    """Complementary pairs derivable inside each morphism-connected group of layers.

    A mapping entry ``v -> w`` contributes ``φ(v) -> φ(w)`` to the shared context.
    """
    parent = list(range(len(layers)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    bridges: list[tuple[int, Proposition]] = []
    for m in morphisms:
        if not (0 <= m.source < len(layers) and 0 <= m.target < len(layers)):
            raise MissingReferenceError(f"morphism {m.source}->{m.target} names a missing layer")
        src, dst = layers[m.source], layers[m.target]
        for v, w in m.mapping:
            if v not in src.node_map or w not in dst.node_map:
                raise MissingReferenceError("morphism maps a node outside its layers")
            bridges.append((m.source, Implies(src.node_map[v], dst.node_map[w])))
        parent[find(m.source)] = find(m.target)

    groups: dict[int, list[int]] = {}
    for i in range(len(layers)):
        groups.setdefault(find(i), []).append(i)
    out = []
    for members in groups.values():
        facts = [p for i in members for _, p in layers[i].nodes]
        facts += [b for i, b in bridges if find(i) == find(members[0])]
        names = tuple(layers[i].layer for i in members)
        out.extend(ConflictWitness(p, n, names) for p, n in complementary_pairs(saturate(facts)))
    return out


# -- succession ---------------------------------------------------------------


def supersede(
    graph: PolicyGraph,
    nodes: Iterable[PropLike] = (),
    edges: Iterable[tuple[PropLike, PropLike, str]] = (),
    successions: Iterable[tuple[PropLike, PropLike]] = (),
) -> PolicyGraph:
    """Version ``t+1``: the old graph plus additions, hash-linked to ``graph``."""
    node_map = dict(graph.nodes)
    for p in nodes:
        p = _prop(p)
        node_map[policy_node_hash(p)] = p
    new_edges = set(graph.edges)
    for a, b, r in edges:
        new_edges.add(PolicyEdge(policy_node_hash(_prop(a)), policy_node_hash(_prop(b)), r))
    succ = list(graph.successions)
    for new, old in successions:
        hn, ho = policy_node_hash(_prop(new)), policy_node_hash(_prop(old))
        if hn not in node_map:
            raise MissingReferenceError(f"successor {new} is not in the new version")
        if ho not in graph.node_map:
            raise MissingReferenceError(f"superseded node {old} is not in version {graph.version}")
        succ.append((hn, ho))
    return PolicyGraph(
        graph.layer,
        tuple(sorted(node_map.items())),
        tuple(sorted(new_edges, key=lambda e: e.edge_hash)),
        graph.version + 1,
        graph.version_hash,
        tuple(succ),
    )


def verify_version_chain(versions: list[PolicyGraph]) -> bool:
    """Each version links to its predecessor's hash and keeps all its content."""
    for prev, cur in zip(versions, versions[1:]):
        if cur.predecessor != prev.version_hash or cur.version != prev.version + 1:
            return False
        if not set(prev.nodes) <= set(cur.nodes) or not set(prev.edges) <= set(cur.edges):
            return False
    return True
