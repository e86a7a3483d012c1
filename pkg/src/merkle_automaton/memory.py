"""The append-only knowledge store.

A :class:`KnowledgeFragment` never holds plaintext. Its ``payload_digest`` is
``hash(CE(d, p, modality))``; the Merkle leaf that gets anchored is the
fragment record (digest, ciphertext, provenance, level, modality, context
tags, anchor signer), so every stored field is covered by the anchor.

Refinements form a DAG with byte-level delta edges. There is no removal API.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import crypto
from .access import DEFAULT_LATTICE, AccessContext, Lattice, derive_context_key
from .crypto import AeadEnvelope, Digest, KeyPair, SharedSecret, SignatureValue, aead_encrypt, digest, hash_record
from .encoding import Tag, ce, split_fields, split_list, to_int
from .errors import (
    AcyclicityError,
    DeltaCorruptionError,
    EmptyInputError,
    LengthError,
    MissingReferenceError,
    ProvenanceError,
    SignatureDecodeError,
    ValidationError,
)
from .ledger import Chain, anchor_and_seal, verify_anchor
from .merkle import InclusionProof, build_tree, prove_inclusion, verify_inclusion

MAX_FRAGMENT_BYTES = 64 * 1024
MODALITY_KINDS = ("temporal", "deontic", "epistemic")


# -- provenance ---------------------------------------------------------------


def provenance_message(data: bytes, source_id: bytes, observed_at: int) -> Digest:
    return hash_record(Tag.PROVENANCE_MESSAGE, data, source_id, observed_at)


@dataclass(frozen=True)
class Provenance:
    source_id: bytes
    observed_at: int
    signature: SignatureValue
    epoch: int = 0

    @property
    def originator(self) -> bytes:
        return self.signature.signer_public

    def canonical(self) -> bytes:
        return ce(Tag.PROVENANCE, self.source_id, self.observed_at, self.signature.data, self.originator, self.epoch)

    @classmethod
    def from_canonical(cls, raw: bytes) -> "Provenance":
        _, f = split_fields(raw, Tag.PROVENANCE)
        return cls(f[0], to_int(f[1]), SignatureValue(f[2], f[3]), to_int(f[4]))


def make_provenance(data: bytes, source_id: bytes, observed_at: int, originator: KeyPair, epoch: int = 0) -> Provenance:
    sig = crypto.sign(originator.secret_scalar, provenance_message(data, source_id, observed_at))
    return Provenance(source_id, observed_at, sig, epoch)


def verify_provenance(data: bytes, prov: Provenance) -> bool:
    try:
        return crypto.verify(prov.originator, provenance_message(data, prov.source_id, prov.observed_at), prov.signature)
    except SignatureDecodeError:
        return False


@dataclass(frozen=True)
class Modality:
    kind: str
    value: str

    def __post_init__(self):
        if self.kind not in MODALITY_KINDS:
            raise ValidationError(f"modality kind must be one of {MODALITY_KINDS}")

    def canonical(self) -> bytes:
        return ce(Tag.MODALITY, self.kind, self.value)

    @classmethod
    def from_canonical(cls, raw: bytes) -> "Modality":
        _, f = split_fields(raw, Tag.MODALITY)
        return cls(f[0].decode(), f[1].decode())


def payload_digest_for(data: bytes, prov: Provenance, modality: Iterable[Modality] = ()) -> Digest:
    return hash_record(Tag.FRAGMENT_PAYLOAD, data, prov, list(modality))


# -- fragments ----------------------------------------------------------------


@dataclass(frozen=True)
class KnowledgeFragment:
    payload_digest: Digest
    ciphertext: AeadEnvelope
    provenance: Provenance
    level: int
    inclusion: InclusionProof
    anchor_locator: tuple[int, int]
    modality: tuple[Modality, ...] = ()
    contexts: tuple[str, ...] = ()
    anchor_signer: bytes = b""

    @property
    def node_id(self) -> str:
        return self.payload_digest.hex()

    def record_leaf(self) -> bytes:
        """The Merkle leaf: every field except the proof and locator."""
        return ce(
            Tag.FRAGMENT_RECORD,
            self.payload_digest,
            self.ciphertext,
            self.provenance,
            self.level,
            list(self.modality),
            sorted(self.contexts),
            self.anchor_signer,
        )

    def canonical(self) -> bytes:
        height, index = self.anchor_locator
        return ce(Tag.FRAGMENT_RECORD, self.record_leaf(), self.inclusion.to_bytes(), height, index)

    @classmethod
    def from_canonical(cls, raw: bytes) -> "KnowledgeFragment":
        _, outer = split_fields(raw, Tag.FRAGMENT_RECORD)
        _, f = split_fields(outer[0], Tag.FRAGMENT_RECORD)
        return cls(
            payload_digest=Digest(f[0]),
            ciphertext=AeadEnvelope.from_canonical(f[1]),
            provenance=Provenance.from_canonical(f[2]),
            level=to_int(f[3]),
            inclusion=InclusionProof.from_bytes(outer[1]),
            anchor_locator=(to_int(outer[2]), to_int(outer[3])),
            modality=tuple(Modality.from_canonical(m) for m in split_list(f[4])),
            contexts=tuple(c.decode() for c in split_list(f[5])),
            anchor_signer=bytes(f[6]),
        )


def fragment_aad(fragment: KnowledgeFragment) -> bytes:
    return _aad(fragment.payload_digest, fragment.level)


def _aad(payload_digest: bytes, level: int) -> bytes:
    return bytes(payload_digest) + struct.pack(">q", level)


@dataclass(frozen=True)
class FragmentDraft:
    plaintext: bytes
    provenance: Provenance
    level: int
    modality: tuple[Modality, ...] = ()
    contexts: tuple[str, ...] = ()


def verify_fragment(fragment: KnowledgeFragment, chain: Chain, agent_pk: bytes | None = None) -> bool:
    """Inclusion proof against the anchored root, plus the anchor's own checks.

    The anchor signature is checked under ``agent_pk`` when given, else under
    the signer recorded in the (anchored) fragment record.
    """
    pk = agent_pk if agent_pk is not None else fragment.anchor_signer
    try:
        tx = chain.transaction(fragment.anchor_locator)
    except (IndexError, KeyError):
        return False
    leaf = fragment.record_leaf()
    if not verify_inclusion(leaf, fragment.inclusion, tx.merkle_root):
        return False
    return verify_anchor(chain, fragment.anchor_locator, tx.merkle_root, pk, leaf, fragment.inclusion)


# -- delta encoding -----------------------------------------------------------


@dataclass(frozen=True)
class Edit:
    offset: int
    delete_len: int
    insert: bytes


@dataclass(frozen=True)
class Delta:
    parent_digest: Digest
    edits: tuple[Edit, ...] = ()

    def canonical(self) -> bytes:
        return ce(Tag.DELTA, self.parent_digest, [[e.offset, e.delete_len, e.insert] for e in self.edits])

    @classmethod
    def from_canonical(cls, raw: bytes) -> "Delta":
        _, f = split_fields(raw, Tag.DELTA)
        edits = []
        for item in split_list(f[1]):
            off, dl, ins = split_list(item)
            edits.append(Edit(to_int(off), to_int(dl), bytes(ins)))
        return cls(Digest(f[0]), tuple(edits))


def _myers(a: bytes, b: bytes) -> list[str]:
    """Shortest edit script as ``'='``, ``'-'`` and ``'+'`` ops."""
    n, m = len(a), len(b)
    off = n + m + 1
    v = [0] * (2 * off + 1)
    trace = []
    for d in range(n + m + 1):
        trace.append(v[off - d - 1 : off + d + 2])
        for k in range(-d, d + 1, 2):
            if k == -d or (k != d and v[off + k - 1] < v[off + k + 1]):
                x = v[off + k + 1]
            else:
                x = v[off + k - 1] + 1
            y = x - k
            while x < n and y < m and a[x] == b[y]:
                x += 1
                y += 1
            v[off + k] = x
            if x >= n and y >= m:
                return _backtrack(trace, n, m)
    raise AssertionError("unreachable")


def _backtrack(trace: list[list[int]], x: int, y: int) -> list[str]:
    # trace[d] holds the frontier for diagonals -d-1..d+1 before round d
    ops = []
    for d in range(len(trace) - 1, -1, -1):
        v = trace[d]
        k = x - y
        if k == -d or (k != d and v[k - 1 + d + 1] < v[k + 1 + d + 1]):
            pk = k + 1
        else:
            pk = k - 1
        px = v[pk + d + 1]
        py = px - pk
        while x > px and y > py:
            ops.append("=")
            x -= 1
            y -= 1
        if d > 0:
            ops.append("+" if x == px else "-")
        x, y = px, py
    ops.reverse()
    return ops


def diff(parent: bytes, child: bytes) -> Delta:
    """Myers edit script, tie-broken so that edits sit as far left as possible.

    Running the greedy algorithm over the reversed inputs consumes matches from
    the end first, which pushes every ambiguous edit towards offset 0. Among
    minimal scripts the result is the earliest-edit one, with an insertion
    placed before a deletion when both are possible at the same position.
    """
    parent, child = bytes(parent), bytes(child)
    ops = _myers(parent[::-1], child[::-1])[::-1]
    edits = []
    i = j = 0
    k = 0
    while k < len(ops):
        if ops[k] == "=":
            i += 1
            j += 1
            k += 1
            continue
        start, ins_start = i, j
        while k < len(ops) and ops[k] != "=":
            if ops[k] == "-":
                i += 1
            else:
                j += 1
            k += 1
        edits.append(Edit(start, i - start, child[ins_start:j]))
    return Delta(digest(parent), tuple(edits))


def apply(parent: bytes, delta: Delta) -> bytes:
    parent = bytes(parent)
    if digest(parent) != delta.parent_digest:
        raise DeltaCorruptionError("delta was computed against a different parent")
    out = []
    pos = 0
    for e in delta.edits:
        if e.offset < pos or e.delete_len < 0 or e.offset + e.delete_len > len(parent):
            raise DeltaCorruptionError(f"edit at offset {e.offset} is out of range or overlapping")
        out.append(parent[pos : e.offset])
        out.append(e.insert)
        pos = e.offset + e.delete_len
    out.append(parent[pos:])
    return b"".join(out)


# -- the refinement DAG -------------------------------------------------------


@dataclass
class KnowledgeDag:
    nodes: dict[str, KnowledgeFragment] = field(default_factory=dict)
    edges: set[tuple[str, str]] = field(default_factory=set)
    deltas: dict[str, Delta] = field(default_factory=dict)
    parents: dict[str, list[str]] = field(default_factory=dict)

    def add_root(self, fragment: KnowledgeFragment) -> str:
        nid = fragment.node_id
        if nid not in self.nodes:
            self.nodes[nid] = fragment
            self.parents[nid] = []
        return nid

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def require(self, node_id: str) -> KnowledgeFragment:
        if node_id not in self.nodes:
            raise MissingReferenceError(node_id)
        return self.nodes[node_id]

    def canonical(self) -> bytes:
        return ce(
            Tag.SUBGRAPH,
            [self.nodes[n].record_leaf() for n in sorted(self.nodes)],
            [[a, b] for a, b in sorted(self.edges)],
        )

    def digest(self) -> Digest:
        return digest(self.canonical())


ConsistencyGate = Callable[[KnowledgeDag, KnowledgeFragment], None]


def add_refinement(
    dag: KnowledgeDag,
    parent_id: str,
    child: KnowledgeFragment,
    delta: Delta,
    gate: ConsistencyGate | None = None,
) -> str:
    """Append ``child`` under ``parent_id``.

    ``gate`` is the reasoning hook; it raises to veto the child.
    """
    dag.require(parent_id)
    cid = child.node_id
    if cid == parent_id or cid in closure(dag, parent_id):
        raise AcyclicityError(f"edge {parent_id[:12]} -> {cid[:12]} would close a cycle")
    if (parent_id, cid) in dag.edges:
        return cid
    if gate is not None:
        gate(dag, child)
    dag.add_root(child)
    dag.edges.add((parent_id, cid))
    dag.parents[cid].append(parent_id)
    dag.deltas.setdefault(cid, delta)
    return cid


def closure(dag: KnowledgeDag, node_id: str) -> list[str]:
    """The node and all its ancestors, as a sorted list."""
    dag.require(node_id)
    seen = {node_id}
    queue = deque([node_id])
    while queue:
        for p in dag.parents[queue.popleft()]:
            if p not in seen:
                seen.add(p)
                queue.append(p)
    return sorted(seen)


def verified_closure(dag: KnowledgeDag, node_id: str, chain: Chain) -> tuple[list[str], list[str]]:
    """Closure split into (verifiable members, unverifiable nodes)."""
    good, bad = [], []
    for n in closure(dag, node_id):
        (good if verify_fragment(dag.nodes[n], chain) else bad).append(n)
    return good, bad


def lineage_path(dag: KnowledgeDag, node_id: str) -> list[str]:
    """A root-to-node path following first parents."""
    dag.require(node_id)
    path = [node_id]
    while dag.parents[path[-1]]:
        path.append(dag.parents[path[-1]][0])
    return path[::-1]


def lineage_root(dag: KnowledgeDag, path: list[str]) -> Digest:
    return build_tree([dag.require(n).payload_digest for n in path]).root


def _root_paths(dag: KnowledgeDag, node_id: str):
    stack = [(node_id, [node_id])]
    while stack:
        n, acc = stack.pop()
        if not dag.parents[n]:
            yield acc[::-1]
        for p in dag.parents[n]:
            stack.append((p, acc + [p]))


def verify_lineage(dag: KnowledgeDag, node_id: str, root: bytes, chain: Chain) -> bool:
    if node_id not in dag.nodes:
        return False
    for path in _root_paths(dag, node_id):
        if any((a, b) not in dag.edges for a, b in zip(path, path[1:])):
            continue
        if lineage_root(dag, path) != bytes(root):
            continue
        if all(verify_fragment(dag.nodes[n], chain) for n in path):
            return True
    return False


def instance(dag: KnowledgeDag, psi: Iterable[str]) -> KnowledgeDag:
    psi = set(psi)
    if not psi:
        raise ValidationError("instance predicate context must be nonempty")
    keep: set[str] = set()
    for nid, frag in dag.nodes.items():
        if psi & set(frag.contexts):
            keep.update(closure(dag, nid))
    sub = KnowledgeDag()
    for nid in sorted(keep):
        sub.add_root(dag.nodes[nid])
    for a, b in sorted(dag.edges):
        if a in keep and b in keep:
            sub.edges.add((a, b))
            sub.parents[b].append(a)
            if b in dag.deltas:
                sub.deltas[b] = dag.deltas[b]
    return sub


def instance_message(subgraph: KnowledgeDag, psi: Iterable[str], clock: int) -> Digest:
    return hash_record(Tag.INSTANCE_MESSAGE, subgraph.digest(), sorted(set(psi)), clock)


def sign_instance(subgraph: KnowledgeDag, psi: Iterable[str], clock: int, delegator: KeyPair) -> SignatureValue:
    return crypto.sign(delegator.secret_scalar, instance_message(subgraph, psi, clock))


def verify_instance_signature(
    subgraph: KnowledgeDag, psi: Iterable[str], clock: int, sig: SignatureValue, pk: bytes
) -> bool:
    try:
        return crypto.verify(pk, instance_message(subgraph, psi, clock), sig)
    except SignatureDecodeError:
        return False


def grounded(dag: KnowledgeDag, claim: bytes, chain: Chain | None = None) -> bool:
    """Whether ``claim`` is the payload digest of some node in some closure.

    With ``chain`` given, unverifiable fragments do not count.
    """
    claim = bytes(claim)
    for nid in dag.nodes:
        members = closure(dag, nid) if chain is None else verified_closure(dag, nid, chain)[0]
        if any(dag.nodes[m].payload_digest == claim for m in members):
            return True
    return False


# -- the store ----------------------------------------------------------------


_REC_LEN = struct.Struct(">I")


class KnowledgeStore:
    """Append-only record log plus the in-memory DAG rebuilt from it.

    One writer at a time; ``snapshot()`` hands readers an immutable prefix.
    """

    def __init__(self, path: str | Path | None = None, lattice: Lattice = DEFAULT_LATTICE):
        self.path = Path(path) if path is not None else None
        self.lattice = lattice
        self.dag = KnowledgeDag()
        self._log: list[bytes] = []

    @property
    def fragments(self) -> dict[str, KnowledgeFragment]:
        return self.dag.nodes

    def snapshot(self) -> tuple[bytes, ...]:
        return tuple(self._log)

    def to_bytes(self) -> bytes:
        return b"".join(_REC_LEN.pack(len(r)) + r for r in self._log)

    def digest(self) -> Digest:
        return digest(self.to_bytes())

    def _append(self, record: bytes) -> None:
        self._log.append(record)
        if self.path is not None:
            with open(self.path, "ab") as fh:
                fh.write(_REC_LEN.pack(len(record)) + record)

    def _replay(self, record: bytes) -> None:
        tag = record[0]
        if tag == Tag.FRAGMENT_RECORD:
            self.dag.add_root(KnowledgeFragment.from_canonical(record))
        elif tag == Tag.REFINEMENT:
            _, f = split_fields(record, Tag.REFINEMENT)
            parent, child = f[0].decode(), f[1].decode()
            add_refinement(self.dag, parent, self.dag.require(child), Delta.from_canonical(f[2]))
        else:
            raise ValidationError(f"unknown store record tag 0x{tag:02x}")

    @classmethod
    def open(cls, path: str | Path, lattice: Lattice = DEFAULT_LATTICE) -> "KnowledgeStore":
        store = cls(None, lattice)
        p = Path(path)
        raw = p.read_bytes() if p.exists() else b""
        pos = 0
        while pos < len(raw):
            if pos + 4 > len(raw):
                raise LengthError("truncated store record")
            (n,) = _REC_LEN.unpack_from(raw, pos)
            record = raw[pos + 4 : pos + 4 + n]
            if len(record) != n:
                raise LengthError("truncated store record")
            store._log.append(record)
            store._replay(record)
            pos += 4 + n
        store.path = p
        return store

    def add_fragment(self, fragment: KnowledgeFragment) -> str:
        if fragment.node_id in self.dag:
            return fragment.node_id
        self._append(fragment.canonical())
        return self.dag.add_root(fragment)

    def refine(self, parent_id: str, child: KnowledgeFragment, delta: Delta, gate: ConsistencyGate | None = None) -> str:
        self.dag.require(parent_id)
        if child.node_id not in self.dag:
            # validate the edge before anything touches the log
            if child.node_id == parent_id:
                raise AcyclicityError("self-refinement")
            if gate is not None:
                gate(self.dag, child)
            self.add_fragment(child)
            gate = None
        cid = add_refinement(self.dag, parent_id, child, delta, gate)
        self._append(ce(Tag.REFINEMENT, parent_id, cid, delta))
        return cid


def commit_batch(
    store: KnowledgeStore,
    drafts: list[FragmentDraft],
    key_material: SharedSecret,
    chain: Chain,
    *,
    context: AccessContext,
    signer: KeyPair,
    epoch_id: int | None = None,
    timestamp: int | None = None,
) -> list[KnowledgeFragment]:
    """Seal, Merkle-batch and anchor ``drafts``; one anchor per batch."""
    if not drafts:
        raise EmptyInputError("nothing to commit")
    sealed = []
    for d in drafts:
        if len(d.plaintext) > MAX_FRAGMENT_BYTES:
            raise LengthError(f"fragment exceeds {MAX_FRAGMENT_BYTES} bytes; chunk it first")
        store.lattice.check(d.level)
        if not verify_provenance(d.plaintext, d.provenance):
            raise ProvenanceError("provenance signature does not verify over the payload")
        pd = payload_digest_for(d.plaintext, d.provenance, d.modality)
        key = derive_context_key(key_material, context, d.level, store.lattice)
        env = aead_encrypt(key, d.plaintext, _aad(pd, d.level), nonce=pd[: crypto.NONCE_LEN])
        sealed.append((pd, env, d))
    stub = InclusionProof(0, ())
    partial = [
        KnowledgeFragment(pd, env, d.provenance, d.level, stub, (0, 0), tuple(d.modality), tuple(d.contexts), signer.public_point)
        for pd, env, d in sealed
    ]
    tree = build_tree([f.record_leaf() for f in partial])
    if epoch_id is None:
        epoch_id = len(chain.blocks)
    locator = anchor_and_seal(chain, tree.root, epoch_id, signer, b"fragments", timestamp)
    out = []
    for i, f in enumerate(partial):
        frag = KnowledgeFragment(
            f.payload_digest, f.ciphertext, f.provenance, f.level, prove_inclusion(tree, i), locator,
            f.modality, f.contexts, f.anchor_signer,
        )
        store.add_fragment(frag)
        out.append(frag)
    return out


def commit_fragment(
    store: KnowledgeStore,
    plaintext: bytes,
    provenance: Provenance,
    level: int,
    key_material: SharedSecret,
    chain: Chain,
    *,
    context: AccessContext,
    signer: KeyPair,
    modality: Iterable[Modality] = (),
    contexts: Iterable[str] = (),
    timestamp: int | None = None,
) -> KnowledgeFragment:
    draft = FragmentDraft(bytes(plaintext), provenance, level, tuple(modality), tuple(contexts))
    return commit_batch(store, [draft], key_material, chain, context=context, signer=signer, timestamp=timestamp)[0]
