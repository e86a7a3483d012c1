"""Decision audit logs and identity continuity.

Decisions are committed as ``T_i = (d_i, H(s_i), H(I_i), H(G_i), τ_i)`` plus
delegation entries, folded into a Merkle tree whose root is anchored. An
identity's key history is a signed rotation trail held in a Merkle tree that
also carries its revocation entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from . import crypto
from .crypto import Digest, KeyPair, SignatureValue, digest, hash_record, key_id
from .encoding import Tag, ce, split_fields, split_list, to_int
from .errors import (
    BoundsError,
    DelegationError,
    MissingReferenceError,
    RevocationError,
    ValidationError,
)
from .ledger import Chain, anchor_and_seal, verify_anchor
from .memory import KnowledgeDag, KnowledgeFragment, closure, payload_digest_for, verify_fragment, verify_provenance
from .merkle import InclusionProof, build_tree, prove_inclusion, verify_inclusion

DEFAULT_HORIZON = 10**6


# -- decisions ----------------------------------------------------------------


def delegation_message(decision: bytes, sub_decision: bytes) -> Digest:
    return hash_record(Tag.DELEGATION, decision, sub_decision)


@dataclass(frozen=True)
class Delegation:
    delegate: bytes
    sub_decision: Digest
    signature: SignatureValue

    def verify(self, decision: bytes) -> bool:
        if self.signature.signer_public != self.delegate:
            return False
        return crypto.verify_quiet(self.delegate, delegation_message(decision, self.sub_decision), self.signature)

    def canonical(self) -> bytes:
        return ce(Tag.DELEGATION, self.delegate, self.sub_decision, self.signature.data)

    @classmethod
    def from_canonical(cls, raw: bytes) -> "Delegation":
        _, f = split_fields(raw, Tag.DELEGATION)
        return cls(bytes(f[0]), Digest(f[1]), SignatureValue(bytes(f[2]), bytes(f[0])))


def delegate(decision: bytes, sub_decision: bytes, delegate_kp: KeyPair) -> Delegation:
    """The delegate's signed acknowledgement of a sub-decision."""
    sig = crypto.sign(delegate_kp.secret_scalar, delegation_message(decision, sub_decision))
    return Delegation(delegate_kp.public_point, Digest(sub_decision), sig)


@dataclass(frozen=True)
class DecisionRecord:
    decision: bytes
    state_digest: Digest
    input_digest: Digest
    graph_digest: Digest
    committed_at: int
    delegations: tuple[Delegation, ...] = ()
    fragment_refs: tuple[str, ...] = ()

    def canonical(self) -> bytes:
        return ce(
            Tag.DECISION,
            self.decision,
            self.state_digest,
            self.input_digest,
            self.graph_digest,
            self.committed_at,
            list(self.delegations),
            list(self.fragment_refs),
        )

    @classmethod
    def from_canonical(cls, raw: bytes) -> "DecisionRecord":
        _, f = split_fields(raw, Tag.DECISION)
        return cls(
            bytes(f[0]),
            Digest(f[1]),
            Digest(f[2]),
            Digest(f[3]),
            to_int(f[4]),
            tuple(Delegation.from_canonical(d) for d in split_list(f[5])),
            tuple(r.decode() for r in split_list(f[6])),
        )

    @property
    def record_digest(self) -> Digest:
        return digest(self.canonical())


def decision_graph(dag: KnowledgeDag, refs: Iterable[str]) -> KnowledgeDag:
    """The subgraph ``G`` a decision read: the union of each reference's closure."""
    keep: set[str] = set()
    for r in refs:
        keep.update(closure(dag, r))
    sub = KnowledgeDag()
    for nid in sorted(keep):
        sub.add_root(dag.nodes[nid])
    for a, b in sorted(dag.edges):
        if a in keep and b in keep:
            sub.edges.add((a, b))
            sub.parents[b].append(a)
    return sub


def graph_digest_for(dag: KnowledgeDag | None, refs: Iterable[str] = ()) -> Digest:
    refs = list(refs)
    if not refs:
        return KnowledgeDag().digest()
    if dag is None:
        raise ValidationError("fragment references need a knowledge graph")
    return decision_graph(dag, refs).digest()


@dataclass
class DecisionLog:
    """Append-only decision records with a running Merkle root.

    With ``anchor_every`` set, :func:`record_decision` anchors the root on the
    given chain after every that many records.
    """

    records: list[DecisionRecord] = field(default_factory=list)
    anchor_every: int | None = None
    anchors: list[tuple[int, tuple[int, int]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def root(self) -> Digest:
        return decision_root(self.records)

    def anchor(self, chain: Chain, signer: KeyPair, timestamp: int | None = None) -> tuple[int, int]:
        loc = anchor_and_seal(chain, self.root(), len(self.records), signer, b"decisions", timestamp)
        self.anchors.append((len(self.records), loc))
        return loc

    def canonical(self) -> bytes:
        return ce(Tag.DECISION, list(self.records), [[n, h, i] for n, (h, i) in self.anchors])

    @classmethod
    def from_canonical(cls, raw: bytes, anchor_every: int | None = None) -> "DecisionLog":
        _, f = split_fields(raw, Tag.DECISION)
        records = [DecisionRecord.from_canonical(r) for r in split_list(f[0])]
        anchors = []
        for item in split_list(f[1]):
            n, h, i = (to_int(x) for x in split_list(item))
            anchors.append((n, (h, i)))
        return cls(records, anchor_every, anchors)


def decision_root(records: Sequence[DecisionRecord]) -> Digest:
    if not records:
        raise ValidationError("empty decision log has no root")
    return build_tree([r.record_digest for r in records]).root


def record_decision(
    log: DecisionLog,
    d: bytes,
    state_digest: bytes,
    input_digest: bytes,
    graph_digest: bytes,
    clock: int,
    delegations: Iterable[Delegation] = (),
    *,
    fragment_refs: Iterable[str] = (),
    chain: Chain | None = None,
    signer: KeyPair | None = None,
) -> DecisionRecord:
    for name, value in (("state", state_digest), ("input", input_digest), ("graph", graph_digest)):
        if len(value) != 32:
            raise ValidationError(f"{name} digest must be 32 bytes")
    delegations = tuple(delegations)
    for dg in delegations:
        if not dg.verify(bytes(d)):
            raise DelegationError(f"delegation by {key_id(dg.delegate).hex()[:12]} does not verify")
    rec = DecisionRecord(
        bytes(d),
        Digest(state_digest),
        Digest(input_digest),
        Digest(graph_digest),
        clock,
        delegations,
        tuple(fragment_refs),
    )
    log.records.append(rec)
    if log.anchor_every and chain is not None and signer is not None and len(log) % log.anchor_every == 0:
        log.anchor(chain, signer)
    return rec


# replay_hook(state, input, graph_digest) -> (decision, next_state)
ReplayHook = Callable[[bytes, bytes, bytes], tuple[bytes, bytes]]


@dataclass(frozen=True)
class DecisionVerdict:
    """Per-condition outcome of a decision-chain audit.

    ``determinism`` only says that replaying the supplied hook reproduced every
    decision; it cannot show the original code was deterministic.
    """

    state_replay: bool
    access: bool
    determinism: bool
    anchored: bool
    failures: tuple[tuple[int, str], ...] = ()

    @property
    def valid(self) -> bool:
        return self.state_replay and self.access and self.determinism and self.anchored

    @property
    def liable_party(self) -> str | None:
        """``"operator"`` once any condition fails: liability transfers to the operating entity."""
        return None if self.valid else "operator"

    def __bool__(self) -> bool:
        return self.valid


def verify_decision_chain(
    records: Sequence[DecisionRecord],
    anchored_root: bytes,
    replay_hook: ReplayHook,
    *,
    initial_state: bytes,
    inputs: Sequence[bytes],
    chain: Chain,
    knowledge: KnowledgeDag | None = None,
    operator_pk: bytes | None = None,
) -> DecisionVerdict:
    """Audit a decision log.

    1. each ``H(s_i)`` matches the state reached by replaying the hook from
       ``initial_state`` (and each ``H(I_i)`` matches ``inputs[i]``);
    2. each record's referenced fragments verify and rebuild ``H(G_i)``;
    3. replaying the hook reproduces each ``d_i``;
    plus the Merkle root over all records equals ``anchored_root``, which is
    anchored on ``chain`` (under ``operator_pk`` when given).
    """
    failures: list[tuple[int, str]] = []
    state = bytes(initial_state)
    if len(inputs) != len(records):
        failures.append((-1, "state_replay"))
    for i, rec in enumerate(records):
        if i >= len(inputs):
            break
        if digest(state) != rec.state_digest or digest(inputs[i]) != rec.input_digest:
            failures.append((i, "state_replay"))
        if not rec.fragment_refs:
            ok_access = rec.graph_digest == KnowledgeDag().digest()
        elif knowledge is None or any(r not in knowledge for r in rec.fragment_refs):
            ok_access = False
        else:
            g = decision_graph(knowledge, rec.fragment_refs)
            ok_access = g.digest() == rec.graph_digest and all(verify_fragment(f, chain) for f in g.nodes.values())
        if not ok_access:
            failures.append((i, "access"))
        if any(not dg.verify(rec.decision) for dg in rec.delegations):
            failures.append((i, "access"))
        d, state = replay_hook(state, inputs[i], rec.graph_digest)
        if bytes(d) != rec.decision:
            failures.append((i, "determinism"))

    anchored = bool(records) and decision_root(records) == bytes(anchored_root)
    if anchored:
        loc = chain.find_anchor(anchored_root)
        anchored = loc is not None and (operator_pk is None or verify_anchor(chain, loc, anchored_root, operator_pk))
    if not anchored:
        failures.append((-1, "anchored"))
    kinds = {k for _, k in failures}
    return DecisionVerdict(
        "state_replay" not in kinds,
        "access" not in kinds,
        "determinism" not in kinds,
        anchored,
        tuple(failures),
    )


# -- causal trails ------------------------------------------------------------

ROLES = ("premise", "inference-step", "conditional-branch", "delegation")


@dataclass(frozen=True)
class CausalTrail:
    k: int
    entries: tuple[tuple[int, str], ...]

    def indices(self) -> list[int]:
        return [j for j, _ in self.entries]


DependencyMap = Mapping[int, Iterable[tuple[int, str]]]


def build_causal_trail(records: Sequence[DecisionRecord], k: int, dependencies: DependencyMap) -> CausalTrail:
    """The prior records that reproducing ``d_k`` transitively reads.

    ``dependencies[j]`` lists ``(i, role)`` for every record ``i`` that
    decision ``j`` read directly. The trail is exactly the dependency closure,
    so dropping any entry leaves some read unresolved.
    """
    if not 0 <= k < len(records):
        raise BoundsError(f"decision {k} outside log of {len(records)}")
    roles: dict[int, str] = {}
    stack = [k]
    while stack:
        j = stack.pop()
        for i, role in dependencies.get(j, ()):
            if role not in ROLES:
                raise ValidationError(f"unregistered role {role!r}")
            if not 0 <= i < j:
                raise ValidationError(f"record {j} cannot depend on record {i}")
            if i not in roles:
                roles[i] = role
                stack.append(i)
    return CausalTrail(k, tuple(sorted(roles.items())))


def trail_sufficient(trail: CausalTrail, dependencies: DependencyMap, entries: Iterable[int] | None = None) -> bool:
    """Whether ``entries`` (default: the whole trail) resolve every read needed to replay ``d_k``."""
    have = set(trail.indices() if entries is None else entries)
    for j in have | {trail.k}:
        if any(i not in have for i, _ in dependencies.get(j, ())):
            return False
    return True


# -- key rotation -------------------------------------------------------------


def rotation_message(prev_pk: bytes, new_pk: bytes, rotated_at: int) -> Digest:
    return hash_record(Tag.ROTATION, prev_pk, new_pk, rotated_at)


@dataclass(frozen=True)
class RotationCertificate:
    epoch: int
    prev_pk: bytes
    new_pk: bytes
    rotated_at: int
    cert_sig: SignatureValue
    horizon: int = DEFAULT_HORIZON

    def signature_ok(self) -> bool:
        msg = rotation_message(self.prev_pk, self.new_pk, self.rotated_at)
        return crypto.verify_quiet(self.new_pk, msg, self.cert_sig)

    def canonical(self) -> bytes:
        return ce(Tag.ROTATION, self.epoch, self.prev_pk, self.new_pk, self.rotated_at, self.cert_sig.data, self.horizon)

    @classmethod
    def from_canonical(cls, raw: bytes) -> "RotationCertificate":
        _, f = split_fields(raw, Tag.ROTATION)
        return cls(to_int(f[0]), bytes(f[1]), bytes(f[2]), to_int(f[3]), SignatureValue(bytes(f[4]), bytes(f[2])), to_int(f[5]))

    @property
    def cert_digest(self) -> Digest:
        return digest(self.canonical())


def revocation_leaf(kid: bytes, revoked_at: int) -> Digest:
    return hash_record(Tag.REVOCATION, kid, revoked_at)


@dataclass
class RotationLedger:
    """One identity's key history.

    Epoch 0 is the genesis key, valid from ``created_at`` for
    ``genesis_horizon`` seconds. The tree ``M_U`` has the certificate digests
    followed by the revocation entries as leaves.
    """

    identity: str
    genesis_pk: bytes
    created_at: int = 0
    genesis_horizon: int = DEFAULT_HORIZON
    certificates: list[RotationCertificate] = field(default_factory=list)
    revocations: list[tuple[Digest, int]] = field(default_factory=list)
    anchor_locator: tuple[int, int] | None = None
    anchor_signer: bytes = b""

    @property
    def epoch(self) -> int:
        return len(self.certificates)

    @property
    def current_pk(self) -> bytes:
        return self.certificates[-1].new_pk if self.certificates else self.genesis_pk

    def key_at(self, epoch: int) -> bytes:
        if not 0 <= epoch <= self.epoch:
            raise MissingReferenceError(f"identity {self.identity} has no epoch {epoch}")
        return self.genesis_pk if epoch == 0 else self.certificates[epoch - 1].new_pk

    def epoch_of(self, pk: bytes) -> int:
        for e in range(self.epoch + 1):
            if self.key_at(e) == bytes(pk):
                return e
        raise MissingReferenceError("key is not part of this identity")

    def window(self, epoch: int) -> tuple[int, int]:
        self.key_at(epoch)
        if epoch == 0:
            return self.created_at, self.created_at + self.genesis_horizon
        c = self.certificates[epoch - 1]
        return c.rotated_at, c.rotated_at + c.horizon

    def revoked_at(self, pk: bytes) -> int | None:
        kid = key_id(pk)
        times = [t for k, t in self.revocations if k == kid]
        return min(times) if times else None

    def leaves(self) -> list[bytes]:
        return [c.cert_digest for c in self.certificates] + [revocation_leaf(k, t) for k, t in self.revocations]

    def root(self) -> Digest:
        return build_tree(self.leaves()).root if self.leaves() else hash_record(Tag.ROTATION_LEDGER, self.genesis_pk)

    def inclusion(self, epoch: int) -> InclusionProof:
        """Proof that certificate ``epoch`` (1-based) is in ``M_U``."""
        if not 1 <= epoch <= self.epoch:
            raise MissingReferenceError(f"no certificate for epoch {epoch}")
        return prove_inclusion(build_tree(self.leaves()), epoch - 1)

    def anchor(self, chain: Chain, signer: KeyPair, timestamp: int | None = None) -> tuple[int, int]:
        self.anchor_locator = anchor_and_seal(chain, self.root(), self.epoch, signer, b"rotation", timestamp)
        self.anchor_signer = signer.public_point
        return self.anchor_locator

    def anchored(self, chain: Chain) -> bool:
        if self.anchor_locator is None:
            return False
        try:
            return verify_anchor(chain, self.anchor_locator, self.root(), self.anchor_signer)
        except (IndexError, KeyError):
            return False

    def canonical(self) -> bytes:
        height, index = self.anchor_locator if self.anchor_locator is not None else (-1, -1)
        return ce(
            Tag.ROTATION_LEDGER,
            self.identity,
            self.genesis_pk,
            self.created_at,
            self.genesis_horizon,
            list(self.certificates),
            [[k, t] for k, t in self.revocations],
            height,
            index,
            self.anchor_signer,
        )

    @classmethod
    def from_canonical(cls, raw: bytes) -> "RotationLedger":
        _, f = split_fields(raw, Tag.ROTATION_LEDGER)
        revs = []
        for item in split_list(f[5]):
            k, t = split_list(item)
            revs.append((Digest(k), to_int(t)))
        height, index = to_int(f[6]), to_int(f[7])
        return cls(
            f[0].decode(),
            bytes(f[1]),
            to_int(f[2]),
            to_int(f[3]),
            [RotationCertificate.from_canonical(c) for c in split_list(f[4])],
            revs,
            None if height < 0 else (height, index),
            bytes(f[8]),
        )


def rotate_key(
    ledger: RotationLedger,
    identity: KeyPair,
    new_kp: KeyPair,
    clock: int,
    horizon: int = DEFAULT_HORIZON,
    *,
    chain: Chain | None = None,
    timestamp: int | None = None,
) -> RotationCertificate:
    """Append a rotation from ``identity`` (the current key) to ``new_kp``.

    The certificate is signed by the new key. With ``chain`` given the
    extended tree is re-anchored under the new key.
    """
    if identity.public_point != ledger.current_pk:
        raise ValidationError("rotating key is not the identity's current key")
    revoked = ledger.revoked_at(identity.public_point)
    if revoked is not None and revoked <= clock:
        raise RevocationError(f"epoch {ledger.epoch} key was revoked at {revoked}")
    if ledger.certificates and clock < ledger.certificates[-1].rotated_at:
        raise ValidationError("rotation time precedes the previous rotation")
    if horizon < 0:
        raise ValidationError("deprecation horizon must be non-negative")
    sig = crypto.sign(new_kp.secret_scalar, rotation_message(identity.public_point, new_kp.public_point, clock))
    cert = RotationCertificate(ledger.epoch + 1, identity.public_point, new_kp.public_point, clock, sig, horizon)
    ledger.certificates.append(cert)
    if chain is not None:
        ledger.anchor(chain, new_kp, timestamp)
    return cert


def revoke(
    ledger: RotationLedger,
    pk: bytes,
    revoked_at: int,
    *,
    chain: Chain | None = None,
    signer: KeyPair | None = None,
    timestamp: int | None = None,
) -> None:
    """Append a revocation entry; entries are never removed."""
    ledger.epoch_of(pk)
    ledger.revocations.append((key_id(pk), revoked_at))
    if chain is not None and signer is not None:
        ledger.anchor(chain, signer, timestamp)


def verify_rotation_chain(
    certs: Sequence[RotationCertificate],
    pk_0: bytes,
    root: bytes | None = None,
    proofs: Sequence[InclusionProof] | None = None,
) -> bool:
    """Signed, unbroken trail from ``pk_0``; with ``root``, each cert must also prove into it."""
    prev = bytes(pk_0)
    last_t = None
    for i, c in enumerate(certs, start=1):
        if c.epoch != i or c.prev_pk != prev or c.cert_sig.signer_public != c.new_pk:
            return False
        if last_t is not None and c.rotated_at < last_t:
            return False
        if not c.signature_ok():
            return False
        prev, last_t = c.new_pk, c.rotated_at
    if root is not None:
        if proofs is None or len(proofs) != len(certs):
            return False
        return all(verify_inclusion(c.cert_digest, p, root) for c, p in zip(certs, proofs))
    return True


def verify_ledger(ledger: RotationLedger, chain: Chain) -> bool:
    """Rotation trail plus ``M_U`` inclusion of every certificate against the anchored root."""
    if not ledger.anchored(chain):
        return False
    proofs = [ledger.inclusion(e) for e in range(1, ledger.epoch + 1)]
    return verify_rotation_chain(ledger.certificates, ledger.genesis_pk, ledger.root(), proofs)


def epoch_status(ledger: RotationLedger, pk: bytes, use_time: int) -> str:
    """``valid``, ``historical`` (past its horizon, still fine for old signatures),
    ``revoked`` or ``premature``."""
    start, end = ledger.window(ledger.epoch_of(pk))
    revoked = ledger.revoked_at(pk)
    if revoked is not None and revoked < use_time:
        return "revoked"
    if use_time < start:
        return "premature"
    if use_time > end:
        return "historical"
    return "valid"


def check_epoch_validity(ledger: RotationLedger, pk: bytes, use_time: int) -> bool:
    return epoch_status(ledger, pk, use_time) == "valid"


def verify_fragment_provenance(
    fragment: KnowledgeFragment, plaintext: bytes, ledger: RotationLedger, chain: Chain
) -> bool:
    """Authorship traceable to the identity's root key.

    1. the provenance signature verifies under the key of the claimed epoch;
    2. the rotation trail up to that epoch verifies, with ``M_U`` inclusion
       against the anchored ledger root;
    3. the fragment's inclusion proof passes against its anchor.

    A signature dated outside its epoch's window, or after that key's
    revocation, is rejected.
    """
    prov = fragment.provenance
    try:
        pk = ledger.key_at(prov.epoch)
    except MissingReferenceError:
        return False
    if prov.originator != pk or not verify_provenance(plaintext, prov):
        return False
    if payload_digest_for(plaintext, prov, fragment.modality) != fragment.payload_digest:
        return False
    # the key must have been live when the observation was signed
    if epoch_status(ledger, pk, prov.observed_at) != "valid":
        return False
    if not ledger.anchored(chain):
        return False
    certs = ledger.certificates[: prov.epoch]
    proofs = [ledger.inclusion(e) for e in range(1, prov.epoch + 1)]
    if not verify_rotation_chain(certs, ledger.genesis_pk, ledger.root(), proofs):
        return False
    return verify_fragment(fragment, chain)
