"""Lattice-scoped access control.

Privilege levels are plain ordinals ``0..l_max`` in a totally ordered lattice.
Fragments are sealed under a key derived from the holder/agent shared secret,
the request context and exactly one level; a holder cleared to level ``q`` is
issued the credential set ``{0..q}`` (see :func:`levels_for_clearance`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

from .crypto import (
    Digest,
    SharedSecret,
    SymmetricKey,
    aead_decrypt,
    digest,
    hash_record,
    hkdf,
)
from .encoding import Tag, ce
from .errors import (
    AuthenticationError,
    CannotProveError,
    LatticeError,
    MissingReferenceError,
    ValidationError,
    VerificationGateError,
)

if TYPE_CHECKING:
    from .ledger import Chain
    from .memory import KnowledgeFragment

DEFAULT_L_MAX = 5
KEY_LEN = 32


@dataclass(frozen=True)
class Lattice:
    l_max: int = DEFAULT_L_MAX
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.l_max < 0:
            raise LatticeError("l_max must be non-negative")
        if self.names and len(self.names) != self.l_max + 1:
            raise LatticeError("need one name per level")

    def check(self, level: int) -> int:
        if isinstance(level, bool) or not isinstance(level, int) or not 0 <= level <= self.l_max:
            raise LatticeError(f"level {level!r} outside lattice 0..{self.l_max}")
        return level

    def name(self, level: int) -> str:
        self.check(level)
        return self.names[level] if self.names else f"L{level}"

    def level_of(self, name: str) -> int:
        if name in self.names:
            return self.names.index(name)
        if name.startswith("L") and name[1:].isdigit():
            return self.check(int(name[1:]))
        raise LatticeError(f"unknown level name {name!r}")

    @property
    def levels(self) -> range:
        return range(self.l_max + 1)


DEFAULT_LATTICE = Lattice()


def levels_for_clearance(clearance: int, lattice: Lattice = DEFAULT_LATTICE) -> frozenset[int]:
    return frozenset(range(lattice.check(clearance) + 1))


@dataclass(frozen=True)
class AccessContext:
    timestamp: int
    query_fingerprint: Digest
    merkle_root_ref: Digest
    policy_contract_id: bytes

    def canonical(self) -> bytes:
        return ce(
            Tag.ACCESS_CONTEXT,
            self.timestamp,
            self.query_fingerprint,
            self.merkle_root_ref,
            self.policy_contract_id,
        )


def query_fingerprint(query: bytes | str) -> Digest:
    return digest(query.encode() if isinstance(query, str) else bytes(query))


def derive_context_key(
    shared: SharedSecret, context: AccessContext, level: int, lattice: Lattice = DEFAULT_LATTICE
) -> SymmetricKey:
    lattice.check(level)
    info = ce(Tag.KEY_INFO, context, level)
    return SymmetricKey(hkdf(shared.x_bytes, None, info, KEY_LEN))


@dataclass(frozen=True)
class Deny:
    reason: str = "no held level opens this fragment"

    def __bool__(self) -> bool:
        return False


def access_fragment(
    fragment: "KnowledgeFragment",
    shared: SharedSecret,
    holder_levels: Iterable[int],
    context: AccessContext,
    chain: "Chain",
    lattice: Lattice = DEFAULT_LATTICE,
) -> bytes | Deny:
    """Return the plaintext, or :class:`Deny`; unverified fragments raise."""
    from .memory import fragment_aad, verify_fragment

    if not verify_fragment(fragment, chain):
        raise VerificationGateError("fragment does not verify against its anchor")
    for level in sorted(set(holder_levels)):
        lattice.check(level)
        if level != fragment.level:
            continue
        key = derive_context_key(shared, context, level, lattice)
        try:
            return aead_decrypt(key, fragment.ciphertext, fragment_aad(fragment))
        except AuthenticationError:
            return Deny("context or key mismatch")
    return Deny()


@dataclass(frozen=True)
class EnforcementMap:
    node_levels: dict[str, int]
    edge_predicates: dict[tuple[str, str], str] = field(default_factory=dict)
    rules: frozenset[str] = frozenset()

    def __post_init__(self):
        for (a, b), rule in self.edge_predicates.items():
            if a not in self.node_levels or b not in self.node_levels:
                raise MissingReferenceError(f"edge ({a}, {b}) references an unknown node")
            if rule not in self.rules:
                raise ValidationError(f"edge ({a}, {b}) uses unregistered rule {rule!r}")

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.node_levels.items())), tuple(sorted(self.edge_predicates.items())), self.rules))


def check_traversal(emap: EnforcementMap, clearance: int, path: list[str]) -> bool:
    levels = []
    for node in path:
        if node not in emap.node_levels:
            raise MissingReferenceError(node)
        levels.append(emap.node_levels[node])
    return not levels or clearance >= max(levels)


# -- hash-chain level credentials ---------------------------------------------


def hash_iter(value: bytes, n: int) -> Digest:
    """``H^n(value)``; ``value`` must already be a 32-byte digest when ``n`` is 0."""
    out = Digest(value) if n == 0 else bytes(value)
    for _ in range(n):
        out = digest(out)
    return out


@dataclass(frozen=True)
class LevelCredential:
    anchor: Digest
    held_level: int
    credential: Digest
    l_max: int


def issue_credential(seed: bytes, l_max: int, level: int) -> LevelCredential:
    if len(seed) != 32:
        raise ValidationError("credential seed must be 32 bytes")
    Lattice(l_max).check(level)
    return LevelCredential(hash_iter(seed, l_max), level, hash_iter(seed, l_max - level), l_max)


def prove_level(cred: LevelCredential, target: int) -> Digest:
    if target < 0:
        raise LatticeError("target level must be non-negative")
    if target > cred.held_level:
        raise CannotProveError(f"cannot prove level {target} from level {cred.held_level}")
    return hash_iter(cred.credential, cred.held_level - target)


def verify_level(proof: bytes, anchor: bytes, target: int) -> bool:
    if target < 0 or len(proof) != 32:
        return False
    return hash_iter(proof, target) == bytes(anchor)


def hash_scoped_triple(s: bytes, p: bytes, o: bytes, level: int) -> Digest:
    return hash_record(Tag.SCOPED_TRIPLE, s, p, o, level)
