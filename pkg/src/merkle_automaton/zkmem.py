"""Hiding memory-access attestations.

Leaves are salted commitments ``H(CE(d, salt))``, so a verifier checks
membership without seeing ``d`` or the salt. Sibling hashes along the path are
revealed: this is hiding and binding, not a zero-knowledge path proof. A
transcript tag over ``(commitment, root, context)`` stops a proof being
replayed against another root or context.
"""

from __future__ import annotations

from dataclasses import dataclass

from .access import verify_level
from .crypto import Digest, hash_record
from .encoding import Tag, ce, split_fields, to_int
from .errors import BoundsError, ChainLinkError, NotAMemberError
from .merkle import InclusionProof, MerkleTree, RootChain, commitment_for, prove_inclusion, verify_inclusion


def binding_tag(commitment: bytes, root: bytes, context: bytes) -> Digest:
    return hash_record(Tag.ZK_BINDING, commitment, root, context)


@dataclass(frozen=True)
class HidingInclusionProof:
    commitment: Digest
    merkle_path: InclusionProof
    binding_tag: Digest

    def to_bytes(self) -> bytes:
        return ce(Tag.ZK_PROOF, self.commitment, self.merkle_path.to_bytes(), self.binding_tag)

    canonical = to_bytes

    @classmethod
    def from_bytes(cls, raw: bytes) -> "HidingInclusionProof":
        _, f = split_fields(raw, Tag.ZK_PROOF)
        return cls(Digest(f[0]), InclusionProof.from_bytes(f[1]), Digest(f[2]))


def zk_prove_inclusion(data: bytes, salt: bytes, tree: MerkleTree, context: bytes = b"") -> HidingInclusionProof:
    c = commitment_for(data, salt)
    try:
        index = tree.index_of(c)
    except BoundsError:
        raise NotAMemberError("commitment is not a leaf of the tree") from None
    return HidingInclusionProof(c, prove_inclusion(tree, index), binding_tag(c, tree.root, context))


def zk_verify_inclusion(proof: HidingInclusionProof, root: bytes, context: bytes = b"") -> bool:
    if proof.binding_tag != binding_tag(proof.commitment, root, context):
        return False
    return verify_inclusion(proof.commitment, proof.merkle_path, root)


# -- combined proof -----------------------------------------------------------


@dataclass(frozen=True)
class CombinedProof:
    """``Π = (π, level proof)``: membership plus a clearance of at least ``level``."""

    inclusion: HidingInclusionProof
    level: int
    chain_proof: Digest
    anchor: Digest

    def to_bytes(self) -> bytes:
        return ce(Tag.COMBINED_PROOF, self.inclusion.to_bytes(), self.level, self.chain_proof, self.anchor)

    canonical = to_bytes

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CombinedProof":
        _, f = split_fields(raw, Tag.COMBINED_PROOF)
        return cls(HidingInclusionProof.from_bytes(f[0]), to_int(f[1]), Digest(f[2]), Digest(f[3]))


def combine(inclusion: HidingInclusionProof, level: int, level_proof: bytes, anchor: bytes) -> CombinedProof:
    return CombinedProof(inclusion, level, Digest(level_proof), Digest(anchor))


def verify_combined(
    proof: CombinedProof, root: bytes, anchor: bytes, required_level: int, context: bytes = b""
) -> bool:
    """Accept iff ``h ∈ M`` and the level chain reaches ``anchor`` from ``level ≥ required_level``."""
    if proof.anchor != bytes(anchor) or proof.level < required_level:
        return False
    return zk_verify_inclusion(proof.inclusion, root, context) and verify_level(proof.chain_proof, anchor, proof.level)


# -- recursive anchoring ------------------------------------------------------


def extend_proof_epoch(
    proof: HidingInclusionProof, roots: RootChain, t: int, n: int | None = None, context: bytes = b""
) -> bool:
    """Carry a proof made at epoch ``t`` forward to epoch ``n`` (default: head).

    The proof is against the tree folded in at epoch ``t`` (``deltas[t]``,
    the genesis root when ``t`` is 0); the recurrence must then recompute
    every link up to ``n``. Raises ChainLinkError when ``t`` or ``n`` lie
    outside the chain; a link that does not recompute simply fails.
    """
    n = roots.epoch if n is None else n
    if not 0 <= t <= n <= roots.epoch:
        raise ChainLinkError(f"epochs {t}..{n} not covered by a chain ending at {roots.epoch}")
    prefix = RootChain(roots.entries[: n + 1], roots.deltas[: n + 1])
    if not prefix.verify():
        return False
    return zk_verify_inclusion(proof, prefix.deltas[t], context)
