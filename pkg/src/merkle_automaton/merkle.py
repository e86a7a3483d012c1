"""Merkle trees, inclusion proofs, salted commitments and chained roots.

Leaves are hashed as ``H(0x00 || leaf)`` and internal nodes as
``H(0x01 || left || right)``. When a level has an odd number of nodes the last
one is promoted unchanged to the next level, so no leaf is ever duplicated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .crypto import HASH_LEN, Digest, digest, hash_record, random_bytes
from .encoding import Tag
from .errors import BoundsError, EmptyInputError, LengthError

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
SALT_LEN = 32


class Side(IntEnum):
    LEFT = 0
    RIGHT = 1


def leaf_hash(leaf: bytes) -> Digest:
    return digest(LEAF_PREFIX + leaf)


def node_hash(left: bytes, right: bytes) -> Digest:
    return digest(NODE_PREFIX + left + right)


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple[bytes, ...]
    levels: tuple[tuple[Digest, ...], ...]

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    def index_of(self, leaf: bytes) -> int:
        try:
            return self.leaves.index(leaf)
        except ValueError:
            raise BoundsError("leaf not in tree") from None


def build_tree(leaves: list[bytes]) -> MerkleTree:
    if not leaves:
        raise EmptyInputError("a Merkle tree needs at least one leaf")
    level = tuple(leaf_hash(bytes(l)) for l in leaves)
    levels = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = tuple(nxt)
        levels.append(level)
    return MerkleTree(tuple(bytes(l) for l in leaves), tuple(levels))


def merkle_root(leaves: list[bytes]) -> Digest:
    return build_tree(leaves).root


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    siblings: tuple[tuple[Side, Digest], ...] = field(default_factory=tuple)

    def to_bytes(self) -> bytes:
        out = [struct.pack(">QH", self.leaf_index, len(self.siblings))]
        for side, d in self.siblings:
            out.append(bytes([int(side)]) + d)
        return b"".join(out)

    canonical = to_bytes

    @classmethod
    def from_bytes(cls, raw: bytes) -> "InclusionProof":
        if len(raw) < 10:
            raise LengthError("proof too short")
        index, count = struct.unpack_from(">QH", raw, 0)
        if len(raw) != 10 + count * (1 + HASH_LEN):
            raise LengthError("proof length does not match sibling count")
        sibs = []
        pos = 10
        for _ in range(count):
            side = raw[pos]
            if side not in (0, 1):
                raise LengthError(f"bad direction byte {side}")
            sibs.append((Side(side), Digest(raw[pos + 1 : pos + 1 + HASH_LEN])))
            pos += 1 + HASH_LEN
        return cls(index, tuple(sibs))


def prove_inclusion(tree: MerkleTree, index: int) -> InclusionProof:
    if not 0 <= index < tree.leaf_count:
        raise BoundsError(f"leaf index {index} out of range for {tree.leaf_count} leaves")
    sibs = []
    pos = index
    for level in tree.levels[:-1]:
        if pos % 2:
            sibs.append((Side.LEFT, level[pos - 1]))
        elif pos + 1 < len(level):
            sibs.append((Side.RIGHT, level[pos + 1]))
        # else: promoted, no sibling at this level
        pos //= 2
    return InclusionProof(index, tuple(sibs))


def root_from_proof(leaf: bytes, proof: InclusionProof) -> Digest:
    h = leaf_hash(leaf)
    for side, sib in proof.siblings:
        h = node_hash(h, sib) if side == Side.RIGHT else node_hash(sib, h)
    return h


def verify_inclusion(leaf: bytes, proof: InclusionProof, root: bytes) -> bool:
    try:
        return root_from_proof(leaf, proof) == root
    except (TypeError, ValueError):
        return False


# -- salted commitments -----------------------------------------------------


@dataclass(frozen=True)
class SaltedCommitment:
    salt: bytes
    commitment: Digest


def commitment_for(data: bytes, salt: bytes) -> Digest:
    return hash_record(Tag.SALTED_COMMITMENT, data, salt)


def commit_salted(data: bytes, salt: bytes | None = None) -> SaltedCommitment:
    if salt is None:
        salt = random_bytes(SALT_LEN)
    return SaltedCommitment(salt, commitment_for(data, salt))


def open_commitment(commitment: bytes, data: bytes, salt: bytes) -> bool:
    return commitment_for(data, salt) == commitment


# -- root chain -------------------------------------------------------------


def chain_link(prev_root: bytes, delta_root: bytes) -> Digest:
    return hash_record(Tag.ROOT_CHAIN, prev_root, delta_root)


@dataclass(frozen=True)
class RootChain:
    """Forward-chained roots: ``R[n+1] = H(CE(R[n], delta[n+1]))``.

    ``deltas[k]`` is the delta root folded in at epoch ``k``; for the genesis
    entry it is the genesis root itself.
    """

    entries: tuple[tuple[int, Digest], ...]
    deltas: tuple[Digest, ...]

    @classmethod
    def genesis(cls, root: bytes) -> "RootChain":
        return cls(((0, Digest(root)),), (Digest(root),))

    @property
    def head(self) -> Digest:
        return self.entries[-1][1]

    @property
    def epoch(self) -> int:
        return self.entries[-1][0]

    def root_at(self, epoch: int) -> Digest:
        if not 0 <= epoch < len(self.entries):
            raise BoundsError(f"epoch {epoch} not in chain")
        return self.entries[epoch][1]

    def verify(self) -> bool:
        if not self.entries or len(self.entries) != len(self.deltas):
            return False
        if self.entries[0] != (0, self.deltas[0]):
            return False
        for k in range(1, len(self.entries)):
            epoch, root = self.entries[k]
            if epoch != k or root != chain_link(self.entries[k - 1][1], self.deltas[k]):
                return False
        return True


def extend_root_chain(chain: RootChain | None, delta_root: bytes) -> RootChain:
    if chain is None:
        return RootChain.genesis(delta_root)
    epoch, prev = chain.entries[-1]
    entry = (epoch + 1, chain_link(prev, delta_root))
    return RootChain(chain.entries + (entry,), chain.deltas + (Digest(delta_root),))


def replay_root_chain(genesis_root: bytes, deltas: list[bytes]) -> RootChain:
    chain = RootChain.genesis(genesis_root)
    for d in deltas:
        chain = extend_root_chain(chain, d)
    return chain
