"""A deterministic, single-writer simulated blockchain.

Blocks carry opaque anchor payloads (an OP_RETURN-style field; no scripting)
and a timestamp that must exceed the median of the previous ``median_window``
timestamps. Consensus time is simply the timestamp of a block height.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from . import crypto
from .crypto import Digest, KeyPair, hash_record
from .encoding import Tag, ce, split_fields, split_list, to_int
from .errors import (
    BoundsError,
    EmptyInputError,
    LengthError,
    RevocationError,
    SignatureDecodeError,
    TimeRegressionError,
    ValidationError,
)
from .merkle import InclusionProof, merkle_root, root_from_proof

ANCHOR_TAG = b"\xa1\xa1"
DEFAULT_MEDIAN_WINDOW = 11
ZERO_DIGEST = Digest(bytes(32))
_CHAIN_MAGIC = b"MACHAIN1"


def anchor_message(root: bytes, epoch_id: int) -> Digest:
    return hash_record(Tag.ANCHOR_MESSAGE, root, epoch_id)


@dataclass(frozen=True)
class AnchorTransaction:
    epoch_id: int
    merkle_root: Digest
    signature: bytes
    metadata: bytes = b""
    tag: bytes = ANCHOR_TAG

    def encode(self) -> bytes:
        if len(self.metadata) > 0xFFFF:
            raise LengthError("anchor metadata exceeds 65535 bytes")
        return (
            self.tag
            + struct.pack(">Q", self.epoch_id)
            + self.merkle_root
            + self.signature
            + struct.pack(">H", len(self.metadata))
            + self.metadata
        )

    canonical = encode

    @classmethod
    def decode(cls, raw: bytes) -> "AnchorTransaction":
        if len(raw) < 2 + 8 + 32 + 64 + 2:
            raise LengthError("anchor payload too short")
        if raw[:2] != ANCHOR_TAG:
            raise ValidationError("not a memory anchor (tag mismatch)")
        (epoch,) = struct.unpack_from(">Q", raw, 2)
        root = Digest(raw[10:42])
        sig = raw[42:106]
        (mlen,) = struct.unpack_from(">H", raw, 106)
        if len(raw) != 108 + mlen:
            raise LengthError("anchor metadata length mismatch")
        return cls(epoch, root, sig, raw[108:], raw[:2])

    @property
    def digest(self) -> Digest:
        return hash_record(Tag.TRANSACTION, self.encode())


def _tx_root(txs: tuple[AnchorTransaction, ...]) -> Digest:
    if not txs:
        return ZERO_DIGEST
    return merkle_root([tx.encode() for tx in txs])


def header_hash_for(height: int, prev: bytes, timestamp: int, tx_root: bytes) -> Digest:
    return hash_record(Tag.BLOCK_HEADER, height, prev, timestamp, tx_root)


@dataclass(frozen=True)
class Block:
    height: int
    prev_header_hash: Digest
    timestamp: int
    transactions: tuple[AnchorTransaction, ...]
    header_hash: Digest

    @property
    def tx_merkle_root(self) -> Digest:
        return _tx_root(self.transactions)

    def recompute_header(self) -> Digest:
        return header_hash_for(self.height, self.prev_header_hash, self.timestamp, self.tx_merkle_root)

    def canonical(self) -> bytes:
        return ce(
            Tag.BLOCK,
            self.height,
            self.prev_header_hash,
            self.timestamp,
            [tx.encode() for tx in self.transactions],
            self.header_hash,
        )

    @classmethod
    def from_canonical(cls, raw: bytes) -> "Block":
        _, f = split_fields(raw, Tag.BLOCK)
        if len(f) != 5:
            raise ValidationError("malformed block record")
        txs = tuple(AnchorTransaction.decode(t) for t in split_list(f[3]))
        return cls(to_int(f[0]), Digest(f[1]), to_int(f[2]), txs, Digest(f[4]))


def median_of(timestamps: list[int]) -> int:
    """Upper median (index ``n // 2`` of the sorted list)."""
    s = sorted(timestamps)
    return s[len(s) // 2]


@dataclass
class Chain:
    median_window: int = DEFAULT_MEDIAN_WINDOW
    chain_id: str = "main"
    blocks: list[Block] = field(default_factory=list)
    pending: list[AnchorTransaction] = field(default_factory=list)
    _by_root: dict[bytes, tuple[int, int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.median_window < 1:
            raise ValidationError("median window must be >= 1")
        self.reindex()

    def reindex(self) -> None:
        self._by_root = {}
        for b in self.blocks:
            self._index_block(b)

    def _index_block(self, block: Block) -> None:
        for i, tx in enumerate(block.transactions):
            self._by_root.setdefault(bytes(tx.merkle_root), (block.height, i))

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        if not self.blocks:
            raise BoundsError("chain is empty")
        return self.blocks[-1]

    def median_time_past(self) -> int | None:
        if not self.blocks:
            return None
        return median_of([b.timestamp for b in self.blocks[-self.median_window :]])

    def accepts_timestamp(self, timestamp: int) -> bool:
        mtp = self.median_time_past()
        return mtp is None or timestamp > mtp

    def next_timestamp(self) -> int:
        """Smallest logical tick that is acceptable and not before the tip."""
        if not self.blocks:
            return 0
        return max(self.tip.timestamp + 1, self.median_time_past() + 1)

    def block(self, height: int) -> Block:
        if not 0 <= height < len(self.blocks):
            raise BoundsError(f"height {height} outside chain of length {len(self.blocks)}")
        return self.blocks[height]

    def transaction(self, locator: tuple[int, int]) -> AnchorTransaction:
        height, index = locator
        txs = self.block(height).transactions
        if not 0 <= index < len(txs):
            raise BoundsError(f"no transaction {index} in block {height}")
        return txs[index]

    def find_anchor(self, root: bytes) -> tuple[int, int] | None:
        """Locator of the first anchor of ``root``, if any."""
        return self._by_root.get(bytes(root))

    def verify(self) -> bool:
        """End-to-end structural check: heights, links, headers, median rule."""
        prev = ZERO_DIGEST
        for i, b in enumerate(self.blocks):
            if b.height != i or b.prev_header_hash != prev or b.recompute_header() != b.header_hash:
                return False
            if i:
                window = [x.timestamp for x in self.blocks[max(0, i - self.median_window) : i]]
                if b.timestamp <= median_of(window):
                    return False
            prev = b.header_hash
        return True

    # persistence: magic, then 4-byte length-prefixed CE records
    def to_bytes(self) -> bytes:
        parts = [_CHAIN_MAGIC]
        meta = ce(Tag.CHAIN_META, self.chain_id, self.median_window)
        for rec in [meta] + [b.canonical() for b in self.blocks]:
            parts.append(struct.pack(">I", len(rec)) + rec)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Chain":
        if not raw.startswith(_CHAIN_MAGIC):
            raise ValidationError("not a chain file")
        pos = len(_CHAIN_MAGIC)
        records = []
        while pos < len(raw):
            (n,) = struct.unpack_from(">I", raw, pos)
            records.append(raw[pos + 4 : pos + 4 + n])
            pos += 4 + n
        if not records:
            raise ValidationError("chain file has no metadata record")
        _, meta = split_fields(records[0], Tag.CHAIN_META)
        chain = cls(median_window=to_int(meta[1]), chain_id=meta[0].decode())
        chain.blocks = [Block.from_canonical(r) for r in records[1:]]
        chain.reindex()
        return chain

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Chain":
        return cls.from_bytes(Path(path).read_bytes())


def append_block(chain: Chain, txs: Iterable[AnchorTransaction] = (), timestamp: int | None = None) -> Block:
    """Seal pending plus ``txs`` into a new block.

    Raises TimeRegressionError unless ``timestamp`` is strictly greater than
    the median of the last ``median_window`` timestamps (genesis is exempt).
    """
    if timestamp is None:
        timestamp = chain.next_timestamp()
    if not chain.accepts_timestamp(timestamp):
        raise TimeRegressionError(
            f"timestamp {timestamp} not above median-time-past {chain.median_time_past()}"
        )
    height = len(chain.blocks)
    prev = chain.blocks[-1].header_hash if chain.blocks else ZERO_DIGEST
    all_txs = tuple(chain.pending) + tuple(txs)
    block = Block(height, prev, timestamp, all_txs, header_hash_for(height, prev, timestamp, _tx_root(all_txs)))
    chain.blocks.append(block)
    chain._index_block(block)
    chain.pending.clear()
    return block


def make_anchor(root: bytes, epoch_id: int, signer: KeyPair, metadata: bytes = b"") -> AnchorTransaction:
    sig = crypto.sign(signer.secret_scalar, anchor_message(root, epoch_id))
    return AnchorTransaction(epoch_id, Digest(root), sig.data, bytes(metadata))


def anchor_root(
    chain: Chain,
    root: bytes,
    epoch_id: int,
    signer: KeyPair,
    metadata: bytes = b"",
    key_valid: Callable[[bytes, int], bool] | None = None,
) -> AnchorTransaction:
    """Queue a signed anchor; it lands in the next appended block.

    ``key_valid(pk, consensus_time)`` lets the caller plug in epoch validity
    checks from the rotation ledger.
    """
    if key_valid is not None:
        now = chain.tip.timestamp if chain.blocks else 0
        if not key_valid(signer.public_point, now):
            raise RevocationError("anchoring key is not valid at current consensus time")
    tx = make_anchor(root, epoch_id, signer, metadata)
    chain.pending.append(tx)
    return tx


def anchor_and_seal(
    chain: Chain, root: bytes, epoch_id: int, signer: KeyPair, metadata: bytes = b"", timestamp: int | None = None
) -> tuple[int, int]:
    """Anchor ``root`` and seal it in a fresh block; returns its locator."""
    anchor_root(chain, root, epoch_id, signer, metadata)
    index = len(chain.pending) - 1
    block = append_block(chain, (), timestamp)
    return (block.height, index)


def verify_anchor(
    chain: Chain,
    tx_locator: tuple[int, int],
    expected_root: bytes,
    pk: bytes,
    leaf: bytes | None = None,
    proof: InclusionProof | None = None,
) -> bool:
    """Three-step anchor check.

    1. the signature verifies under ``pk``;
    2. the root recomputed from ``(leaf, proof)`` (when given) equals the
       anchored root;
    3. the anchored root equals ``expected_root``.

    The containing block must also still hash-link into the chain.
    """
    tx = chain.transaction(tx_locator)
    block = chain.block(tx_locator[0])
    if block.recompute_header() != block.header_hash:
        return False
    if tx_locator[0] + 1 < len(chain.blocks) and chain.blocks[tx_locator[0] + 1].prev_header_hash != block.header_hash:
        return False
    if tx.tag != ANCHOR_TAG:
        return False
    try:
        if not crypto.verify(pk, anchor_message(tx.merkle_root, tx.epoch_id), tx.signature):
            return False
    except SignatureDecodeError:
        return False
    if proof is not None and leaf is not None and root_from_proof(leaf, proof) != tx.merkle_root:
        return False
    return tx.merkle_root == bytes(expected_root)


def consensus_time(chain: Chain, height: int) -> int:
    return chain.block(height).timestamp


def aggregate_time(readings: list[tuple[str, int, float]]) -> int:
    """Weighted median across chains.

    Returns the smallest reading ``t`` whose cumulative weight (over readings
    with timestamp <= t) reaches half of the total weight.
    """
    if not readings:
        raise EmptyInputError("no time readings")
    if any(w <= 0 for _, _, w in readings):
        raise ValidationError("weights must be positive")
    total = sum(w for _, _, w in readings)
    acc = 0
    for _, t, w in sorted(readings, key=lambda r: r[1]):
        acc += w
        if 2 * acc >= total:
            return t
    raise AssertionError("unreachable")  # pragma: no cover


class TemporalOp(str, Enum):
    ALWAYS_BEFORE = "always-before"
    SOMETIME_WITHIN = "sometime-within"
    LEADS_TO = "leads-to"


@dataclass(frozen=True)
class TemporalQuery:
    operator: TemporalOp
    phi: str
    psi: str | None = None
    t: int | None = None
    t1: int | None = None
    t2: int | None = None
    delta: int | None = None

    def validate(self) -> None:
        op = TemporalOp(self.operator)
        if op is TemporalOp.ALWAYS_BEFORE and self.t is None:
            raise ValidationError("always-before needs a bound t")
        if op is TemporalOp.SOMETIME_WITHIN:
            if self.t1 is None or self.t2 is None:
                raise ValidationError("sometime-within needs t1 and t2")
            if self.t1 > self.t2:
                raise ValidationError("bounds must satisfy t1 <= t2")
        if op is TemporalOp.LEADS_TO:
            if self.psi is None or self.delta is None:
                raise ValidationError("leads-to needs psi and delta")
            if self.delta < 0:
                raise ValidationError("delta must be non-negative")


def temporal_eval(query: TemporalQuery, timeline: list[tuple[str, int]]) -> bool:
    """Evaluate a temporal operator over ``(proposition, consensus time)`` events."""
    query.validate()
    events = set(timeline)
    op = TemporalOp(query.operator)
    if op is TemporalOp.ALWAYS_BEFORE:
        times = {ts for _, ts in timeline if ts <= query.t}
        return all((query.phi, ts) in events for ts in times)
    if op is TemporalOp.SOMETIME_WITHIN:
        return any(p == query.phi and query.t1 <= ts <= query.t2 for p, ts in timeline)
    psi_times = [ts for p, ts in timeline if p == query.psi]
    return all(
        any(s < u <= s + query.delta for u in psi_times) for p, s in timeline if p == query.phi
    )
