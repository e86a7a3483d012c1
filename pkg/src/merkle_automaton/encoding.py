"""Canonical encoding (CE) shared by every hashed record.

``ce(tag, *fields)`` emits one domain-separation tag byte followed by each
field as a 4-byte big-endian length prefix and the field bytes, in order.
Field values are converted as follows:

* ``bytes``-like values are used verbatim;
* ``str`` is UTF-8;
* ``bool`` is one byte (0 or 1);
* ``int`` is 8-byte big-endian two's complement;
* ``list``/``tuple`` is a 4-byte count followed by each item length-prefixed;
* objects exposing ``canonical() -> bytes`` embed that encoding.

The tag registry below is the single source of truth for tag bytes.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import Any


class Tag(IntEnum):
    TRANSITION = 0x01
    ROOT_CHAIN = 0x02
    SALTED_COMMITMENT = 0x03
    ANCHOR_MESSAGE = 0x04
    BLOCK_HEADER = 0x05
    FRAGMENT_PAYLOAD = 0x06
    PROVENANCE_MESSAGE = 0x07
    KEY_INFO = 0x08
    SCOPED_TRIPLE = 0x09
    PROPOSITION = 0x0A
    REASONING_NODE = 0x0B
    PROOF_SKETCH = 0x0C
    POLICY_EDGE = 0x0D
    POLICY_NODE = 0x0E
    POLICY_VERSION = 0x0F
    DECISION = 0x10
    ROTATION = 0x11
    INSTANCE_MESSAGE = 0x12
    SUBGRAPH = 0x13
    OUTPUT_MESSAGE = 0x14
    ZK_BINDING = 0x15
    ACCESS_CONTEXT = 0x16
    OUTPUT_EVENT = 0x17
    PUBLIC_KEY = 0x18
    TRANSACTION = 0x19
    FRAGMENT_RECORD = 0x1A
    DELEGATION = 0x1B
    REVOCATION = 0x1C
    PROVENANCE = 0x1D
    DELTA = 0x1E
    BLOCK = 0x1F
    MODALITY = 0x20
    TRACE_OUTPUTS = 0x21
    AORG_EXPORT = 0x22
    ROTATION_LEDGER = 0x23
    CHAIN_META = 0x24
    DFA = 0x25
    REFINEMENT = 0x26
    ZK_PROOF = 0x27
    COMBINED_PROOF = 0x28


_LEN = struct.Struct(">I")
_INT = struct.Struct(">q")


def field_bytes(value: Any) -> bytes:
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value)
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        return _INT.pack(value)
    if isinstance(value, (list, tuple)):
        parts = [_LEN.pack(len(value))]
        for item in value:
            raw = field_bytes(item)
            parts.append(_LEN.pack(len(raw)))
            parts.append(raw)
        return b"".join(parts)
    canonical = getattr(value, "canonical", None)
    if canonical is not None:
        return canonical()
    raise TypeError(f"no canonical encoding for {type(value).__name__}")


def ce(tag: Tag | int, *fields: Any) -> bytes:
    parts = [bytes([int(tag)])]
    for f in fields:
        raw = field_bytes(f)
        parts.append(_LEN.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def split_fields(data: bytes, expected_tag: Tag | int | None = None) -> tuple[int, list[bytes]]:
    """Inverse of :func:`ce` at one level: returns the tag and raw field bytes."""
    if not data:
        raise ValueError("empty record")
    tag = data[0]
    if expected_tag is not None and tag != int(expected_tag):
        raise ValueError(f"unexpected tag 0x{tag:02x}, wanted 0x{int(expected_tag):02x}")
    fields = []
    pos = 1
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        (n,) = _LEN.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError("truncated field")
        fields.append(data[pos : pos + n])
        pos += n
    return tag, fields


def split_list(raw: bytes) -> list[bytes]:
    """Inverse of the list encoding in :func:`field_bytes`."""
    if len(raw) < 4:
        raise ValueError("truncated list")
    (count,) = _LEN.unpack_from(raw, 0)
    items = []
    pos = 4
    for _ in range(count):
        if pos + 4 > len(raw):
            raise ValueError("truncated list item")
        (n,) = _LEN.unpack_from(raw, pos)
        pos += 4
        if pos + n > len(raw):
            raise ValueError("truncated list item")
        items.append(raw[pos : pos + n])
        pos += n
    if pos != len(raw):
        raise ValueError("trailing bytes after list")
    return items


def to_int(raw: bytes) -> int:
    return _INT.unpack(raw)[0]
