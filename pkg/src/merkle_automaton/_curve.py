"""Arithmetic in the prime-order subgroup of Curve25519 (twisted Edwards form).

Points are kept in extended coordinates (X, Y, Z, T) with x = X/Z, y = Y/Z,
x*y = T/Z. Encoding follows the usual 32-byte little-endian y with the sign
of x in the top bit. The Montgomery u-coordinate ``(1 + y) / (1 - y)`` is the
value X25519 calls "x".
"""

from __future__ import annotations

from functools import lru_cache

from gmpy2 import invert, mpz

P = mpz(2**255 - 19)
L = 2**252 + 27742317777372353535851937790883648493
D = (-121665 * invert(121666, P)) % P
D2 = (2 * D) % P
SQRT_M1 = pow(2, (P - 1) // 4, P)

Point = tuple[int, int, int, int]

IDENTITY: Point = (mpz(0), mpz(1), mpz(1), mpz(0))


def _inv(x: int) -> int:
    return invert(x, P)


def _recover_x(y: int, sign: int) -> int | None:
    if y >= P:
        return None
    y = mpz(y)
    x2 = (y * y - 1) * _inv(D * y * y + 1) % P
    if x2 == 0:
        return None if sign else 0
    x = pow(x2, (P + 3) // 8, P)
    if (x * x - x2) % P != 0:
        x = x * SQRT_M1 % P
    if (x * x - x2) % P != 0:
        return None
    if (x & 1) != sign:
        x = P - x
    return x


_BY = 4 * _inv(5) % P
_BX = _recover_x(_BY, 0)
BASE: Point = (_BX, _BY, mpz(1), _BX * _BY % P)


def add(p: Point, q: Point) -> Point:
    x1, y1, z1, t1 = p
    x2, y2, z2, t2 = q
    a = (y1 - x1) * (y2 - x2) % P
    b = (y1 + x1) * (y2 + x2) % P
    c = t1 * D2 * t2 % P
    d = 2 * z1 * z2 % P
    e, f, g, h = b - a, d - c, d + c, b + a
    return (e * f % P, g * h % P, f * g % P, e * h % P)


def double(p: Point) -> Point:
    x1, y1, z1, _ = p
    a = x1 * x1 % P
    b = y1 * y1 % P
    c = 2 * z1 * z1 % P
    h = a + b
    e = h - (x1 + y1) * (x1 + y1)
    g = a - b
    f = c + g
    return (e * f % P, g * h % P, f * g % P, e * h % P)


def negate(p: Point) -> Point:
    x, y, z, t = p
    return (-x % P, y, z, -t % P)


def equal(p: Point, q: Point) -> bool:
    x1, y1, z1, _ = p
    x2, y2, z2, _ = q
    return (x1 * z2 - x2 * z1) % P == 0 and (y1 * z2 - y2 * z1) % P == 0


def is_identity(p: Point) -> bool:
    return equal(p, IDENTITY)


def scalar_mult(k: int, p: Point) -> Point:
    """Variable-base multiplication with a fixed 4-bit window."""
    if k == 0:
        return IDENTITY
    table = [IDENTITY, p]
    for _ in range(14):
        table.append(add(table[-1], p))
    acc = IDENTITY
    nibbles = []
    while k:
        nibbles.append(k & 15)
        k >>= 4
    for nib in reversed(nibbles):
        acc = double(double(double(double(acc))))
        if nib:
            acc = add(acc, table[nib])
    return acc


@lru_cache(maxsize=1)
def _base_table() -> list[list[Point]]:
    # rows[i][j] = j * 16^i * BASE
    rows = []
    row_base = BASE
    for _ in range(64):
        row = [IDENTITY, row_base]
        for _ in range(14):
            row.append(add(row[-1], row_base))
        rows.append(row)
        row_base = double(double(double(double(row_base))))
    return rows


def base_mult(k: int) -> Point:
    """Fixed-base multiplication for scalars already reduced mod L."""
    k %= L
    rows = _base_table()
    acc = IDENTITY
    i = 0
    while k:
        nib = k & 15
        if nib:
            acc = add(acc, rows[i][nib])
        k >>= 4
        i += 1
    return acc


def encode(p: Point) -> bytes:
    x, y, z, _ = p
    zi = _inv(z)
    x, y = x * zi % P, y * zi % P
    return int(y | ((x & 1) << 255)).to_bytes(32, "little")


def decode(data: bytes) -> Point | None:
    """Decode a point; ``None`` when the bytes are not a canonical curve point."""
    if len(data) != 32:
        return None
    n = int.from_bytes(data, "little")
    sign = n >> 255
    y = n & ((1 << 255) - 1)
    x = _recover_x(y, sign)
    if x is None:
        return None
    return (x, y, mpz(1), x * y % P)


def montgomery_u(p: Point) -> int:
    _, y, z, _ = p
    return int((z + y) * _inv(z - y) % P)


@lru_cache(maxsize=4096)
def in_prime_subgroup(encoded: bytes) -> bool:
    pt = decode(encoded)
    if pt is None or is_identity(pt):
        return False
    return is_identity(scalar_mult(L, pt))
