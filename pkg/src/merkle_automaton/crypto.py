"""Hashing, HKDF, ECDH, AES-256-GCM and Schnorr signatures.

One curve serves every asymmetric operation: the prime-order subgroup of
Curve25519. Secret keys are scalars mod the group order, public keys are
32-byte Edwards encodings, and ECDH returns the Montgomery u-coordinate of the
agreed point (the same value X25519 produces).
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import threading
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import _curve
from .encoding import Tag, ce
from .errors import (
    AuthenticationError,
    LengthError,
    PointValidationError,
    RandomnessError,
    SignatureDecodeError,
)

GROUP_ORDER = _curve.L
HASH_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16
SIGNATURE_LEN = 64


class Digest(bytes):
    """A 32-byte SHA-256 output."""

    def __new__(cls, value: bytes | bytearray | memoryview) -> "Digest":
        value = bytes(value)
        if len(value) != HASH_LEN:
            raise LengthError(f"digest must be {HASH_LEN} bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def fromhex(cls, text: str) -> "Digest":
        return cls(bytes.fromhex(text))

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}...)"


def digest(data: bytes) -> Digest:
    return Digest(hashlib.sha256(data).digest())


def hash_record(tag: Tag, *fields) -> Digest:
    """``hash(CE(record))``, the digest form used for every record type."""
    return digest(ce(tag, *fields))


def random_bytes(n: int) -> bytes:
    try:
        return secrets.token_bytes(n)
    except Exception as exc:  # pragma: no cover - depends on the OS
        raise RandomnessError("system randomness unavailable") from exc


# -- HKDF -------------------------------------------------------------------


def hkdf_extract(salt: bytes | None, ikm: bytes) -> bytes:
    if not salt:
        salt = bytes(HASH_LEN)
    return hmac.new(salt, ikm, hashlib.sha256).digest()


def hkdf_expand(prk: bytes, info: bytes, out_len: int) -> bytes:
    if out_len < 0 or out_len > 255 * HASH_LEN:
        raise LengthError(f"HKDF output length must be in [0, {255 * HASH_LEN}]")
    okm = b""
    block = b""
    counter = 1
    while len(okm) < out_len:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:out_len]


def hkdf(ikm: bytes, salt: bytes | None, info: bytes, out_len: int) -> bytes:
    if out_len < 0 or out_len > 255 * HASH_LEN:
        raise LengthError(f"HKDF output length must be in [0, {255 * HASH_LEN}]")
    return hkdf_expand(hkdf_extract(salt, ikm), info, out_len)


# -- keys and ECDH ----------------------------------------------------------


def _check_scalar(k: int) -> int:
    if not isinstance(k, int) or not 0 < k < GROUP_ORDER:
        raise ValueError("secret scalar must lie in [1, n)")
    return k


def public_from_secret(sk: int) -> bytes:
    return _curve.encode(_curve.base_mult(_check_scalar(sk)))


@dataclass(frozen=True)
class KeyPair:
    secret_scalar: int
    public_point: bytes

    @classmethod
    def from_scalar(cls, sk: int) -> "KeyPair":
        return cls(sk, public_from_secret(sk))

    @classmethod
    def generate(cls) -> "KeyPair":
        sk = 0
        while sk == 0:
            sk = int.from_bytes(random_bytes(64), "little") % GROUP_ORDER
        return cls.from_scalar(sk)

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        """Deterministic keypair; used for reproducible workspaces and fixtures."""
        sk = int.from_bytes(hashlib.sha512(b"keypair-seed" + seed).digest(), "little") % GROUP_ORDER
        return cls.from_scalar(sk or 1)

    def is_consistent(self) -> bool:
        return public_from_secret(self.secret_scalar) == self.public_point

    def __repr__(self) -> str:
        return f"KeyPair(public_point={self.public_point.hex()})"


@dataclass(frozen=True)
class SharedSecret:
    x_bytes: bytes

    def __repr__(self) -> str:
        return "SharedSecret(<redacted>)"


def validate_point(pk: bytes) -> None:
    if not isinstance(pk, (bytes, bytearray)) or not _curve.in_prime_subgroup(bytes(pk)):
        raise PointValidationError("public key is not a valid prime-order group element")


def ecdh(sk: int, pk: bytes) -> SharedSecret:
    """Shared secret ``x(sk * pk)`` as 32 little-endian bytes."""
    _check_scalar(sk)
    validate_point(pk)
    point = _curve.scalar_mult(sk, _curve.decode(bytes(pk)))
    return SharedSecret(_curve.montgomery_u(point).to_bytes(32, "little"))


def montgomery_u_of(pk: bytes) -> bytes:
    """u-coordinate of a public key, for interop with X25519 tooling."""
    validate_point(pk)
    return _curve.montgomery_u(_curve.decode(bytes(pk))).to_bytes(32, "little")


# -- AEAD -------------------------------------------------------------------


class SymmetricKey:
    """A 32-byte AES-256-GCM key plus its message counter.

    Nonces are the 12-byte big-endian counter value, so a key never reuses one.
    The counter is the only mutable state in this module and is guarded by a
    lock.
    """

    __slots__ = ("key", "_counter", "_lock")

    def __init__(self, key: bytes, counter: int = 0):
        if len(key) != 32:
            raise LengthError("symmetric key must be 32 bytes")
        self.key = bytes(key)
        self._counter = counter
        self._lock = threading.Lock()

    def next_nonce(self) -> bytes:
        with self._lock:
            n = self._counter
            self._counter += 1
        if n >= 1 << (8 * NONCE_LEN):
            raise LengthError("nonce space exhausted for this key")
        return n.to_bytes(NONCE_LEN, "big")

    @property
    def counter(self) -> int:
        return self._counter

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SymmetricKey) and hmac.compare_digest(self.key, other.key)

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return "SymmetricKey(<redacted>)"


@dataclass(frozen=True)
class AeadEnvelope:
    nonce: bytes
    ciphertext: bytes
    auth_tag: bytes

    def canonical(self) -> bytes:
        return self.nonce + self.auth_tag + self.ciphertext

    @classmethod
    def from_canonical(cls, raw: bytes) -> "AeadEnvelope":
        if len(raw) < NONCE_LEN + TAG_LEN:
            raise LengthError("envelope too short")
        return cls(raw[:NONCE_LEN], raw[NONCE_LEN + TAG_LEN :], raw[NONCE_LEN : NONCE_LEN + TAG_LEN])


def aead_encrypt(key: SymmetricKey, plaintext: bytes, aad: bytes = b"", nonce: bytes | None = None) -> AeadEnvelope:
    """Seal ``plaintext``; ``nonce`` overrides the key's counter.

    An explicit nonce must never repeat under one key for different plaintexts;
    callers deriving it from a digest of the plaintext satisfy that.
    """
    if nonce is None:
        nonce = key.next_nonce()
    elif len(nonce) != NONCE_LEN:
        raise LengthError(f"nonce must be {NONCE_LEN} bytes")
    out = AESGCM(key.key).encrypt(nonce, plaintext, aad)
    return AeadEnvelope(nonce, out[:-TAG_LEN], out[-TAG_LEN:])


def aead_decrypt(key: SymmetricKey, env: AeadEnvelope, aad: bytes = b"") -> bytes:
    if len(env.nonce) != NONCE_LEN or len(env.auth_tag) != TAG_LEN:
        raise AuthenticationError("malformed envelope")
    try:
        return AESGCM(key.key).decrypt(env.nonce, env.ciphertext + env.auth_tag, aad)
    except InvalidTag:
        raise AuthenticationError("authentication failed") from None


# -- Schnorr signatures -----------------------------------------------------


@dataclass(frozen=True)
class SignatureValue:
    data: bytes
    signer_public: bytes

    def canonical(self) -> bytes:
        return self.data


def _hash_to_scalar(*parts: bytes) -> int:
    return int.from_bytes(hashlib.sha512(b"".join(parts)).digest(), "little") % GROUP_ORDER


def sign(sk: int, msg_digest: bytes) -> SignatureValue:
    _check_scalar(sk)
    pk = public_from_secret(sk)
    sk_bytes = sk.to_bytes(32, "little")
    r = _hash_to_scalar(b"schnorr-nonce", sk_bytes, msg_digest) or 1
    big_r = _curve.encode(_curve.base_mult(r))
    e = _hash_to_scalar(big_r, pk, msg_digest)
    s = (r + e * sk) % GROUP_ORDER
    return SignatureValue(big_r + s.to_bytes(32, "little"), pk)


def decode_signature(sig: bytes) -> tuple[tuple, int]:
    if len(sig) != SIGNATURE_LEN:
        raise SignatureDecodeError(f"signature must be {SIGNATURE_LEN} bytes, got {len(sig)}")
    big_r = _curve.decode(sig[:32])
    if big_r is None:
        raise SignatureDecodeError("nonce commitment is not a curve point")
    s = int.from_bytes(sig[32:], "little")
    if s >= GROUP_ORDER:
        raise SignatureDecodeError("response scalar not reduced")
    return big_r, s


def verify(pk: bytes, msg_digest: bytes, sig: SignatureValue | bytes) -> bool:
    raw = sig.data if isinstance(sig, SignatureValue) else bytes(sig)
    big_r, s = decode_signature(raw)
    if not isinstance(pk, (bytes, bytearray)) or not _curve.in_prime_subgroup(bytes(pk)):
        return False
    e = _hash_to_scalar(raw[:32], bytes(pk), msg_digest)
    lhs = _curve.base_mult(s)
    rhs = _curve.add(big_r, _curve.scalar_mult(e, _curve.decode(bytes(pk))))
    return _curve.equal(lhs, rhs)


def verify_quiet(pk: bytes, msg_digest: bytes, sig: SignatureValue | bytes) -> bool:
    """``verify`` that treats undecodable signatures as plain failures."""
    try:
        return verify(pk, msg_digest, sig)
    except SignatureDecodeError:
        return False


def key_id(pk: bytes) -> Digest:
    return hash_record(Tag.PUBLIC_KEY, pk)
