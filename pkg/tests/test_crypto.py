import hashlib
import os

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from hypothesis import given, settings
from hypothesis import strategies as st

from merkle_automaton import _curve
from merkle_automaton.crypto import (
    GROUP_ORDER,
    AeadEnvelope,
    Digest,
    KeyPair,
    SymmetricKey,
    aead_decrypt,
    aead_encrypt,
    digest,
    ecdh,
    hkdf,
    montgomery_u_of,
    sign,
    verify,
)
from merkle_automaton.errors import (
    AuthenticationError,
    LengthError,
    PointValidationError,
    SignatureDecodeError,
)

# RFC 5869 appendix A, test cases 1-3
RFC5869 = [
    (
        bytes([0x0B]) * 22,
        bytes(range(0x0D)),
        bytes(range(0xF0, 0xFA)),
        42,
        "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865",
    ),
    (
        bytes(range(0x50)),
        bytes(range(0x60, 0xB0)),
        bytes(range(0xB0, 0x100)),
        82,
        "b11e398dc80327a1c8e7f78c596a49344f012eda2d4efad8a050cc4c19afa97c"
        "59045a99cac7827271cb41c65e590e09da3275600c2f09b8367793a9aca3db71"
        "cc30c58179ec3e87c14c01d5c1f3434f1d87",
    ),
    (
        bytes([0x0B]) * 22,
        b"",
        b"",
        42,
        "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8",
    ),
]


def test_hash_empty_matches_sha256():
    assert digest(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert digest(b"") == hashlib.sha256(b"").digest()


def test_hash_bit_flip_sweep():
    base = os.urandom(1024)
    seen = {digest(base)}
    buf = bytearray(base)
    for bit in range(len(base) * 8):
        buf[bit // 8] ^= 1 << (bit % 8)
        seen.add(digest(bytes(buf)))
        buf[bit // 8] ^= 1 << (bit % 8)
    assert len(seen) == 8192 + 1


def test_digest_length_enforced():
    with pytest.raises(LengthError):
        Digest(b"short")


@pytest.mark.parametrize("ikm,salt,info,length,okm", RFC5869)
def test_hkdf_rfc5869(ikm, salt, info, length, okm):
    assert hkdf(ikm, salt, info, length).hex() == okm


@given(st.binary(max_size=64), st.binary(max_size=32), st.binary(max_size=32), st.integers(1, 300))
@settings(max_examples=60)
def test_hkdf_matches_library(ikm, salt, info, length):
    ref = HKDF(hashes.SHA256(), length, salt or None, info).derive(ikm)
    assert hkdf(ikm, salt, info, length) == ref


def test_hkdf_info_suffix_changes_output():
    ikm = b"k" * 32
    assert hkdf(ikm, None, b"ctx", 32) != hkdf(ikm, None, b"ctx\x00", 32)
    assert hkdf(ikm, None, b"ctx", 32) == hkdf(ikm, None, b"ctx", 32)


def test_hkdf_length_limit():
    hkdf(b"x", None, b"", 255 * 32)
    with pytest.raises(LengthError):
        hkdf(b"x", None, b"", 255 * 32 + 1)


def test_hkdf_random_pairs_distinct():
    ikm = os.urandom(32)
    outs = {hkdf(ikm, os.urandom(16), os.urandom(16), 32) for _ in range(10_000)}
    assert len(outs) == 10_000


def _clamp(raw: bytes) -> int:
    b = bytearray(raw)
    b[0] &= 248
    b[31] &= 127
    b[31] |= 64
    return int.from_bytes(b, "little")


def test_ecdh_rfc7748_vectors():
    # RFC 7748 section 6.1; X25519 clamps, we reduce the clamped scalar mod n.
    a = _clamp(bytes.fromhex("77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a")) % GROUP_ORDER
    b = _clamp(bytes.fromhex("5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb")) % GROUP_ORDER
    alice, bob = KeyPair.from_scalar(a), KeyPair.from_scalar(b)
    assert montgomery_u_of(alice.public_point).hex() == "8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a"
    assert montgomery_u_of(bob.public_point).hex() == "de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f"
    shared = "4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742"
    assert ecdh(a, bob.public_point).x_bytes.hex() == shared
    assert ecdh(b, alice.public_point).x_bytes.hex() == shared


def test_ecdh_matches_x25519_library():
    for _ in range(20):
        raw = os.urandom(32)
        peer = KeyPair.generate()
        ours = ecdh(_clamp(raw) % GROUP_ORDER, peer.public_point)
        theirs = X25519PrivateKey.from_private_bytes(raw).exchange(
            X25519PublicKey.from_public_bytes(montgomery_u_of(peer.public_point))
        )
        assert ours.x_bytes == theirs


def test_ecdh_commutes():
    for _ in range(25):
        a, b = KeyPair.generate(), KeyPair.generate()
        assert ecdh(a.secret_scalar, b.public_point) == ecdh(b.secret_scalar, a.public_point)


def test_ecdh_identity_scalar_gives_x_of_pk():
    kp = KeyPair.generate()
    assert ecdh(1, kp.public_point).x_bytes == montgomery_u_of(kp.public_point)


def test_ecdh_distinct_peers():
    me = KeyPair.generate()
    secrets_ = {ecdh(me.secret_scalar, KeyPair.generate().public_point).x_bytes for _ in range(3)}
    assert len(secrets_) == 3


def _low_order_points():
    # all points P with 8P = O, found by clearing the prime-order part of random points
    found = set()
    pt = _curve.decode(bytes.fromhex("c7176a703d4dd84fba3c0b760d10670f2a2053fa2c39ccc64ec7fd7792ac037a"))
    assert pt is not None
    low = _curve.scalar_mult(GROUP_ORDER, pt)
    acc = _curve.IDENTITY
    for _ in range(8):
        found.add(_curve.encode(acc))
        acc = _curve.add(acc, low)
    return found


@pytest.mark.parametrize("bad", sorted(_low_order_points()))
def test_ecdh_rejects_low_order_points(bad):
    with pytest.raises(PointValidationError):
        ecdh(5, bad)


def test_ecdh_rejects_mixed_order_and_garbage():
    kp = KeyPair.generate()
    torsion = next(p for p in _low_order_points() if p != _curve.encode(_curve.IDENTITY))
    mixed = _curve.encode(_curve.add(_curve.decode(kp.public_point), _curve.decode(torsion)))
    for bad in (mixed, b"\xff" * 32, b"\x01" * 31):
        with pytest.raises(PointValidationError):
            ecdh(kp.secret_scalar, bad)


def test_keypair_consistency():
    kp = KeyPair.generate()
    assert kp.is_consistent()
    assert not KeyPair(kp.secret_scalar + 1, kp.public_point).is_consistent()
    assert KeyPair.from_seed(b"s") == KeyPair.from_seed(b"s")


@pytest.mark.parametrize("size", [0, 1, 15, 16, 17, 4096])
def test_aead_roundtrip_lengths(size):
    key = SymmetricKey(os.urandom(32))
    msg = os.urandom(size)
    env = aead_encrypt(key, msg, b"aad")
    assert len(env.nonce) == 12 and len(env.auth_tag) == 16
    assert aead_decrypt(key, env, b"aad") == msg


def test_aead_wrong_key_fails():
    key = SymmetricKey(os.urandom(32))
    env = aead_encrypt(key, b"secret", b"")
    with pytest.raises(AuthenticationError):
        aead_decrypt(SymmetricKey(os.urandom(32)), env, b"")


def test_aead_every_aad_byte_flip_fails():
    key = SymmetricKey(os.urandom(32))
    aad = os.urandom(24)
    env = aead_encrypt(key, b"payload", aad)
    for i in range(len(aad)):
        bad = bytearray(aad)
        bad[i] ^= 0x01
        with pytest.raises(AuthenticationError):
            aead_decrypt(key, env, bytes(bad))


def test_aead_nonces_are_counter():
    key = SymmetricKey(bytes(32))
    envs = [aead_encrypt(key, b"m") for _ in range(3)]
    assert [e.nonce for e in envs] == [i.to_bytes(12, "big") for i in range(3)]
    assert AeadEnvelope.from_canonical(envs[1].canonical()) == envs[1]


def test_signature_roundtrip_and_wrong_message():
    kp = KeyPair.generate()
    d = digest(b"message")
    sig = sign(kp.secret_scalar, d)
    assert sig.signer_public == kp.public_point
    assert verify(kp.public_point, d, sig)
    assert not verify(kp.public_point, digest(b"other"), sig)
    assert not verify(KeyPair.generate().public_point, d, sig)


def test_signature_deterministic():
    kp = KeyPair.from_seed(b"det")
    assert sign(kp.secret_scalar, digest(b"m")) == sign(kp.secret_scalar, digest(b"m"))


def test_signature_length_mutations_are_decode_errors():
    kp = KeyPair.generate()
    d = digest(b"m")
    raw = sign(kp.secret_scalar, d).data
    for n in range(len(raw)):
        with pytest.raises(SignatureDecodeError):
            verify(kp.public_point, d, raw[:n])
    with pytest.raises(SignatureDecodeError):
        verify(kp.public_point, d, raw + b"\x00")


def test_signature_unreduced_scalar_is_decode_error():
    kp = KeyPair.generate()
    d = digest(b"m")
    raw = sign(kp.secret_scalar, d).data
    s = int.from_bytes(raw[32:], "little") + GROUP_ORDER
    with pytest.raises(SignatureDecodeError):
        verify(kp.public_point, d, raw[:32] + s.to_bytes(32, "little"))


def test_signature_bit_flips_fail():
    kp = KeyPair.generate()
    d = digest(b"m")
    raw = sign(kp.secret_scalar, d).data
    for i in range(0, 64 * 8, 7):
        bad = bytearray(raw)
        bad[i // 8] ^= 1 << (i % 8)
        try:
            assert not verify(kp.public_point, d, bytes(bad))
        except SignatureDecodeError:
            pass


def test_operations_do_not_mutate_inputs():
    ikm = bytearray(b"ikm")
    hkdf(ikm, None, b"i", 16)
    assert ikm == bytearray(b"ikm")
    kp = KeyPair.generate()
    pk = kp.public_point
    ecdh(kp.secret_scalar, pk)
    assert pk == kp.public_point
