import hashlib
import math
import random

import numpy as np
import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import decode_dss_signature
from hypothesis import given, settings, strategies as st

from pout.crypto import (
    CERTIFICATE_SIZE, G, HALF_N, N, SIGNED_REGION_SIZE, Certificate, KeyPair, Point, Signature,
    canonical_bytes, deserialize_certificate, generate_keypair, issue_certificate,
    rfc6979_nonce, scalar_mult, serialize_certificate, sign, verify, verify_certificate,
)
from pout.errors import NonFiniteMetric
from pout.training import ParameterShard, TrainingReport

# Widely published deterministic-ECDSA vectors for secp256k1 with SHA-256.
RFC6979_VECTORS = [
    (1, b"Satoshi Nakamoto",
     0x8F8A276C19F4149656B280621E358CCE24F5F52542772691EE69063B74F15D15,
     "934b1ea10a4b3c1757e2b0c017d0b6143ce3c9a7e6a4a49860d7a6ab210ee3d8"
     "2442ce9d2b916064108014783e923ec36b49743e2ffa1c4496f01a512aafd9e5"),
    (1, b"All those moments will be lost in time, like tears in rain. Time to die...",
     0x38AA22D72376B4DBC472E06C3BA403EE0A394DA63FC58D88686C611ABA98D6B3,
     "8600dbd41e348fe5c9465ab92d23e3db8b98b873beecd930736488696438cb6b"
     "547fe64427496db33bf66019dacbf0039c04199abb0122918601db38a72cfc21"),
    (N - 1, b"Satoshi Nakamoto",
     0x33A19B60E25FB6F4435AF53A3D42D493644827367E6453928554F43E49AA6F90, None),
]


def keypair(d: int) -> KeyPair:
    return KeyPair(d, scalar_mult(d))


def oracle_signature(d: int, message: bytes) -> tuple[int, int]:
    key = ec.derive_private_key(d, ec.SECP256K1())
    der = key.sign(message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
    r, s = decode_dss_signature(der)
    return r, min(s, N - s)


def test_generator_on_curve():
    assert G.on_curve()
    assert scalar_mult(N) is None


def test_keypair_deterministic():
    assert generate_keypair(b"\x05" * 32) == generate_keypair(b"\x05" * 32)


def test_keypair_distinct_and_on_curve():
    publics = set()
    for i in range(1000):
        key = generate_keypair(i.to_bytes(32, "big"))
        assert key.public_point.on_curve()
        publics.add(key.public_bytes)
    assert len(publics) == 1000


def test_public_key_matches_oracle():
    for d in (1, 2, 12345, N - 1, 0xDEADBEEF << 100):
        ours = keypair(d).public_bytes
        theirs = ec.derive_private_key(d, ec.SECP256K1()).public_key().public_bytes(
            Encoding.X962, PublicFormat.CompressedPoint)
        assert ours == theirs


def test_compressed_roundtrip():
    key = generate_keypair(b"\x07" * 32)
    assert Point.from_compressed(key.public_bytes) == key.public_point
    assert Point.from_compressed(b"\x05" + b"\x00" * 32) is None
    assert Point.from_compressed(b"\x02" * 10) is None


@pytest.mark.parametrize("d, message, k, sig_hex", RFC6979_VECTORS)
def test_rfc6979_vectors(d, message, k, sig_hex):
    assert rfc6979_nonce(d, hashlib.sha256(message).digest()) == k
    sig = sign(keypair(d), message)
    assert sig.r == scalar_mult(k).x % N
    if sig_hex is not None:
        assert sig.to_bytes().hex() == sig_hex
    assert (sig.r, sig.s) == oracle_signature(d, message)


def test_signatures_match_oracle_on_random_keys():
    rng = random.Random(4)
    for _ in range(50):
        d = rng.randrange(1, N)
        message = rng.randbytes(rng.randint(1, 80))
        sig = sign(keypair(d), message)
        assert (sig.r, sig.s) == oracle_signature(d, message)


def test_sign_is_deterministic_and_low_s():
    key = generate_keypair(b"\x03" * 32)
    for i in range(100):
        message = b"msg-%d" % i
        sig = sign(key, message)
        assert sig == sign(key, message)
        assert sig.s <= HALF_N
        assert verify(key.public_point, message, sig)


def test_sign_rejects_empty_message():
    with pytest.raises(ValueError):
        sign(generate_keypair(b"\x03" * 32), b"")


def test_verify_rejects_out_of_range_and_bad_keys():
    key = generate_keypair(b"\x03" * 32)
    sig = sign(key, b"hello")
    assert not verify(key.public_point, b"hello", Signature(0, sig.s))
    assert not verify(key.public_point, b"hello", Signature(sig.r, N))
    assert not verify(b"\x02" + b"\xff" * 32, b"hello", sig)
    assert verify(key.public_bytes, b"hello", sig)


def test_cross_key_rejection():
    for i in range(100):
        a = generate_keypair(bytes([1, i]) + b"\x00" * 30)
        b = generate_keypair(bytes([2, i]) + b"\x00" * 30)
        message = b"cross-%d" % i
        assert not verify(b.public_point, message, sign(a, message))


def _report(params_trained=3, before=2.0, after=1.0):
    return TrainingReport(0, ParameterShard(0, 3, np.zeros(3)), params_trained, before, after, 5)


def _cert(server, **kw):
    miner = generate_keypair(b"\x0a" * 32)
    return issue_certificate(server, _report(**kw), 4, 4, b"\x01" * 16,
                             miner_pubkey=miner.public_bytes)


def test_signed_region_layout(server_key):
    cert = _cert(server_key)
    region = canonical_bytes(cert)
    assert len(region) == SIGNED_REGION_SIZE == 89
    assert region[:33] == cert.miner_pubkey
    assert region[33:41] == (4).to_bytes(8, "big")
    assert region[73:89] == b"\x01" * 16
    assert len(serialize_certificate(cert)) == CERTIFICATE_SIZE == 153


def test_certificate_verifies_with_server_key_only(server_key, other_key):
    cert = _cert(server_key)
    assert verify_certificate(server_key.public_point, cert)
    assert not verify_certificate(other_key.public_point, cert)


def test_high_s_twin_rejected(server_key):
    cert = _cert(server_key)
    sig = cert.server_signature
    twin = Certificate(**{**cert.__dict__, "server_signature": Signature(sig.r, N - sig.s)})
    assert verify(server_key.public_point, canonical_bytes(twin), twin.server_signature)
    assert not verify_certificate(server_key.public_point, twin)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_losses_refused(server_key, bad):
    with pytest.raises(NonFiniteMetric):
        _cert(server_key, after=bad)


@settings(max_examples=1000, deadline=None)
@given(pub=st.binary(min_size=33, max_size=33), cycle=st.integers(0, 2**64 - 1),
       trained=st.integers(0, 2**64 - 1), before=st.floats(allow_nan=False),
       after=st.floats(allow_nan=False), ts=st.integers(0, 2**64 - 1),
       nonce=st.binary(min_size=16, max_size=16), r=st.integers(0, 2**256 - 1),
       s=st.integers(0, 2**256 - 1))
def test_certificate_roundtrip(pub, cycle, trained, before, after, ts, nonce, r, s):
    cert = Certificate(pub, cycle, trained, before, after, ts, nonce, Signature(r, s))
    assert deserialize_certificate(serialize_certificate(cert)) == cert


def test_every_bit_flip_rejected(server_key):
    raw = serialize_certificate(_cert(server_key))
    rng = random.Random(8)
    for bit in rng.sample(range(len(raw) * 8), 200):
        flipped = bytearray(raw)
        flipped[bit // 8] ^= 1 << (bit % 8)
        assert not verify_certificate(server_key.public_point,
                                      deserialize_certificate(bytes(flipped)))


def test_appended_byte_rejected():
    key = generate_keypair(b"\x04" * 32)
    sig = sign(key, b"block")
    assert not verify(key.public_point, b"block\x00", sig)


def test_distinct_nonces_give_distinct_certificates(server_key):
    miner = generate_keypair(b"\x0a" * 32)
    a = issue_certificate(server_key, _report(), 4, 4, b"\x01" * 16, miner_pubkey=miner.public_bytes)
    b = issue_certificate(server_key, _report(), 4, 4, b"\x02" * 16, miner_pubkey=miner.public_bytes)
    assert canonical_bytes(a) != canonical_bytes(b)
    assert verify_certificate(server_key.public_point, a)
    assert verify_certificate(server_key.public_point, b)
