"""secp256k1 keys, deterministic ECDSA, and server-signed training certificates.

Curve arithmetic is done in Jacobian coordinates on plain Python integers.
Signing derives its nonce with the RFC 6979 HMAC-DRBG construction and always
emits low-s signatures, so every signature in a simulation is reproducible.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import NonFiniteMetric
from .hashing import Hash256, double_sha256

if TYPE_CHECKING:
    from .training import TrainingReport

__all__ = [
    "P", "N", "G", "Point", "KeyPair", "Signature", "Certificate",
    "generate_keypair", "sign", "verify", "rfc6979_nonce",
    "canonical_bytes", "serialize_certificate", "deserialize_certificate",
    "certificate_hash", "issue_certificate", "verify_certificate",
    "SIGNED_REGION_SIZE", "CERTIFICATE_SIZE",
]

# secp256k1 domain parameters (SEC 2, section 2.4.1)
P = 2**256 - 2**32 - 977
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
A = 0
B = 7
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
HALF_N = N // 2


@dataclass(frozen=True)
class Point:
    """Affine curve point. Construct through :func:`Point.from_compressed` when
    the input is untrusted; the constructor itself does not check membership."""

    x: int
    y: int

    def on_curve(self) -> bool:
        return (
            0 <= self.x < P
            and 0 <= self.y < P
            and (self.y * self.y - self.x**3 - A * self.x - B) % P == 0
        )

    def compressed(self) -> bytes:
        return bytes([2 + (self.y & 1)]) + self.x.to_bytes(32, "big")

    def hex(self) -> str:
        return self.compressed().hex()

    @classmethod
    def from_compressed(cls, data: bytes) -> "Point | None":
        """Decode a 33-byte SEC1 compressed point; ``None`` if malformed."""
        if len(data) != 33 or data[0] not in (2, 3):
            return None
        x = int.from_bytes(data[1:], "big")
        if x >= P:
            return None
        rhs = (pow(x, 3, P) + A * x + B) % P
        y = pow(rhs, (P + 1) // 4, P)
        if y * y % P != rhs:
            return None
        if (y & 1) != (data[0] & 1):
            y = P - y
        return cls(x, y)

    @classmethod
    def fromhex(cls, text: str) -> "Point | None":
        try:
            raw = bytes.fromhex(text)
        except ValueError:
            return None
        return cls.from_compressed(raw)


G = Point(GX, GY)

# Jacobian arithmetic; (X, Y, Z) with Z == 0 for the point at infinity.
_INF = (0, 1, 0)


def _jdouble(p1):
    x1, y1, z1 = p1
    if z1 == 0 or y1 == 0:
        return _INF
    ysq = y1 * y1 % P
    s = 4 * x1 * ysq % P
    m = 3 * x1 * x1 % P  # a == 0
    x3 = (m * m - 2 * s) % P
    y3 = (m * (s - x3) - 8 * ysq * ysq) % P
    z3 = 2 * y1 * z1 % P
    return (x3, y3, z3)


def _jadd(p1, p2):
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    if z1 == 0:
        return p2
    if z2 == 0:
        return p1
    z1sq = z1 * z1 % P
    z2sq = z2 * z2 % P
    u1 = x1 * z2sq % P
    u2 = x2 * z1sq % P
    s1 = y1 * z2sq * z2 % P
    s2 = y2 * z1sq * z1 % P
    if u1 == u2:
        if s1 != s2:
            return _INF
        return _jdouble(p1)
    h = (u2 - u1) % P
    r = (s2 - s1) % P
    hsq = h * h % P
    hcu = hsq * h % P
    v = u1 * hsq % P
    x3 = (r * r - hcu - 2 * v) % P
    y3 = (r * (v - x3) - s1 * hcu) % P
    z3 = h * z1 * z2 % P
    return (x3, y3, z3)


def _to_affine(p1) -> Point | None:
    x, y, z = p1
    if z == 0:
        return None
    zinv = pow(z, -1, P)
    zinv2 = zinv * zinv % P
    return Point(x * zinv2 % P, y * zinv2 * zinv % P)


def _build_g_table():
    table = []
    cur = (GX, GY, 1)
    for _ in range(256):
        table.append(cur)
        cur = _jdouble(cur)
    return table


_G_TABLE = _build_g_table()


def _mul_g(k: int):
    acc = _INF
    i = 0
    while k:
        if k & 1:
            acc = _jadd(acc, _G_TABLE[i])
        k >>= 1
        i += 1
    return acc


def _mul(point: Point, k: int):
    acc = _INF
    base = (point.x, point.y, 1)
    for bit in bin(k)[2:]:
        acc = _jdouble(acc)
        if bit == "1":
            acc = _jadd(acc, base)
    return acc


def scalar_mult(k: int, point: Point = G) -> Point | None:
    """``k * point``; ``None`` for the point at infinity."""
    k %= N
    if point == G:
        return _to_affine(_mul_g(k))
    return _to_affine(_mul(point, k))


@dataclass(frozen=True)
class KeyPair:
    private_scalar: int
    public_point: Point

    def __post_init__(self):
        if not 1 <= self.private_scalar < N:
            raise ValueError("private scalar out of range")

    @property
    def public_bytes(self) -> bytes:
        return self.public_point.compressed()

    def __repr__(self) -> str:
        return f"KeyPair(public={self.public_point.hex()})"


@dataclass(frozen=True)
class Signature:
    r: int
    s: int

    def to_bytes(self) -> bytes:
        return self.r.to_bytes(32, "big") + self.s.to_bytes(32, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Signature":
        if len(data) != 64:
            raise ValueError("signature must be 64 bytes")
        return cls(int.from_bytes(data[:32], "big"), int.from_bytes(data[32:], "big"))


def generate_keypair(seed: bytes) -> KeyPair:
    """Deterministic key pair from a 32-byte seed.

    The scalar is SHA-256 of the seed, re-hashed until it lands in [1, n-1].
    """
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    digest = hashlib.sha256(seed).digest()
    d = int.from_bytes(digest, "big")
    while not 1 <= d < N:
        digest = hashlib.sha256(digest).digest()
        d = int.from_bytes(digest, "big")
    return KeyPair(d, scalar_mult(d))


def _int2octets(x: int) -> bytes:
    return x.to_bytes(32, "big")


def _bits2int(b: bytes) -> int:
    # qlen == hlen == 256 for secp256k1 with SHA-256, so no truncation shift
    return int.from_bytes(b, "big")


def _rfc6979_candidates(private_scalar: int, digest: bytes):
    """Yield successive RFC 6979 (section 3.2) nonce candidates in [1, n-1]."""
    x = _int2octets(private_scalar)
    h = _int2octets(_bits2int(digest) % N)
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac.new(k, v + b"\x00" + x + h, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    k = hmac.new(k, v + b"\x01" + x + h, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    while True:
        v = hmac.new(k, v, hashlib.sha256).digest()
        candidate = _bits2int(v)
        if 1 <= candidate < N:
            yield candidate
        k = hmac.new(k, v + b"\x00", hashlib.sha256).digest()
        v = hmac.new(k, v, hashlib.sha256).digest()


def rfc6979_nonce(private_scalar: int, digest: bytes) -> int:
    """First RFC 6979 nonce for a 32-byte message digest."""
    return next(_rfc6979_candidates(private_scalar, digest))


def sign(key: KeyPair, message: bytes) -> Signature:
    """ECDSA signature of SHA-256(message), deterministic and low-s."""
    if not message:
        raise ValueError("message must be non-empty")
    digest = hashlib.sha256(message).digest()
    z = _bits2int(digest) % N
    for k in _rfc6979_candidates(key.private_scalar, digest):
        point = scalar_mult(k)
        r = point.x % N
        if r == 0:
            continue
        s = pow(k, -1, N) * (z + r * key.private_scalar) % N
        if s == 0:
            continue
        if s > HALF_N:
            s = N - s
        return Signature(r, s)
    raise AssertionError("unreachable")


def verify(pubkey: Point | bytes, message: bytes, sig: Signature) -> bool:
    """True iff ``sig`` is a valid ECDSA signature of SHA-256(message)."""
    if isinstance(pubkey, (bytes, bytearray)):
        pubkey = Point.from_compressed(bytes(pubkey))
    if pubkey is None or not isinstance(pubkey, Point) or not pubkey.on_curve():
        return False
    r, s = sig.r, sig.s
    if not (1 <= r < N and 1 <= s < N):
        return False
    z = int.from_bytes(hashlib.sha256(message).digest(), "big") % N
    w = pow(s, -1, N)
    u1 = z * w % N
    u2 = r * w % N
    acc = _jadd(_mul_g(u1), _mul(pubkey, u2))
    point = _to_affine(acc)
    if point is None:
        return False
    return point.x % N == r


# --- certificates -----------------------------------------------------------

_SIGNED = struct.Struct(">33sQQddQ16s")
SIGNED_REGION_SIZE = _SIGNED.size  # 89
CERTIFICATE_SIZE = SIGNED_REGION_SIZE + 64


@dataclass(frozen=True)
class Certificate:
    """Proof of useful training issued by the coordination server."""

    miner_pubkey: bytes
    cycle_id: int
    params_trained: int
    loss_before: float
    loss_after: float
    timestamp: int
    cert_nonce: bytes
    server_signature: Signature

    def __post_init__(self):
        if len(self.miner_pubkey) != 33:
            raise ValueError("miner_pubkey must be 33 compressed bytes")
        if len(self.cert_nonce) != 16:
            raise ValueError("cert_nonce must be 16 bytes")


def _signed_region(miner_pubkey, cycle_id, params_trained, loss_before, loss_after,
                   timestamp, cert_nonce) -> bytes:
    return _SIGNED.pack(miner_pubkey, cycle_id, params_trained, loss_before,
                        loss_after, timestamp, cert_nonce)


def canonical_bytes(cert: Certificate) -> bytes:
    """The 89-byte signed region: every field except the signature."""
    return _signed_region(cert.miner_pubkey, cert.cycle_id, cert.params_trained,
                          cert.loss_before, cert.loss_after, cert.timestamp,
                          cert.cert_nonce)


def certificate_hash(cert: Certificate) -> Hash256:
    return double_sha256(canonical_bytes(cert))


def serialize_certificate(cert: Certificate) -> bytes:
    """Signed region followed by the 64-byte ``r || s`` signature."""
    return canonical_bytes(cert) + cert.server_signature.to_bytes()


def deserialize_certificate(data: bytes) -> Certificate:
    if len(data) != CERTIFICATE_SIZE:
        raise ValueError(f"certificate must be {CERTIFICATE_SIZE} bytes, got {len(data)}")
    fields = _SIGNED.unpack(data[:SIGNED_REGION_SIZE])
    return Certificate(*fields, server_signature=Signature.from_bytes(data[SIGNED_REGION_SIZE:]))


def issue_certificate(
    server_key: KeyPair,
    winner_report: "TrainingReport",
    cycle_id: int,
    timestamp: int,
    rng_nonce: bytes,
    *,
    miner_pubkey: bytes,
) -> Certificate:
    """Sign the report's contribution metrics into a certificate.

    The report is expected to carry server-measured losses already; this
    function copies them without re-evaluating anything.
    """
    loss_before = float(winner_report.loss_before)
    loss_after = float(winner_report.loss_after)
    if not (math.isfinite(loss_before) and math.isfinite(loss_after)):
        raise NonFiniteMetric("certificate losses must be finite")
    region = _signed_region(miner_pubkey, cycle_id, winner_report.params_trained,
                            loss_before, loss_after, timestamp, rng_nonce)
    return Certificate(
        miner_pubkey=miner_pubkey,
        cycle_id=cycle_id,
        params_trained=winner_report.params_trained,
        loss_before=loss_before,
        loss_after=loss_after,
        timestamp=timestamp,
        cert_nonce=rng_nonce,
        server_signature=sign(server_key, region),
    )


def verify_certificate(server_pubkey: Point | bytes, cert: Certificate) -> bool:
    # issued signatures are always low-s; a high-s twin is a malleated copy
    if cert.server_signature.s > HALF_N:
        return False
    try:
        region = canonical_bytes(cert)
    except struct.error:
        return False
    return verify(server_pubkey, region, cert.server_signature)
