"""Blocks, chain validation, and the nonce-search baseline.

Header byte layout (117 bytes, big-endian throughout)::

    offset  size  field
         0     4  version
         4    32  prev_hash
        36    32  merkle_root
        68     8  timestamp (logical cycle index)
        76     1  proof_kind (0 = PoW nonce, 1 = training certificate)
        77     8  nonce (0 for certificate blocks)
        85    32  certificate_hash (all zero for PoW blocks)
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

from .crypto import (
    CERTIFICATE_SIZE, Certificate, Point, certificate_hash, deserialize_certificate,
    serialize_certificate, verify_certificate,
)
from .errors import LinkageMismatch, MerkleMismatch, ProofInvalid, TargetUnreachable
from .hashing import ZERO_HASH, Hash256, double_sha256, hash_to_int, merkle_root

__all__ = [
    "BLOCK_VERSION", "HEADER_SIZE", "MAX_TARGET", "ProofKind", "BlockHeader", "Block",
    "Chain", "BlockCheck", "ValidationReport", "target_from_bits", "check_block",
    "validate_block", "append_block", "validate_chain", "pow_mine", "pow_verify",
    "serialize_block", "deserialize_block",
]

BLOCK_VERSION = 1
MAX_TARGET = 2**256 - 1

_HEADER = struct.Struct(">I32s32sQBQ32s")
HEADER_SIZE = _HEADER.size  # 117
_NONCE_OFFSET = 77


class ProofKind(enum.IntEnum):
    POW_NONCE = 0
    TRAINING_CERTIFICATE = 1


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_hash: Hash256
    merkle_root: Hash256
    timestamp: int
    proof_kind: ProofKind
    nonce: int = 0
    certificate_hash: Hash256 = ZERO_HASH

    def serialize(self) -> bytes:
        return _HEADER.pack(self.version, self.prev_hash, self.merkle_root, self.timestamp,
                            int(self.proof_kind), self.nonce, self.certificate_hash)

    @classmethod
    def deserialize(cls, data: bytes) -> "BlockHeader":
        if len(data) != HEADER_SIZE:
            raise ValueError(f"header must be {HEADER_SIZE} bytes, got {len(data)}")
        version, prev, root, ts, kind, nonce, cert = _HEADER.unpack(data)
        return cls(version, Hash256(prev), Hash256(root), ts, ProofKind(kind), nonce, Hash256(cert))

    def hash(self) -> Hash256:
        return double_sha256(self.serialize())


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[bytes, ...]
    certificate: Certificate | None = None

    def hash(self) -> Hash256:
        return self.header.hash()


def serialize_block(block: Block) -> bytes:
    """Header, a certificate flag byte (+ 153-byte certificate), then a
    4-byte transaction count and length-prefixed transactions."""
    parts = [block.header.serialize()]
    if block.certificate is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + serialize_certificate(block.certificate))
    parts.append(len(block.transactions).to_bytes(4, "big"))
    for tx in block.transactions:
        parts.append(len(tx).to_bytes(4, "big") + tx)
    return b"".join(parts)


def deserialize_block(data: bytes) -> Block:
    header = BlockHeader.deserialize(data[:HEADER_SIZE])
    pos = HEADER_SIZE
    cert = None
    flag = data[pos]
    pos += 1
    if flag == 1:
        cert = deserialize_certificate(data[pos:pos + CERTIFICATE_SIZE])
        pos += CERTIFICATE_SIZE
    elif flag != 0:
        raise ValueError("bad certificate flag")
    count = int.from_bytes(data[pos:pos + 4], "big")
    pos += 4
    txs = []
    for _ in range(count):
        length = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        txs.append(data[pos:pos + length])
        pos += length
    if pos != len(data):
        raise ValueError("trailing or missing block bytes")
    return Block(header, tuple(txs), cert)


@dataclass(frozen=True)
class Chain:
    """Immutable sequence of blocks plus the consensus parameters that blocks
    appended through :func:`append_block` are checked against."""

    blocks: tuple[Block, ...] = ()
    server_pubkey: Point | None = None
    target: int = MAX_TARGET

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def height(self) -> int:
        return len(self.blocks)

    def tip_hash(self) -> Hash256:
        return self.blocks[-1].hash() if self.blocks else ZERO_HASH


def target_from_bits(difficulty_bits: int) -> int:
    """Target requiring ``difficulty_bits`` leading zero bits."""
    if not 0 <= difficulty_bits <= 255:
        raise ValueError("difficulty_bits must be in [0, 255]")
    return MAX_TARGET if difficulty_bits == 0 else 2 ** (256 - difficulty_bits)


def pow_verify(header: BlockHeader, target: int) -> bool:
    return hash_to_int(header.hash()) < target


def pow_mine(header_template: BlockHeader, target: int, max_attempts: int) -> tuple[int, int]:
    """Search nonces upward from the template's nonce.

    Returns ``(nonce, attempts_used)`` where every header hash counts as one
    attempt, including the successful one.
    """
    if header_template.proof_kind != ProofKind.POW_NONCE:
        raise ValueError("pow_mine needs a PoW header")
    raw = header_template.serialize()
    prefix = hashlib.sha256(raw[:_NONCE_OFFSET])
    suffix = raw[_NONCE_OFFSET + 8:]
    nonce = header_template.nonce
    for attempt in range(1, max_attempts + 1):
        inner = prefix.copy()
        inner.update(nonce.to_bytes(8, "big"))
        inner.update(suffix)
        if int.from_bytes(hashlib.sha256(inner.digest()).digest(), "big") < target:
            return nonce, attempt
        nonce = (nonce + 1) % 2**64
    raise TargetUnreachable(max_attempts)


@dataclass(frozen=True)
class BlockCheck:
    index: int
    block_hash: str
    linkage_ok: bool
    merkle_ok: bool
    proof_ok: bool
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.linkage_ok and self.merkle_ok and self.proof_ok


@dataclass
class ValidationReport:
    entries: list[BlockCheck] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return all(e.ok for e in self.entries)

    def first_failure(self) -> BlockCheck | None:
        return next((e for e in self.entries if not e.ok), None)


def _proof_problem(block: Block, server_pubkey: Point | None, target: int) -> str:
    """Empty string if the block's consensus proof holds, else a reason."""
    h = block.header
    if h.version != BLOCK_VERSION:
        return f"unknown version {h.version}"
    if h.proof_kind == ProofKind.POW_NONCE:
        if block.certificate is not None or h.certificate_hash != ZERO_HASH:
            return "PoW block carries certificate data"
        if not pow_verify(h, target):
            return "header hash not below target"
        return ""
    if h.proof_kind == ProofKind.TRAINING_CERTIFICATE:
        cert = block.certificate
        if cert is None:
            return "certificate missing"
        if h.nonce != 0:
            return "certificate block with non-zero nonce"
        if certificate_hash(cert) != h.certificate_hash:
            return "certificate hash does not match header"
        if cert.timestamp != h.timestamp:
            return "certificate timestamp does not match header"
        if server_pubkey is None or not verify_certificate(server_pubkey, cert):
            return "certificate signature invalid"
        return ""
    return f"unknown proof kind {h.proof_kind}"


def check_block(prev: Block | None, block: Block, index: int,
                server_pubkey: Point | None, target: int) -> BlockCheck:
    expected_prev = prev.hash() if prev is not None else ZERO_HASH
    linkage_ok = block.header.prev_hash == expected_prev
    try:
        merkle_ok = merkle_root(block.transactions) == block.header.merkle_root
    except ValueError:
        merkle_ok = False
    problem = _proof_problem(block, server_pubkey, target)
    details = []
    if not linkage_ok:
        details.append("prev_hash does not link to predecessor")
    if not merkle_ok:
        details.append("merkle root mismatch")
    if problem:
        details.append(problem)
    return BlockCheck(index, block.hash().hex(), linkage_ok, merkle_ok, not problem, "; ".join(details))


def validate_block(chain: Chain, block: Block) -> None:
    """Raise the matching :class:`BlockRejected` subclass if ``block`` cannot
    extend ``chain``."""
    prev = chain.blocks[-1] if chain.blocks else None
    check = check_block(prev, block, chain.height, chain.server_pubkey, chain.target)
    if not check.linkage_ok:
        raise LinkageMismatch(check.detail)
    if not check.merkle_ok:
        raise MerkleMismatch(check.detail)
    if not check.proof_ok:
        raise ProofInvalid(check.detail)


def append_block(chain: Chain, block: Block) -> Chain:
    validate_block(chain, block)
    return replace(chain, blocks=chain.blocks + (block,))


def validate_chain(chain: Chain | Sequence[Block], server_pubkey: Point | None,
                   target: int = MAX_TARGET) -> ValidationReport:
    """Re-check every block with the caller's own trust anchors.

    Failures are reported per block, never raised.
    """
    blocks = chain.blocks if isinstance(chain, Chain) else tuple(chain)
    report = ValidationReport()
    prev = None
    for i, block in enumerate(blocks):
        report.entries.append(check_block(prev, block, i, server_pubkey, target))
        prev = block
    return report
