"""Double SHA-256 digests and Bitcoin-style Merkle roots."""

from __future__ import annotations

import hashlib
from typing import Sequence

from .errors import EmptyTransactionSet

__all__ = ["Hash256", "ZERO_HASH", "double_sha256", "merkle_root", "hash_to_int"]


class Hash256(bytes):
    """A 32-byte digest.

    Behaves like ``bytes`` (comparison, slicing, ``.hex()``) but refuses to be
    constructed with any other length.
    """

    def __new__(cls, value: bytes | bytearray | memoryview = b"\x00" * 32):
        value = bytes(value)
        if len(value) != 32:
            raise ValueError(f"Hash256 needs exactly 32 bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def fromhex(cls, text: str) -> "Hash256":
        return cls(bytes.fromhex(text))

    def __repr__(self) -> str:
        return f"Hash256({self.hex()})"


ZERO_HASH = Hash256(b"\x00" * 32)


def double_sha256(data: bytes) -> Hash256:
    return Hash256(hashlib.sha256(hashlib.sha256(data).digest()).digest())


def hash_to_int(digest: bytes) -> int:
    """Big-endian integer value of a digest, as used for target comparison."""
    return int.from_bytes(digest, "big")


def merkle_root(transactions: Sequence[bytes]) -> Hash256:
    """Root of the binary hash tree over ``transactions``.

    Leaves are the double SHA-256 of each transaction. Levels are built by
    hashing concatenated adjacent pairs; a level with an odd number of nodes
    pairs its last node with itself.
    """
    if len(transactions) == 0:
        raise EmptyTransactionSet("merkle_root needs at least one transaction")
    level = [double_sha256(tx) for tx in transactions]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [double_sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]
