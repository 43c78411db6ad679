import hashlib
import random

import pytest
from hypothesis import given, strategies as st

from pout.errors import EmptyTransactionSet
from pout.hashing import ZERO_HASH, Hash256, double_sha256, merkle_root

# Published FIPS 180-4 / NIST example digests for single SHA-256.
FIPS_SHA256 = {
    b"": "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
    b"abc": "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
    b"a" * 1_000_000: "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0",
}


def fips_double(message: bytes) -> bytes:
    # first application comes from the published vector, not from hashlib
    return hashlib.sha256(bytes.fromhex(FIPS_SHA256[message])).digest()


@pytest.mark.parametrize("message", list(FIPS_SHA256), ids=["empty", "abc", "million-a"])
def test_double_sha256_matches_fips_chain(message):
    assert double_sha256(message) == fips_double(message)


def test_double_sha256_frozen_values():
    assert double_sha256(b"").hex() == (
        "5df6e0e2761359d30a8275058e299fcc0381534545f55cf43e41983f5d4c9456")
    assert double_sha256(b"abc").hex() == (
        "4f8b42c22dd3729b519ba6f68d2da7cc5b2d606d05daed5ad5128cc03e6c6358")


@given(st.binary(max_size=300))
def test_digest_is_always_32_bytes(data):
    digest = double_sha256(data)
    assert isinstance(digest, Hash256) and len(digest) == 32


def test_hash256_rejects_wrong_length():
    with pytest.raises(ValueError):
        Hash256(b"\x00" * 31)
    assert ZERO_HASH == b"\x00" * 32


def _oracle_root(txs):
    level = [hashlib.sha256(hashlib.sha256(t).digest()).digest() for t in txs]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [hashlib.sha256(hashlib.sha256(level[i] + level[i + 1]).digest()).digest()
                 for i in range(0, len(level), 2)]
    return level[0]


def test_merkle_single_leaf():
    assert merkle_root([b"tx0"]) == double_sha256(b"tx0")


def test_merkle_two_leaves():
    leaf0, leaf1 = double_sha256(b"tx0"), double_sha256(b"tx1")
    assert merkle_root([b"tx0", b"tx1"]) == double_sha256(leaf0 + leaf1)


def test_merkle_odd_node_duplicated():
    three = [b"tx0", b"tx1", b"tx2"]
    assert merkle_root(three) == merkle_root(three + [b"tx2"]) == _oracle_root(three)


@given(st.lists(st.binary(max_size=40), min_size=1, max_size=17))
def test_merkle_matches_oracle(txs):
    assert merkle_root(txs) == _oracle_root(txs)


def test_merkle_empty_raises():
    with pytest.raises(EmptyTransactionSet):
        merkle_root([])


def test_merkle_permutation_sensitive():
    rng = random.Random(3)
    for _ in range(500):
        n = rng.randint(2, 9)
        txs = [rng.randbytes(rng.randint(1, 20)) + bytes([i]) for i in range(n)]
        perm = txs[:]
        while perm == txs:
            rng.shuffle(perm)
        assert merkle_root(perm) != merkle_root(txs)
