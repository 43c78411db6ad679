"""
Blocks, Merkle roots and the nonce-search baseline
==================================================

Build a short nonce-search chain, then break it and watch validation
point at the damaged block.
"""

from pout.hashing import double_sha256, merkle_root
from pout.ledger import (
    Block, BlockHeader, Chain, ProofKind, append_block, pow_mine, target_from_bits,
    validate_chain,
)

print(double_sha256(b"abc").hex())

# %% three transactions; the odd one is paired with itself
txs = [b"alice->bob 5", b"bob->carol 2", b"carol->dave 1"]
print("merkle root", merkle_root(txs).hex())

# %% mine five blocks needing 12 leading zero bits
target = target_from_bits(12)
chain = Chain(target=target)
for height in range(5):
    body = (b"coinbase %d" % height, *txs)
    template = BlockHeader(1, chain.tip_hash(), merkle_root(body), height, ProofKind.POW_NONCE)
    nonce, attempts = pow_mine(template, target, max_attempts=10**6)
    header = BlockHeader(1, template.prev_hash, template.merkle_root, height,
                         ProofKind.POW_NONCE, nonce)
    chain = append_block(chain, Block(header, body))
    print(f"block {height}: nonce {nonce:>6} after {attempts:>6} hashes  {header.hash().hex()[:16]}")

print("valid:", validate_chain(chain, None, target).valid)

# %% rewrite one transaction in block 2
blocks = list(chain.blocks)
blocks[2] = Block(blocks[2].header, (b"coinbase 2", b"alice->mallory 500", *txs[1:]))
failure = validate_chain(blocks, None, target).first_failure()
print(f"tampered: block {failure.index} fails ({failure.detail})")
