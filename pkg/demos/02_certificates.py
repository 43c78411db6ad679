"""
Server keys and training certificates
=====================================

The coordination server signs what it measured. Anyone with the server's
public key can check a certificate; changing a single bit breaks it.
"""

import numpy as np

from pout.crypto import (
    canonical_bytes, certificate_hash, generate_keypair, issue_certificate,
    serialize_certificate, deserialize_certificate, verify_certificate,
)
from pout.training import ParameterShard, TrainingReport

server = generate_keypair(b"server seed".ljust(32, b"\0"))
miner = generate_keypair(b"miner seed".ljust(32, b"\0"))
print("server public key", server.public_point.hex())

report = TrainingReport(miner_id=0, shard=ParameterShard(0, 4, np.zeros(4)),
                        params_trained=4, loss_before=2.31, loss_after=1.87, steps_used=25)
cert = issue_certificate(server, report, cycle_id=7, timestamp=7, rng_nonce=b"\x01" * 16,
                         miner_pubkey=miner.public_bytes)

print(len(canonical_bytes(cert)), "signed bytes,", len(serialize_certificate(cert)), "in total")
print("certificate hash", certificate_hash(cert).hex())
print("verifies:", verify_certificate(server.public_point, cert))
print("verifies under the miner's key:", verify_certificate(miner.public_point, cert))

# flip one bit of the claimed loss
raw = bytearray(serialize_certificate(cert))
raw[60] ^= 0x01
forged = deserialize_certificate(bytes(raw))
print(f"forged loss_after {forged.loss_after!r} verifies:",
      verify_certificate(server.public_point, forged))
