"""
One consensus cycle, step by step
=================================

A coordinator, three honest miners and an empty chain. After the cycle the
published record is enough to recompute the winner.
"""

from pout.config import Behavior
from pout.consensus import Coordinator, CycleConfig, audit_record, run_cycle
from pout.crypto import generate_keypair
from pout.ledger import Chain
from pout.netsim import MinerAgent
from pout.training import ModelSpec, initial_params, make_synthetic_dataset

spec = ModelSpec(6)
train, val = make_synthetic_dataset(4, 300, 6, 0.05)
server = generate_keypair(bytes(31) + b"\x01")
miners = [MinerAgent(i, generate_keypair(bytes(31) + bytes([10 + i])), Behavior.HONEST,
                     budget, spec, server.public_point)
          for i, budget in enumerate([1.0, 1.0, 2.0])]
coordinator = Coordinator(server, spec, train, val, initial_params(spec, 4), seed=4)
chain = Chain(server_pubkey=server.public_point)

result = run_cycle(coordinator, miners, CycleConfig(20, 0.05, 16, reward=50), chain)
print("states:", " -> ".join(s.name for s in coordinator.trace))

record = result.record
for m in record.miners:
    print(f"miner {m.miner_id}: shard [{m.shard_start},{m.shard_end}) volume {m.param_volume:>3}"
          f"  delta {m.loss_delta:.4f}  weight {m.weight:.3f}")
print("lottery seed", record.lottery_seed[:16], "winner", record.winner_id)
print("block", result.block.hash().hex()[:16], "height", result.chain.height)
print("balances", coordinator.balances)
print("audit problems:", audit_record(record, server.public_point, result.block))
