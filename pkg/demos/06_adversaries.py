"""
Lazy and falsifying miners
==========================

A lazy miner sends back the shard it was given. A falsifier sends random
weights and claims a perfect loss. The server measures both itself.
"""

from pout.netsim import run_scenario
from pout.config import parse_config_text

config = parse_config_text("""
seed: 11
cycles: 8
miners:
  - {behavior: honest, compute_budget: 1.0}
  - {behavior: lazy, compute_budget: 1.0}
  - {behavior: falsifier, compute_budget: 1.0}
  - {behavior: offline, compute_budget: 1.0}
model: {architecture: two_layer, input_dim: 3, hidden: 4}
dataset: {n_examples: 240, noise_std: 0.05}
cycle: {steps: 20, learning_rate: 0.05, batch_size: 16, reward: 50}
network: {latency_min: 0, latency_max: 2}
pow_baseline: {enabled: false, difficulty_bits: 8, max_attempts: 1000}
output: {dir: out/adversaries}
""")
result = run_scenario(config)

print("cycle  honest  lazy    falsifier(claimed / measured delta)")
for r in result.records:
    honest, lazy, fals, offline = r.miners
    print(f"{r.cycle_id:>5}  {honest.weight:.3f}   {lazy.weight:.3f}   "
          f"{fals.weight:.3f}  ({fals.loss_after_claimed} / {fals.loss_delta:.4f})")
print("wins:", {k: v // config.cycle.reward for k, v in sorted(result.ledger.items())})
