"""
Where the work goes
===================

Count the work spent on the same number of blocks two ways: training
multiply-adds against header hashes.
"""

from pathlib import Path

from pout.config import parse_config
from pout.netsim import compare_usefulness, run_baseline_pow, run_scenario

config = parse_config(Path(__file__).resolve().parent.parent / "configs" / "honest5.yaml")
training = run_scenario(config)
baseline = run_baseline_pow(config)

print(f"training run: {training.metrics.training_flops} flops, {training.metrics.hash_ops} hashes")
print(f"baseline run: {baseline.metrics.training_flops} flops, {baseline.metrics.hash_ops} hashes")
report = compare_usefulness(training.metrics, baseline.metrics)
print(f"useful fraction {report.training_useful_fraction:.5f} vs {report.baseline_useful_fraction:.5f}"
      f" over {report.chain_height} blocks")
