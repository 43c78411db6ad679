"""
Training one shard of a model
=============================

Split a linear model's parameters between three miners. Each miner runs
SGD on its slice only; the server stitches the slices back together.
"""

import numpy as np

from pout.training import (
    ModelSpec, ParameterShard, assemble_model, evaluate_loss, initial_params,
    make_synthetic_dataset, partition_model, sgd_flops, sgd_train, split_evenly,
    synthetic_ground_truth,
)

spec = ModelSpec(input_dim=9)
train, val = make_synthetic_dataset(seed=1, n_examples=600, d=9, noise_std=0.05)
params = initial_params(spec, seed=1)
print("parameters:", spec.parameter_count, " train/val rows:", len(train), len(val))

ranges = partition_model(spec, 3)
rows = split_evenly(len(train), 3)
print("shards", ranges)

for cycle in range(8):
    shards = []
    for i, (shard_range, (lo, hi)) in enumerate(zip(ranges, rows)):
        values, _ = sgd_train(spec, params, shard_range, train.subset(slice(lo, hi)),
                              steps=20, learning_rate=0.05, batch_size=16, seed=100 * cycle + i)
        shards.append(ParameterShard(*shard_range, values))
    params = assemble_model(params, shards)
    print(f"cycle {cycle}: validation loss {evaluate_loss(spec, params, val):.5f}")

# multiply-adds one miner spends per cycle on a 4-wide shard
print("flops per miner per cycle:", sgd_flops(spec, 20, 16, 4))

w_true, b_true = synthetic_ground_truth(seed=1, d=9)
print("largest weight error vs the hidden model:", np.abs(params[:-1] - w_true).max())
print("bias error:", abs(params[-1] - b_true))
