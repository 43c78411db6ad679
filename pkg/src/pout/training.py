"""Desk-scale useful work: sharded SGD on a synthetic regression task.

Parameters live in one flat vector. For a two-layer model with input width
``d`` and hidden width ``h`` the layout is ``[W1 (h*d, row-major), b1 (h),
w2 (h), b2 (1)]``; a linear model is ``[w (d), b (1)]``.

FLOP counts are multiply-adds. A forward pass costs ``P`` per example for
either architecture (every parameter is touched once). The loss adds one
square-accumulate per example. Gradients add ``m`` per example for a linear
model restricted to ``m`` coordinates; the two-layer backward pass is always
full (``P + h`` per example) and then sliced.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceDetected, NonFiniteLoss, OverlappingShards, TooManyMiners

__all__ = [
    "Architecture", "ModelSpec", "Dataset", "ParameterShard", "TrainingReport",
    "make_synthetic_dataset", "synthetic_ground_truth", "initial_params",
    "split_evenly", "partition_model", "predict", "evaluate_loss", "gradient",
    "sgd_train", "assemble_model", "encode_report", "decode_report",
    "forward_flops", "loss_flops", "gradient_flops", "sgd_flops",
]


class Architecture(str, enum.Enum):
    LINEAR = "linear"
    TWO_LAYER = "two_layer"


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    architecture: Architecture = Architecture.LINEAR
    hidden: int = 0

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.architecture is Architecture.TWO_LAYER and self.hidden < 1:
            raise ValueError("two_layer needs hidden >= 1")

    @property
    def parameter_count(self) -> int:
        d, h = self.input_dim, self.hidden
        if self.architecture is Architecture.LINEAR:
            return d + 1
        return d * h + h + h + 1


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.targets, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("features must be (n, d) and targets (n,)")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.targets.shape[0]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.targets[rows])


@dataclass(frozen=True, eq=False)
class ParameterShard:
    range_start: int
    range_end: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if not 0 <= self.range_start < self.range_end:
            raise ValueError("shard range must be non-empty and non-negative")
        if values.shape != (self.range_end - self.range_start,):
            raise ValueError("shard values do not match range length")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.range_end - self.range_start


@dataclass(frozen=True, eq=False)
class TrainingReport:
    miner_id: int
    shard: ParameterShard
    params_trained: int
    loss_before: float
    loss_after: float
    steps_used: int


def synthetic_ground_truth(seed: int, d: int) -> tuple[np.ndarray, float]:
    """Hidden linear weights and bias used by :func:`make_synthetic_dataset`."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    b = float(rng.normal())
    return w, b


def make_synthetic_dataset(seed: int, n_examples: int, d: int,
                           noise_std: float) -> tuple[Dataset, Dataset]:
    """Seeded linear-regression data, shuffled and split 80/20 into
    (train, validation)."""
    if n_examples < 2 or d < 1 or noise_std < 0:
        raise ValueError("need n_examples >= 2, d >= 1, noise_std >= 0")
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    b = float(rng.normal())
    x = rng.normal(size=(n_examples, d))
    noise = rng.normal(0.0, noise_std, size=n_examples) if noise_std > 0 else np.zeros(n_examples)
    y = x @ w + b + noise
    order = rng.permutation(n_examples)
    n_val = max(1, round(0.2 * n_examples))
    train_rows, val_rows = order[: n_examples - n_val], order[n_examples - n_val:]
    return Dataset(x[train_rows], y[train_rows]), Dataset(x[val_rows], y[val_rows])


def initial_params(spec: ModelSpec, seed: int) -> np.ndarray:
    if spec.architecture is Architecture.LINEAR:
        return np.zeros(spec.parameter_count)
    rng = np.random.default_rng(seed)
    return rng.normal(scale=0.5, size=spec.parameter_count)


def split_evenly(total: int, k: int) -> list[tuple[int, int]]:
    """Contiguous half-open ranges covering [0, total); the first
    ``total % k`` ranges are one longer."""
    size, extra = divmod(total, k)
    ranges = []
    start = 0
    for i in range(k):
        end = start + size + (1 if i < extra else 0)
        ranges.append((start, end))
        start = end
    return ranges


def partition_model(spec: ModelSpec, k: int) -> list[tuple[int, int]]:
    total = spec.parameter_count
    if k < 1:
        raise ValueError("need at least one miner")
    if k > total:
        raise TooManyMiners(f"{k} miners for {total} parameters")
    return split_evenly(total, k)


def _unpack(spec: ModelSpec, params: np.ndarray):
    d, h = spec.input_dim, spec.hidden
    w1 = params[: d * h].reshape(h, d)
    b1 = params[d * h: d * h + h]
    w2 = params[d * h + h: d * h + 2 * h]
    b2 = params[-1]
    return w1, b1, w2, b2


def predict(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.parameter_count,):
        raise ValueError(f"expected {spec.parameter_count} parameters, got {params.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.architecture is Architecture.LINEAR:
            return x @ params[:-1] + params[-1]
        w1, b1, w2, b2 = _unpack(spec, params)
        return np.tanh(x @ w1.T + b1) @ w2 + b2


def evaluate_loss(spec: ModelSpec, params: np.ndarray, data: Dataset) -> float:
    """Mean squared error of the model on ``data``."""
    if len(data) == 0:
        raise ValueError("cannot evaluate loss on an empty dataset")
    with np.errstate(over="ignore", invalid="ignore"):
        residual = predict(spec, params, data.features) - data.targets
        loss = float(np.mean(residual * residual))
    if not math.isfinite(loss):
        raise NonFiniteLoss("loss is not finite")
    return loss


def _full_gradient(spec: ModelSpec, params: np.ndarray, batch: Dataset) -> np.ndarray:
    x, y = batch.features, batch.targets
    n = len(batch)
    if spec.architecture is Architecture.LINEAR:
        r = x @ params[:-1] + params[-1] - y
        scale = 2.0 / n
        return np.concatenate([scale * (x.T @ r), [scale * r.sum()]])
    w1, b1, w2, b2 = _unpack(spec, params)
    a = np.tanh(x @ w1.T + b1)
    dpred = 2.0 / n * (a @ w2 + b2 - y)
    g_w2 = a.T @ dpred
    g_b2 = dpred.sum()
    dz = np.outer(dpred, w2) * (1.0 - a * a)
    g_w1 = dz.T @ x
    g_b1 = dz.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]])


def gradient(spec: ModelSpec, params: np.ndarray, batch: Dataset,
             active_range: tuple[int, int]) -> np.ndarray:
    """Partial derivatives of the batch MSE for coordinates in
    ``active_range``; every other coordinate is held fixed."""
    start, end = active_range
    if not 0 <= start < end <= spec.parameter_count:
        raise ValueError(f"active range {active_range} outside [0, {spec.parameter_count})")
    params = np.asarray(params, dtype=np.float64)
    if spec.architecture is Architecture.LINEAR:
        x, y = batch.features, batch.targets
        r = x @ params[:-1] + params[-1] - y
        scale = 2.0 / len(batch)
        d = spec.input_dim
        out = np.empty(end - start)
        w_end = min(end, d)
        if start < w_end:
            out[: w_end - start] = scale * (x[:, start:w_end].T @ r)
        if end > d:
            out[-1] = scale * r.sum()
        return out
    return _full_gradient(spec, params, batch)[start:end]


def sgd_train(spec: ModelSpec, full_params: np.ndarray, shard_range: tuple[int, int],
              train_partition: Dataset, steps: int, learning_rate: float,
              batch_size: int, seed: int) -> tuple[np.ndarray, int]:
    """Minibatch SGD on one shard of the parameter vector.

    Minibatches are drawn without replacement from a generator seeded with
    ``seed``; when ``batch_size`` covers the partition every step is full
    batch. Returns the updated shard values and the number of steps run.
    """
    if steps < 0 or learning_rate < 0 or batch_size < 1:
        raise ValueError("need steps >= 0, learning_rate >= 0, batch_size >= 1")
    start, end = shard_range
    params = np.array(full_params, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = len(train_partition)
    full_batch = batch_size >= n
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            batch = train_partition if full_batch else train_partition.subset(
                np.sort(rng.choice(n, size=batch_size, replace=False)))
            params[start:end] -= learning_rate * gradient(spec, params, batch, shard_range)
            if not np.isfinite(params[start:end]).all():
                raise DivergenceDetected(step + 1)
    return params[start:end].copy(), steps


def assemble_model(base_params: np.ndarray, accepted_shards) -> np.ndarray:
    out = np.array(base_params, dtype=np.float64)
    spans = sorted((s.range_start, s.range_end) for s in accepted_shards)
    for (_, end_a), (start_b, _) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise OverlappingShards(f"shard starting at {start_b} overlaps an earlier one")
    for shard in accepted_shards:
        if shard.range_end > out.shape[0]:
            raise ValueError("shard extends past the parameter vector")
        out[shard.range_start:shard.range_end] = shard.values
    return out


# --- wire encoding ----------------------------------------------------------

_REPORT_HEAD = struct.Struct(">IQQ")
_REPORT_TAIL = struct.Struct(">QddQ")


def encode_report(report: TrainingReport) -> bytes:
    shard = report.shard
    return (_REPORT_HEAD.pack(report.miner_id, shard.range_start, shard.range_end)
            + shard.values.astype(">f8").tobytes()
            + _REPORT_TAIL.pack(report.params_trained, report.loss_before,
                                report.loss_after, report.steps_used))


def decode_report(data: bytes) -> TrainingReport:
    miner_id, start, end = _REPORT_HEAD.unpack_from(data)
    body_end = _REPORT_HEAD.size + 8 * (end - start)
    if len(data) != body_end + _REPORT_TAIL.size:
        raise ValueError("report encoding has the wrong length")
    values = np.frombuffer(data[_REPORT_HEAD.size:body_end], dtype=">f8").astype(np.float64)
    params_trained, loss_before, loss_after, steps_used = _REPORT_TAIL.unpack_from(data, body_end)
    return TrainingReport(miner_id, ParameterShard(start, end, values), params_trained,
                          loss_before, loss_after, steps_used)


# --- FLOP accounting ---------------------------------------------------------

def forward_flops(spec: ModelSpec, n: int) -> int:
    return n * spec.parameter_count


def loss_flops(spec: ModelSpec, n: int) -> int:
    return forward_flops(spec, n) + n


def gradient_flops(spec: ModelSpec, n: int, m: int) -> int:
    if spec.architecture is Architecture.LINEAR:
        return forward_flops(spec, n) + n * m
    return 2 * forward_flops(spec, n) + n * spec.hidden


def sgd_flops(spec: ModelSpec, steps: int, batch_rows: int, m: int) -> int:
    """Gradient plus update cost of ``steps`` SGD steps on an ``m``-wide shard."""
    return steps * (gradient_flops(spec, batch_rows, m) + m)
