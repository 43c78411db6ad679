import numpy as np
import pytest
from hypothesis import given, strategies as st

from pout.errors import DivergenceDetected, NonFiniteLoss, OverlappingShards, TooManyMiners
from pout.training import (
    Dataset, ModelSpec, ParameterShard, TrainingReport, assemble_model, decode_report,
    encode_report, evaluate_loss, gradient, gradient_flops, initial_params, loss_flops,
    make_synthetic_dataset, partition_model, sgd_flops, sgd_train,
)


def fd_gradient(spec, params, data, active, h=1e-6):
    out = np.empty(active[1] - active[0])
    for j, i in enumerate(range(*active)):
        plus, minus = params.copy(), params.copy()
        plus[i] += h
        minus[i] -= h
        out[j] = (evaluate_loss(spec, plus, data) - evaluate_loss(spec, minus, data)) / (2 * h)
    return out


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def random_case(rng, architecture):
    d = int(rng.integers(1, 6))
    spec = ModelSpec(d, architecture, int(rng.integers(1, 5)) if architecture == "two_layer" else 0)
    n = int(rng.integers(1, 12))
    data = Dataset(rng.normal(size=(n, d)), rng.normal(size=n))
    params = rng.normal(size=spec.parameter_count)
    p = spec.parameter_count
    start = int(rng.integers(0, p))
    end = int(rng.integers(start + 1, p + 1))
    return spec, params, data, (start, end)


def gradient_check_errors(cases=100, seed=0):
    """Worst relative error for each architecture over ``cases`` random configurations."""
    rng = np.random.default_rng(seed)
    worst = {}
    for architecture in ("linear", "two_layer"):
        errors = []
        for _ in range(cases):
            spec, params, data, active = random_case(rng, architecture)
            errors.append(relative_error(gradient(spec, params, data, active),
                                         fd_gradient(spec, params, data, active)))
        worst[architecture] = max(errors)
    return worst


def test_gradient_matches_finite_differences():
    worst = gradient_check_errors()
    assert worst["linear"] <= 1e-5 and worst["two_layer"] <= 1e-5


def test_bias_gradient_formula():
    spec = ModelSpec(2)
    rng = np.random.default_rng(1)
    data = Dataset(rng.normal(size=(7, 2)), rng.normal(size=7))
    params = rng.normal(size=3)
    residual = data.features @ params[:2] + params[2] - data.targets
    assert gradient(spec, params, data, (2, 3))[0] == pytest.approx(2 * residual.mean(), rel=1e-12)


def test_parameter_counts():
    assert ModelSpec(9).parameter_count == 10
    assert ModelSpec(3, "two_layer", 4).parameter_count == 3 * 4 + 2 * 4 + 1


def test_partition_sizes():
    assert partition_model(ModelSpec(9), 3) == [(0, 4), (4, 7), (7, 10)]
    assert partition_model(ModelSpec(1), 2) == [(0, 1), (1, 2)]
    with pytest.raises(TooManyMiners):
        partition_model(ModelSpec(1), 3)


@given(d=st.integers(1, 30), k=st.integers(1, 31))
def test_partition_covers_vector(d, k):
    spec = ModelSpec(d)
    if k > spec.parameter_count:
        return
    ranges = partition_model(spec, k)
    assert ranges[0][0] == 0 and ranges[-1][1] == spec.parameter_count
    assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))
    sizes = [e - s for s, e in ranges]
    assert max(sizes) - min(sizes) <= 1


def test_constant_prediction_loss():
    spec = ModelSpec(2)
    data = Dataset(np.zeros((5, 2)), np.zeros(5))
    assert evaluate_loss(spec, np.array([1.0, -1.0, 1.5]), data) == pytest.approx(1.5**2)


def test_loss_invariant_to_duplication():
    spec = ModelSpec(3)
    rng = np.random.default_rng(2)
    data = Dataset(rng.normal(size=(10, 3)), rng.normal(size=10))
    doubled = Dataset(np.vstack([data.features] * 2), np.concatenate([data.targets] * 2))
    params = rng.normal(size=4)
    assert evaluate_loss(spec, params, data) == pytest.approx(evaluate_loss(spec, params, doubled),
                                                             rel=1e-12)


def test_non_finite_loss_raises():
    spec = ModelSpec(1)
    data = Dataset(np.ones((2, 1)), np.zeros(2))
    with pytest.raises(NonFiniteLoss):
        evaluate_loss(spec, np.array([np.inf, 0.0]), data)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), np.ones(1))


def test_synthetic_split_is_seeded():
    train, val = make_synthetic_dataset(3, 100, 4, 0.1)
    train2, val2 = make_synthetic_dataset(3, 100, 4, 0.1)
    assert len(train) == 80 and len(val) == 20
    assert np.array_equal(train.features, train2.features)
    assert np.array_equal(val.targets, val2.targets)


def full_shard_convergence(steps=500, lr=0.01):
    """Validation loss after full-shard SGD on a noiseless linear task."""
    spec = ModelSpec(4)
    train, val = make_synthetic_dataset(0, 400, 4, 0.0)
    params = initial_params(spec, 0)
    shard, _ = sgd_train(spec, params, (0, spec.parameter_count), train, steps, lr,
                         len(train), seed=0)
    return evaluate_loss(spec, params, val), evaluate_loss(spec, shard, val)


def test_single_miner_converges():
    before, after = full_shard_convergence()
    assert after < 1e-3 < before


def test_sgd_only_moves_its_shard():
    spec = ModelSpec(3, "two_layer", 3)
    train, _ = make_synthetic_dataset(1, 60, 3, 0.1)
    params = initial_params(spec, 1)
    values, steps = sgd_train(spec, params, (4, 9), train, 20, 0.05, 8, seed=3)
    assert steps == 20 and values.shape == (5,)
    merged = assemble_model(params, [ParameterShard(4, 9, values)])
    assert np.array_equal(merged[:4], params[:4]) and np.array_equal(merged[9:], params[9:])


def test_full_batch_descent_is_monotone():
    spec = ModelSpec(5)
    train, _ = make_synthetic_dataset(6, 200, 5, 0.2)
    params = initial_params(spec, 0)
    losses = [evaluate_loss(spec, params, train)]
    for _ in range(30):
        values, _ = sgd_train(spec, params, (0, 6), train, 1, 0.05, len(train), seed=0)
        params = values
        losses.append(evaluate_loss(spec, params, train))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_sgd_is_seed_deterministic():
    spec = ModelSpec(4)
    train, _ = make_synthetic_dataset(2, 100, 4, 0.1)
    params = initial_params(spec, 0)
    a, _ = sgd_train(spec, params, (0, 3), train, 15, 0.05, 7, seed=9)
    b, _ = sgd_train(spec, params, (0, 3), train, 15, 0.05, 7, seed=9)
    c, _ = sgd_train(spec, params, (0, 3), train, 15, 0.05, 7, seed=10)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_divergence_detected():
    spec = ModelSpec(2)
    train, _ = make_synthetic_dataset(0, 50, 2, 0.0)
    with pytest.raises(DivergenceDetected):
        sgd_train(spec, initial_params(spec, 0), (0, 3), train, 5000, 1e6, len(train), 0)


def test_assemble_rejects_overlap():
    base = np.zeros(5)
    with pytest.raises(OverlappingShards):
        assemble_model(base, [ParameterShard(0, 3, np.ones(3)), ParameterShard(2, 5, np.ones(3))])


def test_report_roundtrip():
    report = TrainingReport(3, ParameterShard(2, 5, np.array([0.5, -1.0, 2.25])), 3, 1.5, 0.75, 8)
    back = decode_report(encode_report(report))
    assert back.miner_id == 3 and back.params_trained == 3 and back.steps_used == 8
    assert np.array_equal(back.shard.values, report.shard.values)
    assert (back.loss_before, back.loss_after) == (1.5, 0.75)


def test_flop_counts_by_hand():
    spec = ModelSpec(2)
    # 8 rows: 2 multiply-adds plus bias per row, then one squared term per row
    assert loss_flops(spec, 8) == 8 * 3 + 8
    # 4-row batch on a 3-wide shard: forward 12, accumulate 12
    assert gradient_flops(spec, 4, 3) == 24
    assert sgd_flops(spec, 1, 4, 3) == 27
    assert gradient_flops(ModelSpec(2, "two_layer", 3), 4, 13) == 2 * 4 * 13 + 4 * 3
