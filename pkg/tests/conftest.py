from __future__ import annotations

import dataclasses

import pytest

from pout.config import (
    Behavior, DatasetConfig, MinerConfig, NetworkConfig, PowBaselineConfig, ScenarioConfig,
)
from pout.consensus import CycleConfig
from pout.crypto import generate_keypair
from pout.training import ModelSpec


def make_config(behaviors=("honest",), budgets=None, *, cycles=3, seed=5, d=4,
                architecture="linear", hidden=0, n_examples=120, noise_std=0.05, steps=10,
                learning_rate=0.05, batch_size=8, reward=50, alpha=0.5, latency=(0, 1),
                pow_enabled=True, difficulty_bits=8, max_attempts=1_000_000,
                output_dir="out") -> ScenarioConfig:
    budgets = budgets or [1.0] * len(behaviors)
    return ScenarioConfig(
        seed=seed, cycles=cycles,
        miners=tuple(MinerConfig(Behavior(b), float(c)) for b, c in zip(behaviors, budgets)),
        model=ModelSpec(d, architecture, hidden),
        dataset=DatasetConfig(n_examples, noise_std),
        cycle=CycleConfig(steps, learning_rate, batch_size, reward, alpha),
        pow_baseline=PowBaselineConfig(pow_enabled, difficulty_bits, max_attempts),
        network=NetworkConfig(*latency),
        output_dir=output_dir,
    )


@pytest.fixture
def config_factory():
    return make_config


@pytest.fixture(scope="session")
def server_key():
    return generate_keypair(b"\x01" * 32)


@pytest.fixture(scope="session")
def other_key():
    return generate_keypair(b"\x02" * 32)


def replace(obj, **changes):
    return dataclasses.replace(obj, **changes)


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
