"""Scenario configuration: dataclasses and a strict YAML parser.

Example (every key shown; ``cycle.alpha``, the ``network`` section and the
``metrics`` section may be omitted)::

    seed: 7
    cycles: 10
    miners:
      - {behavior: honest, compute_budget: 1.0}
      - {behavior: lazy, compute_budget: 1.0}
    model: {architecture: linear, input_dim: 4}        # two_layer also needs hidden
    dataset: {n_examples: 200, noise_std: 0.05}
    cycle: {steps: 20, learning_rate: 0.05, batch_size: 16, reward: 50, alpha: 0.5}
    network: {latency_min: 0, latency_max: 2}
    metrics: {per_hash_op_cost: 1.0}
    pow_baseline: {enabled: true, difficulty_bits: 8, max_attempts: 1000000}
    output: {dir: out}
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .consensus import CycleConfig
from .errors import ParseError, ValidationError
from .training import Architecture, ModelSpec

__all__ = [
    "Behavior", "MinerConfig", "DatasetConfig", "NetworkConfig", "PowBaselineConfig",
    "ScenarioConfig", "parse_config", "parse_config_text",
]


class Behavior(str, enum.Enum):
    HONEST = "honest"
    LAZY = "lazy"
    FALSIFIER = "falsifier"
    OFFLINE = "offline"


@dataclass(frozen=True)
class MinerConfig:
    behavior: Behavior
    compute_budget: float = 1.0


@dataclass(frozen=True)
class DatasetConfig:
    n_examples: int
    noise_std: float


@dataclass(frozen=True)
class NetworkConfig:
    latency_min: int = 0
    latency_max: int = 0


@dataclass(frozen=True)
class PowBaselineConfig:
    enabled: bool = False
    difficulty_bits: int = 8
    max_attempts: int = 1_000_000


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    cycles: int
    miners: tuple[MinerConfig, ...]
    model: ModelSpec
    dataset: DatasetConfig
    cycle: CycleConfig
    pow_baseline: PowBaselineConfig = field(default_factory=PowBaselineConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    per_hash_op_cost: float = 1.0
    output_dir: str = "out"


# --- parsing ------------------------------------------------------------------

_INT, _FLOAT, _BOOL, _STR = "int", "float", "bool", "str"

# section -> {key: (type, required)}
_SECTIONS = {
    "model": {"architecture": (_STR, True), "input_dim": (_INT, True), "hidden": (_INT, False)},
    "dataset": {"n_examples": (_INT, True), "noise_std": (_FLOAT, True)},
    "cycle": {"steps": (_INT, True), "learning_rate": (_FLOAT, True),
              "batch_size": (_INT, True), "reward": (_INT, True), "alpha": (_FLOAT, False)},
    "network": {"latency_min": (_INT, False), "latency_max": (_INT, False)},
    "metrics": {"per_hash_op_cost": (_FLOAT, False)},
    "pow_baseline": {"enabled": (_BOOL, True), "difficulty_bits": (_INT, True),
                     "max_attempts": (_INT, True)},
    "output": {"dir": (_STR, True)},
}
_OPTIONAL_SECTIONS = {"network", "metrics"}
_TOP = {"seed": _INT, "cycles": _INT, "miners": "list", **{k: "map" for k in _SECTIONS}}
_MINER = {"behavior": (_STR, True), "compute_budget": (_FLOAT, True)}

_TAGS = {
    "tag:yaml.org,2002:int": _INT,
    "tag:yaml.org,2002:float": _FLOAT,
    "tag:yaml.org,2002:bool": _BOOL,
    "tag:yaml.org,2002:str": _STR,
}


class _Reader:
    def __init__(self, loader: yaml.SafeLoader):
        self.loader = loader

    def line(self, node) -> int:
        return node.start_mark.line + 1

    def mapping(self, node, path: str, allowed) -> dict[str, tuple[Any, Any]]:
        if not isinstance(node, yaml.MappingNode):
            raise ParseError("expected a mapping", self.line(node), path or None)
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            full = f"{path}.{key}" if path else key
            if not isinstance(key_node, yaml.ScalarNode) or key not in allowed:
                raise ParseError("unknown key", self.line(key_node), full)
            if key in out:
                raise ParseError("duplicate key", self.line(key_node), full)
            out[key] = (key_node, value_node)
        return out

    def scalar(self, node, kind: str, path: str):
        if not isinstance(node, yaml.ScalarNode):
            raise ParseError(f"expected a {kind}", self.line(node), path)
        tag = _TAGS.get(node.tag)
        value = self.loader.construct_object(node)
        if kind == _FLOAT and tag == _INT:
            return float(value)
        if tag != kind:
            raise ParseError(f"expected a {kind}, got {node.value!r}", self.line(node), path)
        return value

    def section(self, node, name: str, spec) -> dict[str, Any]:
        entries = self.mapping(node, name, spec)
        values = {}
        for key, (kind, required) in spec.items():
            if key in entries:
                values[key] = self.scalar(entries[key][1], kind, f"{name}.{key}")
            elif required:
                raise ParseError("missing required key", self.line(node), f"{name}.{key}")
        return values


def _check(ok: bool, message: str, field_name: str, line: int | None) -> None:
    if not ok:
        raise ValidationError(message, line, field_name)


def parse_config_text(text: str) -> ScenarioConfig:
    loader = yaml.SafeLoader(text)
    try:
        try:
            root = loader.get_single_node()
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark or exc.context_mark
            raise ParseError(str(exc.problem or exc), mark.line + 1 if mark else None) from exc
        if root is None:
            raise ParseError("empty configuration")
        r = _Reader(loader)
        top = r.mapping(root, "", _TOP)
        for key in _TOP:
            if key not in top and key not in _OPTIONAL_SECTIONS:
                raise ParseError("missing required key", r.line(root), key)

        seed = r.scalar(top["seed"][1], _INT, "seed")
        cycles = r.scalar(top["cycles"][1], _INT, "cycles")
        _check(0 <= seed < 2**64, "must fit in 64 bits", "seed", r.line(top["seed"][1]))
        _check(cycles >= 1, "must be positive", "cycles", r.line(top["cycles"][1]))

        miners_node = top["miners"][1]
        if not isinstance(miners_node, yaml.SequenceNode):
            raise ParseError("expected a list", r.line(miners_node), "miners")
        _check(len(miners_node.value) >= 1, "need at least one miner", "miners", r.line(miners_node))
        miners = []
        for i, mnode in enumerate(miners_node.value):
            vals = r.section(mnode, f"miners[{i}]", _MINER)
            try:
                behavior = Behavior(vals["behavior"])
            except ValueError:
                raise ValidationError(f"unknown behavior {vals['behavior']!r}", r.line(mnode),
                                      f"miners[{i}].behavior") from None
            budget = vals["compute_budget"]
            _check(math.isfinite(budget) and budget >= 0, "must be a finite number >= 0",
                   f"miners[{i}].compute_budget", r.line(mnode))
            miners.append(MinerConfig(behavior, budget))

        sec = {}
        lines = {}
        for name, spec in _SECTIONS.items():
            if name in top:
                sec[name] = r.section(top[name][1], name, spec)
                lines[name] = r.line(top[name][1])
            else:
                sec[name] = {}
                lines[name] = None

        m = sec["model"]
        try:
            arch = Architecture(m["architecture"])
        except ValueError:
            raise ValidationError(f"unknown architecture {m['architecture']!r}", lines["model"],
                                  "model.architecture") from None
        _check(m["input_dim"] >= 1, "must be >= 1", "model.input_dim", lines["model"])
        if arch is Architecture.TWO_LAYER:
            _check(m.get("hidden", 0) >= 1, "two_layer needs hidden >= 1", "model.hidden", lines["model"])
        else:
            _check("hidden" not in m, "only valid for two_layer", "model.hidden", lines["model"])
        model = ModelSpec(m["input_dim"], arch, m.get("hidden", 0))
        _check(len(miners) <= model.parameter_count,
               f"{len(miners)} miners for {model.parameter_count} parameters", "miners", r.line(miners_node))

        d = sec["dataset"]
        _check(d["n_examples"] >= 2 * len(miners) and d["n_examples"] >= 2,
               "need at least two examples per miner", "dataset.n_examples", lines["dataset"])
        _check(math.isfinite(d["noise_std"]) and d["noise_std"] >= 0, "must be >= 0",
               "dataset.noise_std", lines["dataset"])

        c = sec["cycle"]
        alpha = c.get("alpha", 0.5)
        _check(0.0 <= alpha <= 1.0, "must be in [0, 1]", "cycle.alpha", lines["cycle"])
        _check(c["steps"] >= 0, "must be >= 0", "cycle.steps", lines["cycle"])
        _check(math.isfinite(c["learning_rate"]) and c["learning_rate"] >= 0, "must be >= 0",
               "cycle.learning_rate", lines["cycle"])
        _check(c["batch_size"] >= 1, "must be >= 1", "cycle.batch_size", lines["cycle"])
        _check(0 <= c["reward"] < 2**64, "must fit in 64 bits", "cycle.reward", lines["cycle"])

        n = sec["network"]
        lo, hi = n.get("latency_min", 0), n.get("latency_max", 0)
        _check(0 <= lo <= hi, "need 0 <= latency_min <= latency_max", "network.latency_max",
               lines["network"])

        cost = sec["metrics"].get("per_hash_op_cost", 1.0)
        _check(math.isfinite(cost) and cost > 0, "must be > 0", "metrics.per_hash_op_cost",
               lines["metrics"])

        p = sec["pow_baseline"]
        _check(0 <= p["difficulty_bits"] <= 255, "must be in [0, 255]",
               "pow_baseline.difficulty_bits", lines["pow_baseline"])
        _check(p["max_attempts"] >= 1, "must be >= 1", "pow_baseline.max_attempts",
               lines["pow_baseline"])

        out = sec["output"]
        _check(bool(out["dir"]), "must be non-empty", "output.dir", lines["output"])

        return ScenarioConfig(
            seed=seed, cycles=cycles, miners=tuple(miners), model=model,
            dataset=DatasetConfig(d["n_examples"], d["noise_std"]),
            cycle=CycleConfig(c["steps"], c["learning_rate"], c["batch_size"], c["reward"], alpha),
            pow_baseline=PowBaselineConfig(p["enabled"], p["difficulty_bits"], p["max_attempts"]),
            network=NetworkConfig(lo, hi), per_hash_op_cost=cost, output_dir=out["dir"],
        )
    finally:
        loader.dispose()


def parse_config(path: str | Path) -> ScenarioConfig:
    return parse_config_text(Path(path).read_text())
