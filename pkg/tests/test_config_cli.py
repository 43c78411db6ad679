import random
import re
import textwrap
from pathlib import Path

import pytest

from pout.cli import cmd_verify, main, verify_dump_text
from pout.config import Behavior, parse_config, parse_config_text
from pout.errors import ParseError, ValidationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = textwrap.dedent("""\
    seed: 1
    cycles: 3
    miners:
      - {behavior: honest, compute_budget: 1.0}
      - {behavior: lazy, compute_budget: 2}
    model: {architecture: linear, input_dim: 3}
    dataset: {n_examples: 60, noise_std: 0.1}
    cycle: {steps: 5, learning_rate: 0.05, batch_size: 8, reward: 50}
    pow_baseline: {enabled: true, difficulty_bits: 4, max_attempts: 100000}
    output: {dir: out/minimal}
    """)


def test_minimal_config_defaults():
    config = parse_config_text(MINIMAL)
    assert config.cycle.alpha == 0.5
    assert (config.network.latency_min, config.network.latency_max) == (0, 0)
    assert config.per_hash_op_cost == 1.0
    assert config.miners[1].behavior is Behavior.LAZY and config.miners[1].compute_budget == 2.0


def test_alpha_out_of_range():
    text = MINIMAL.replace("reward: 50}", "reward: 50, alpha: 1.5}")
    with pytest.raises(ValidationError) as info:
        parse_config_text(text)
    assert info.value.field == "cycle.alpha" and info.value.line == 8


def test_unknown_key_named_with_line():
    with pytest.raises(ParseError) as info:
        parse_config_text(MINIMAL.replace("miners:", "minerz:"))
    assert info.value.field == "minerz" and info.value.line == 3


def test_duplicate_key_rejected():
    with pytest.raises(ParseError) as info:
        parse_config_text(MINIMAL + "seed: 2\n")
    assert info.value.field == "seed"


@pytest.mark.parametrize("old, new, field", [
    ("input_dim: 3", "input_dim: three", "model.input_dim"),
    ("behavior: lazy", "behavior: sleepy", "miners[1].behavior"),
    ("n_examples: 60", "n_examples: 2", "dataset.n_examples"),
    ("architecture: linear, input_dim: 3", "architecture: two_layer, input_dim: 3",
     "model.hidden"),
])
def test_bad_values_report_field(old, new, field):
    with pytest.raises(ParseError) as info:
        parse_config_text(MINIMAL.replace(old, new))
    assert info.value.field == field


def test_shipped_configs_parse():
    for name in ("honest5", "adversarial"):
        assert parse_config(CONFIGS / f"{name}.yaml").cycles >= 1


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "c.yaml"
    config.write_text(MINIMAL)
    out = root / "out"
    assert main(["run", str(config), "--out-dir", str(out), "--quiet"]) == 0
    return config, out


def test_run_writes_artifacts(run_dir):
    _, out = run_dir
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0].split(",") == ["cycle_id", "winner_id", "weight_0", "weight_1", "chain_height",
                                  "hash_ops", "training_flops", "useful_fraction"]
    assert len(rows) == 1 + 3
    assert len((out / "audit.jsonl").read_text().splitlines()) == 3
    assert (out / "comparison.json").exists() and (out / "baseline_chain.dump").exists()


def test_reruns_are_byte_identical(run_dir, tmp_path):
    config, out = run_dir
    assert main(["run", str(config), "--out-dir", str(tmp_path), "--quiet"]) == 0
    for path in out.iterdir():
        assert (tmp_path / path.name).read_bytes() == path.read_bytes()


def test_seed_override_changes_outputs(run_dir, tmp_path):
    config, out = run_dir
    assert main(["run", str(config), "--out-dir", str(tmp_path), "--seed-override", "9",
                 "--quiet"]) == 0
    assert (tmp_path / "chain.dump").read_text() != (out / "chain.dump").read_text()


def test_verify_exit_codes(run_dir, other_key, capsys):
    _, out = run_dir
    pub = (out / "server_pubkey.txt").read_text().strip()
    assert main(["verify", str(out / "chain.dump"), pub]) == 0
    assert main(["verify", str(out / "chain.dump"), other_key.public_point.hex(), "--quiet"]) == 4
    assert "block 0" in capsys.readouterr().err
    assert main(["verify", str(out / "baseline_chain.dump"), pub, "--quiet"]) == 0
    assert cmd_verify(str(out / "missing.dump"), pub, quiet=True) == 3


def test_config_errors_exit_1(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(MINIMAL.replace("miners:", "minerz:"))
    assert main(["run", str(bad), "--quiet"]) == 1
    assert main(["run", str(tmp_path / "nope.yaml"), "--quiet"]) == 1


def test_unwritable_output_exit_3(run_dir, tmp_path):
    config, _ = run_dir
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    assert main(["run", str(config), "--out-dir", str(blocker), "--quiet"]) == 3


def test_compare_command(run_dir, capsys):
    config, _ = run_dir
    assert main(["compare", str(config)]) == 0
    assert '"training_strictly_more_useful": true' in capsys.readouterr().out


def corrupt_dump(text: str, rng: random.Random) -> str:
    """Change one hex nibble inside a block, certificate or transaction line."""
    lines = text.split("\n")
    candidates = [i for i, line in enumerate(lines) if re.match(r"(block \d+|cert|tx) ", line)]
    i = rng.choice(candidates)
    prefix, _, payload = lines[i].rpartition(" ")
    pos = rng.randrange(len(payload))
    new = rng.choice([c for c in "0123456789abcdef" if c != payload[pos]])
    lines[i] = f"{prefix} {payload[:pos]}{new}{payload[pos + 1:]}"
    return "\n".join(lines)


def test_dump_tamper_fuzz(run_dir):
    _, out = run_dir
    text = (out / "chain.dump").read_text()
    pub = (out / "server_pubkey.txt").read_text().strip()
    assert verify_dump_text(text, pub)[0]
    rng = random.Random(2)
    for _ in range(200):
        ok, lines = verify_dump_text(corrupt_dump(text, rng), pub)
        assert not ok and any(line.startswith("FAIL") for line in lines)
