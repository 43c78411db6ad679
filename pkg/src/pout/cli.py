"""Command-line scenario runner.

    pout run <config> [--out-dir DIR] [--seed-override N] [--quiet]
    pout verify <chain.dump> <server_pubkey_hex> [--quiet]
    pout compare <config> [--seed-override N] [--quiet]

Exit codes: 0 success, 1 configuration error, 2 simulation error, 3 I/O
error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Sequence

from .artifacts import (
    DumpFormatError, comparison_json, format_audit_log, format_chain_dump,
    format_metrics_csv, parse_chain_dump,
)
from .config import ScenarioConfig, parse_config
from .consensus import audit_record
from .crypto import Point
from .errors import ConfigInvalid, ParseError, PoutError
from .ledger import validate_chain
from .netsim import compare_usefulness, run_baseline_pow, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3, 4

AUDIT_LOG = "audit.jsonl"
METRICS_CSV = "metrics.csv"
CHAIN_DUMP = "chain.dump"
SERVER_PUBKEY = "server_pubkey.txt"
BASELINE_DUMP = "baseline_chain.dump"
COMPARISON = "comparison.json"


def _say(quiet: bool, *args) -> None:
    if not quiet:
        print(*args)


def _err(*args) -> None:
    print("error:", *args, file=sys.stderr)


def load_config(path: str, seed_override: int | None = None,
                out_dir: str | None = None) -> ScenarioConfig:
    config = parse_config(path)
    changes = {}
    if seed_override is not None:
        changes["seed"] = seed_override
    if out_dir is not None:
        changes["output_dir"] = out_dir
    return dataclasses.replace(config, **changes) if changes else config


def cmd_run(config: ScenarioConfig, quiet: bool = False) -> int:
    try:
        result = run_scenario(config)
        baseline = comparison = None
        if config.pow_baseline.enabled:
            baseline = run_baseline_pow(config)
            comparison = compare_usefulness(result.metrics, baseline.metrics)
    except ConfigInvalid as exc:
        _err(exc)
        return EXIT_CONFIG
    except (PoutError, ArithmeticError) as exc:
        _err(f"simulation failed: {exc}")
        return EXIT_SIM

    miner_ids = list(range(len(config.miners)))
    files = {
        AUDIT_LOG: format_audit_log(result.records),
        METRICS_CSV: format_metrics_csv(result.cycle_metrics, miner_ids),
        CHAIN_DUMP: format_chain_dump(result.chain, result.records, result.server_pubkey),
        SERVER_PUBKEY: result.server_pubkey.hex() + "\n",
    }
    if baseline is not None:
        files[BASELINE_DUMP] = format_chain_dump(baseline.chain)
        files[COMPARISON] = comparison_json(comparison)
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
    except OSError as exc:
        _err(f"cannot write outputs: {exc}")
        return EXIT_IO

    failed = sum(r.status != "ok" for r in result.records)
    _say(quiet, f"chain height {result.chain.height} after {config.cycles} cycles"
                f" ({failed} failed)")
    _say(quiet, f"server public key {result.server_pubkey.hex()}")
    _say(quiet, f"useful fraction {result.metrics.useful_fraction:.6f}")
    if comparison is not None:
        _say(quiet, f"baseline useful fraction {comparison.baseline_useful_fraction:.6f}")
    _say(quiet, f"outputs written to {out}")
    return EXIT_OK


def verify_dump_text(text: str, server_pubkey_hex: str) -> tuple[bool, list[str]]:
    """Re-validate a chain dump from public data alone.

    Returns ``(ok, lines)`` with one verdict line per block; the first line
    that starts with ``FAIL`` names the first failing block.
    """
    pubkey = Point.fromhex(server_pubkey_hex.strip())
    lines: list[str] = []
    if pubkey is None or not pubkey.on_curve():
        return False, ["FAIL server public key is not a valid compressed point"]
    try:
        dump = parse_chain_dump(text)
    except DumpFormatError as exc:
        where = f"block {exc.block}" if exc.block is not None else "dump"
        return False, [f"FAIL {where}: unparseable ({exc})"]

    report = validate_chain(dump.blocks, pubkey, dump.target)
    ok_records = [r for r in dump.records if r.status == "ok"]
    problems_by_block: dict[int, list[str]] = {i: [] for i in range(len(dump.blocks))}
    global_problems = []
    if dump.records:
        if len(ok_records) != len(dump.blocks):
            global_problems.append(
                f"{len(ok_records)} successful cycle records for {len(dump.blocks)} blocks")
        for i, (record, block) in enumerate(zip(ok_records, dump.blocks)):
            problems_by_block[i].extend(audit_record(record, pubkey, block))
        for record in dump.records:
            if record.status != "ok":
                global_problems.extend(
                    f"cycle {record.cycle_id}: {p}" for p in audit_record(record, pubkey))

    ok = not global_problems
    for entry in report.entries:
        issues = ([entry.detail] if not entry.ok else []) + problems_by_block[entry.index]
        if issues:
            ok = False
            lines.append(f"FAIL block {entry.index} {entry.block_hash}: {'; '.join(issues)}")
        else:
            lines.append(f"ok   block {entry.index} {entry.block_hash}")
    lines.extend(f"FAIL {p}" for p in global_problems)
    return ok, lines


def cmd_verify(dump_path: str, server_pubkey_hex: str, quiet: bool = False) -> int:
    try:
        text = Path(dump_path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        _err(f"cannot read dump: {exc}")
        return EXIT_IO
    ok, lines = verify_dump_text(text, server_pubkey_hex)
    for line in lines:
        _say(quiet, line)
    if not ok:
        first = next(line for line in lines if line.startswith("FAIL"))
        _err(f"verification failed: {first[5:]}")
        return EXIT_VERIFY
    _say(quiet, f"verified {len(lines)} blocks")
    return EXIT_OK


def cmd_compare(config: ScenarioConfig, quiet: bool = False) -> int:
    try:
        result = run_scenario(config)
        baseline = run_baseline_pow(config)
        comparison = compare_usefulness(result.metrics, baseline.metrics)
    except ConfigInvalid as exc:
        _err(exc)
        return EXIT_CONFIG
    except (PoutError, ArithmeticError) as exc:
        _err(f"simulation failed: {exc}")
        return EXIT_SIM
    _say(quiet, comparison_json(comparison).rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pout", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a training scenario and write artifacts")
    run.add_argument("config")
    run.add_argument("--out-dir")
    run.add_argument("--seed-override", type=int)
    run.add_argument("--quiet", action="store_true")

    verify = sub.add_parser("verify", help="re-validate a chain dump from public data")
    verify.add_argument("dump")
    verify.add_argument("server_pubkey_hex")
    verify.add_argument("--quiet", action="store_true")

    compare = sub.add_parser("compare", help="compare training usefulness with a PoW baseline")
    compare.add_argument("config")
    compare.add_argument("--out-dir")
    compare.add_argument("--seed-override", type=int)
    compare.add_argument("--quiet", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args.dump, args.server_pubkey_hex, args.quiet)
    try:
        config = load_config(args.config, args.seed_override, args.out_dir)
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_CONFIG
    except ParseError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    if args.command == "run":
        return cmd_run(config, args.quiet)
    return cmd_compare(config, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
