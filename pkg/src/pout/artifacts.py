"""On-disk artifacts: audit log, metrics CSV, and the line-oriented chain dump.

Chain dump format, one record per line, fields separated by single spaces::

    pout-chain-dump 1
    server_pubkey <66 hex chars>          # empty for PoW chains
    target <64 hex chars>
    height <n>
    block <index> <234 hex chars: 117-byte header>
    cert <306 hex chars: 89-byte signed region + 64-byte signature>
    tx <hex>                              # one line per transaction, in order
    record <CycleRecord JSON>             # one line per cycle, after all blocks

``cert`` appears only under certificate blocks. Lines that start with ``#``
and blank lines are ignored.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .consensus import CycleRecord
from .crypto import Point, deserialize_certificate, serialize_certificate
from .ledger import MAX_TARGET, Block, BlockHeader, Chain

__all__ = [
    "DUMP_MAGIC", "ChainDump", "DumpFormatError", "format_chain_dump", "parse_chain_dump",
    "format_audit_log", "format_metrics_csv", "metrics_columns", "comparison_json",
]

DUMP_MAGIC = "pout-chain-dump 1"


@dataclass
class ChainDump:
    blocks: list[Block]
    records: list[CycleRecord] = field(default_factory=list)
    server_pubkey: str = ""
    target: int = MAX_TARGET


def format_chain_dump(chain: Chain, records: Sequence[CycleRecord] = (),
                      server_pubkey: Point | None = None) -> str:
    lines = [DUMP_MAGIC,
             f"server_pubkey {server_pubkey.hex() if server_pubkey else ''}".rstrip(),
             f"target {chain.target:064x}",
             f"height {chain.height}"]
    for i, block in enumerate(chain.blocks):
        lines.append(f"block {i} {block.header.serialize().hex()}")
        if block.certificate is not None:
            lines.append(f"cert {serialize_certificate(block.certificate).hex()}")
        lines.extend(f"tx {tx.hex()}" for tx in block.transactions)
    lines.extend(f"record {r.to_json()}" for r in records)
    return "\n".join(lines) + "\n"


class DumpFormatError(ValueError):
    def __init__(self, message: str, line: int, block: int | None = None):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.block = block


def parse_chain_dump(text: str) -> ChainDump:
    """Parse a dump; raises :class:`DumpFormatError` naming the line (and the
    block being read, if any)."""
    dump = ChainDump(blocks=[])
    header: BlockHeader | None = None
    cert = None
    txs: list[bytes] = []
    declared_height = None
    current = None

    def flush():
        nonlocal header, cert, txs
        if header is not None:
            dump.blocks.append(Block(header, tuple(txs), cert))
        header, cert, txs = None, None, []

    raw_lines = text.splitlines()
    if not raw_lines or raw_lines[0].strip() != DUMP_MAGIC:
        raise DumpFormatError("missing dump header", 1)
    for lineno, raw in enumerate(raw_lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        try:
            if tag == "server_pubkey":
                dump.server_pubkey = rest
            elif tag == "target":
                dump.target = int(rest, 16)
            elif tag == "height":
                declared_height = int(rest)
            elif tag == "block":
                flush()
                index, _, hexhdr = rest.partition(" ")
                current = int(index)
                if current != len(dump.blocks):
                    raise ValueError(f"block index {current} out of sequence")
                header = BlockHeader.deserialize(bytes.fromhex(hexhdr))
            elif tag == "cert":
                if header is None or cert is not None:
                    raise ValueError("cert outside a block")
                cert = deserialize_certificate(bytes.fromhex(rest))
            elif tag == "tx":
                if header is None:
                    raise ValueError("tx outside a block")
                txs.append(bytes.fromhex(rest))
            elif tag == "record":
                flush()
                current = None
                dump.records.append(CycleRecord.from_json(rest))
            else:
                raise ValueError(f"unknown line tag {tag!r}")
        except (ValueError, TypeError, KeyError) as exc:
            raise DumpFormatError(str(exc), lineno, current) from None
    flush()
    if declared_height is not None and declared_height != len(dump.blocks):
        raise DumpFormatError(f"declared height {declared_height}, found {len(dump.blocks)}",
                              len(raw_lines))
    return dump


def format_audit_log(records: Iterable[CycleRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def metrics_columns(miner_ids: Sequence[int]) -> list[str]:
    return (["cycle_id", "winner_id"] + [f"weight_{m}" for m in miner_ids]
            + ["chain_height", "hash_ops", "training_flops", "useful_fraction"])


def format_metrics_csv(cycle_metrics, miner_ids: Sequence[int]) -> str:
    """One row per cycle. ``winner_id`` is empty for failed cycles."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(metrics_columns(miner_ids))
    for m in cycle_metrics:
        writer.writerow([m.cycle_id, "" if m.winner_id is None else m.winner_id]
                        + [repr(m.weights.get(i, 0.0)) for i in miner_ids]
                        + [m.chain_height, m.hash_ops, m.training_flops, repr(m.useful_fraction)])
    return buf.getvalue()


def comparison_json(report) -> str:
    return json.dumps({
        "chain_height": report.chain_height,
        "training_useful_fraction": report.training_useful_fraction,
        "baseline_useful_fraction": report.baseline_useful_fraction,
        "difference": report.difference,
        "training_strictly_more_useful": report.training_strictly_more_useful,
    }, sort_keys=True, indent=2) + "\n"
