"""The coordination server's per-cycle state machine.

One call to :func:`run_cycle` walks Registration through Reward, produces at
most one block, and emits a :class:`CycleRecord` from which a third party can
recompute the lottery seed, every weight, the winner, and the certificate
checks (see :func:`audit_record`).
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Protocol, Sequence

import numpy as np

from .crypto import (
    Certificate, KeyPair, Point, certificate_hash, deserialize_certificate,
    issue_certificate, serialize_certificate, verify_certificate,
)
from .errors import (
    BlockRejected, CycleAborted, DegenerateWeights, NoRegisteredMiners,
    NonFiniteLoss, ShardRangeMismatch,
)
from .hashing import Hash256, double_sha256, merkle_root
from .ledger import BLOCK_VERSION, Block, BlockHeader, Chain, ProofKind, append_block
from .training import (
    Dataset, ModelSpec, ParameterShard, TrainingReport, assemble_model, decode_report,
    encode_report, evaluate_loss, partition_model, split_evenly,
)

__all__ = [
    "CycleConfig", "ContributionScore", "CycleState", "TrainingTask", "BlockProposal",
    "MinerEntry", "CycleRecord", "CycleResult", "Coordinator", "DirectTransport",
    "evaluate_report", "score_contribution", "lottery_seed", "weighted_lottery",
    "distribute_reward", "run_cycle", "audit_record", "coinbase_transaction",
    "build_certificate_block",
]


@dataclass(frozen=True)
class CycleConfig:
    cycle_steps: int
    learning_rate: float
    batch_size: int
    reward: int
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.cycle_steps < 0 or self.learning_rate < 0 or self.batch_size < 1 or self.reward < 0:
            raise ValueError("invalid cycle configuration")


@dataclass(frozen=True)
class ContributionScore:
    miner_id: int
    param_component: float
    loss_component: float
    weight: float


class CycleState(enum.IntEnum):
    IDLE = 0
    REGISTRATION = 1
    DISTRIBUTION = 2
    TRAINING = 3
    EVALUATION = 4
    LOTTERY = 5
    CERTIFICATION = 6
    BLOCK_PROPOSAL = 7
    VALIDATION = 8
    REWARD = 9


@dataclass(frozen=True, eq=False)
class TrainingTask:
    cycle_id: int
    miner_id: int
    base_params: np.ndarray
    shard_range: tuple[int, int]
    steps: int
    learning_rate: float
    batch_size: int
    seed: int


@dataclass(frozen=True)
class BlockProposal:
    cycle_id: int
    prev_hash: Hash256
    certificate: Certificate
    transactions: tuple[bytes, ...]


class Miner(Protocol):
    miner_id: int
    public_key: bytes
    compute_budget: float

    def train(self, task: TrainingTask, partition: Dataset) -> TrainingReport | None: ...

    def propose_block(self, proposal: BlockProposal) -> Block | None: ...

    def validate_block(self, chain: Chain, block: Block) -> bool | None: ...


class DirectTransport:
    """In-process delivery: every call reaches the agent immediately."""

    def register(self, miners: Sequence[Miner]) -> list[Miner]:
        return list(miners)

    def dispatch_tasks(self, tasks: Mapping[int, TrainingTask], miners: Mapping[int, Miner],
                       partitions: Mapping[int, Dataset]) -> dict[int, TrainingReport]:
        reports = {}
        for mid, task in tasks.items():
            report = miners[mid].train(task, partitions[mid])
            if report is not None:
                reports[mid] = report
        return reports

    def announce(self, kind: str, payload: bytes) -> None:
        pass

    def request_block(self, winner: Miner, proposal: BlockProposal) -> Block | None:
        return winner.propose_block(proposal)

    def collect_validations(self, block: Block, chain: Chain,
                            validators: Sequence[Miner]) -> dict[int, bool]:
        verdicts = {}
        for v in validators:
            verdict = v.validate_block(chain, block)
            if verdict is not None:
                verdicts[v.miner_id] = verdict
        return verdicts


# --- scoring and lottery ----------------------------------------------------

def evaluate_report(report: TrainingReport, base_params: np.ndarray, validation: Dataset,
                    *, spec: ModelSpec, assigned_range: tuple[int, int]) -> tuple[bool, float]:
    """Server-side check of one submission.

    Returns ``(accepted, measured_loss_after)``. The loss is measured on the
    validation set with only this shard replaced; a non-finite measurement is
    returned as ``inf`` and the report is rejected.
    """
    shard = report.shard
    if (shard.range_start, shard.range_end) != tuple(assigned_range):
        raise ShardRangeMismatch(
            f"miner {report.miner_id} submitted [{shard.range_start}, {shard.range_end}),"
            f" assigned {list(assigned_range)}")
    issued = np.asarray(base_params)[shard.range_start:shard.range_end]
    changed = not np.array_equal(shard.values, issued)
    try:
        measured = evaluate_loss(spec, assemble_model(base_params, [shard]), validation)
    except NonFiniteLoss:
        return False, math.inf
    return changed, measured


def score_contribution(metrics: Sequence[tuple[float, float]], alpha: float,
                       miner_ids: Sequence[int] | None = None) -> list[ContributionScore]:
    """Normalized convex combination of parameter volume and loss reduction.

    ``metrics`` holds one ``(volume, loss_delta)`` pair per registered miner.
    When only one component has a positive total it carries the whole weight;
    when neither does, weights are uniform.
    """
    if miner_ids is None:
        miner_ids = range(len(metrics))
    vols = [float(p) for p, _ in metrics]
    deltas = [float(d) for _, d in metrics]
    if any(v < 0 for v in vols) or any(d < 0 for d in deltas):
        raise ValueError("contribution metrics must be non-negative")
    total_p = math.fsum(vols)
    total_d = math.fsum(deltas)
    pc = [v / total_p if total_p > 0 else 0.0 for v in vols]
    lc = [d / total_d if total_d > 0 else 0.0 for d in deltas]
    if total_p > 0 and total_d > 0:
        weights = [alpha * a + (1.0 - alpha) * b for a, b in zip(pc, lc)]
    else:
        weights = pc if total_p > 0 else lc
    if metrics and not any(w > 0 for w in weights):
        weights = [1.0 / len(metrics)] * len(metrics)
    return [ContributionScore(mid, a, b, w) for mid, a, b, w in zip(miner_ids, pc, lc, weights)]


def lottery_seed(cycle_id: int, reports: Sequence[TrainingReport]) -> Hash256:
    ids = [r.miner_id for r in reports]
    if ids != sorted(ids):
        raise ValueError("reports must be in miner-id order")
    return double_sha256(cycle_id.to_bytes(8, "big") + b"".join(encode_report(r) for r in reports))


def weighted_lottery(weights: Sequence[float], seed: bytes) -> int:
    """Index of the first cumulative weight strictly above the seed's
    fraction of 2**256. Comparisons are exact rationals."""
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    if not any(w > 0 for w in weights):
        raise DegenerateWeights("all lottery weights are zero")
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    u = Fraction(int.from_bytes(seed, "big"), 2**256)
    cumulative = Fraction(0)
    last_positive = 0
    for j, w in enumerate(weights):
        cumulative += Fraction(w)
        if w > 0:
            last_positive = j
        if cumulative > u:
            return j
    # sum fell short of 1 by rounding and u landed in the gap
    return last_positive


def distribute_reward(ledger: Mapping[int, int], winner: int, reward: int) -> dict[int, int]:
    if reward < 0:
        raise ValueError("reward must be non-negative")
    out = dict(ledger)
    out[winner] = out.get(winner, 0) + reward
    return out


def coinbase_transaction(cycle_id: int, miner_pubkey: bytes, reward: int) -> bytes:
    return b"coinbase" + cycle_id.to_bytes(8, "big") + miner_pubkey + reward.to_bytes(8, "big")


# --- records ----------------------------------------------------------------

@dataclass
class MinerEntry:
    miner_id: int
    pubkey: str
    responded: bool
    accepted: bool
    shard_start: int
    shard_end: int
    steps_assigned: int
    steps_claimed: int
    params_trained: int
    loss_before: float
    loss_after_claimed: float | None
    loss_after_measured: float | None
    param_volume: int
    loss_delta: float
    param_component: float
    loss_component: float
    weight: float


@dataclass
class CycleRecord:
    cycle_id: int
    status: str
    reason: str = ""
    alpha: float = 0.5
    reward: int = 0
    miners: list[MinerEntry] = field(default_factory=list)
    reports: list[str] = field(default_factory=list)
    lottery_seed: str = ""
    winner_id: int | None = None
    certificate: str = ""
    certificate_hash: str = ""
    contribution_certificates: list[str] = field(default_factory=list)
    block_hash: str = ""
    chain_height: int = 0
    reward_delta: dict[str, int] = field(default_factory=dict)
    validations: dict[str, bool] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "CycleRecord":
        raw = json.loads(text)
        raw["miners"] = [MinerEntry(**m) for m in raw.get("miners", [])]
        return cls(**raw)


class CycleResult(NamedTuple):
    block: Block
    record: CycleRecord
    certificates: list[Certificate]
    chain: Chain


# --- coordinator --------------------------------------------------------------

class Coordinator:
    """Mutable server state carried across cycles.

    Parameters, balances and the cycle counter change only in the Reward
    state, so an aborted cycle leaves them as they were.
    """

    def __init__(self, server_key: KeyPair, spec: ModelSpec, train: Dataset,
                 validation: Dataset, initial: np.ndarray, seed: int = 0):
        self.server_key = server_key
        self.spec = spec
        self.train = train
        self.validation = validation
        self.params = np.array(initial, dtype=np.float64)
        self.seed = seed
        self.cycle_id = 0
        self.balances: dict[int, int] = {}
        self.state = CycleState.IDLE
        self.trace: list[CycleState] = []

    @property
    def public_key(self) -> Point:
        return self.server_key.public_point

    def advance(self, state: CycleState) -> None:
        expected = CycleState(self.state + 1) if self.state < CycleState.REWARD else None
        if state != expected:
            raise RuntimeError(f"illegal transition {self.state.name} -> {state.name}")
        self.state = state
        self.trace.append(state)

    def _derive(self, *parts: object) -> bytes:
        text = "|".join(str(p) for p in (self.seed, *parts))
        return hashlib.sha256(text.encode()).digest()

    def task_seed(self, miner_id: int) -> int:
        return int.from_bytes(self._derive("task", self.cycle_id, miner_id)[:8], "big")

    def cert_nonce(self, miner_id: int, purpose: str) -> bytes:
        return self._derive("cert", purpose, self.cycle_id, miner_id)[:16]


def _fmt(x: float) -> float | None:
    return x if math.isfinite(x) else None


def run_cycle(coordinator: Coordinator, miners: Sequence[Miner], config: CycleConfig,
              chain: Chain, transport=None,
              transactions: Iterable[bytes] = ()) -> CycleResult:
    """Run one full cycle. Raises :class:`CycleAborted` (carrying a failed
    record in ``.record``) if no block could be appended."""
    transport = transport or DirectTransport()
    co = coordinator
    cycle_id = co.cycle_id
    co.state = CycleState.IDLE
    co.trace = []
    record = CycleRecord(cycle_id=cycle_id, status="failed", alpha=config.alpha,
                         reward=config.reward, chain_height=chain.height)
    try:
        return _run_cycle(co, miners, config, chain, transport, tuple(transactions), record)
    except CycleAborted as exc:
        exc.record = record
        record.reason = str(exc)
        raise
    except BlockRejected as exc:
        record.reason = f"block rejected: {exc}"
        raise CycleAborted(record.reason, record) from exc
    finally:
        co.cycle_id = cycle_id + 1


def _run_cycle(co: Coordinator, miners: Sequence[Miner], config: CycleConfig,
               chain: Chain, transport, transactions: tuple[bytes, ...],
               record: CycleRecord) -> CycleResult:
    cycle_id = co.cycle_id

    co.advance(CycleState.REGISTRATION)
    registered = sorted(transport.register(miners), key=lambda m: m.miner_id)
    if not registered:
        raise NoRegisteredMiners("no miners registered for the cycle")
    by_id = {m.miner_id: m for m in registered}

    co.advance(CycleState.DISTRIBUTION)
    ranges = dict(zip(by_id, partition_model(co.spec, len(registered))))
    rows = dict(zip(by_id, split_evenly(len(co.train), len(registered))))
    partitions = {mid: co.train.subset(slice(*rows[mid])) for mid in by_id}
    tasks = {
        m.miner_id: TrainingTask(
            cycle_id=cycle_id, miner_id=m.miner_id, base_params=co.params.copy(),
            shard_range=ranges[m.miner_id],
            steps=int(round(config.cycle_steps * m.compute_budget)),
            learning_rate=config.learning_rate, batch_size=config.batch_size,
            seed=co.task_seed(m.miner_id))
        for m in registered
    }

    co.advance(CycleState.TRAINING)
    submitted = transport.dispatch_tasks(tasks, by_id, partitions)

    co.advance(CycleState.EVALUATION)
    loss_before = evaluate_loss(co.spec, co.params, co.validation)
    evaluated: dict[int, TrainingReport] = {}
    accepted: list[TrainingReport] = []
    for m in registered:
        mid = m.miner_id
        task = tasks[mid]
        report = submitted.get(mid)
        entry = MinerEntry(
            miner_id=mid, pubkey=m.public_key.hex(), responded=report is not None,
            accepted=False, shard_start=task.shard_range[0], shard_end=task.shard_range[1],
            steps_assigned=task.steps, steps_claimed=0, params_trained=0,
            loss_before=loss_before, loss_after_claimed=None, loss_after_measured=None,
            param_volume=0, loss_delta=0.0, param_component=0.0, loss_component=0.0, weight=0.0)
        record.miners.append(entry)
        if report is None:
            continue
        entry.steps_claimed = int(report.steps_used)
        entry.loss_after_claimed = _fmt(float(report.loss_after))
        if report.miner_id != mid:
            continue
        try:
            ok, measured = evaluate_report(report, co.params, co.validation,
                                           spec=co.spec, assigned_range=task.shard_range)
        except ShardRangeMismatch:
            continue
        entry.accepted = ok
        entry.loss_after_measured = _fmt(measured)
        credited_after = measured if math.isfinite(measured) else loss_before
        params_trained = len(report.shard) if ok else 0
        published = TrainingReport(mid, report.shard, params_trained, loss_before,
                                   credited_after, int(report.steps_used))
        evaluated[mid] = published
        if ok:
            entry.params_trained = params_trained
            entry.param_volume = params_trained * min(entry.steps_claimed, task.steps)
            entry.loss_delta = max(0.0, loss_before - measured)
            accepted.append(published)

    co.advance(CycleState.LOTTERY)
    scores = score_contribution([(e.param_volume, e.loss_delta) for e in record.miners],
                                config.alpha, [e.miner_id for e in record.miners])
    for entry, score in zip(record.miners, scores):
        entry.param_component = score.param_component
        entry.loss_component = score.loss_component
        entry.weight = score.weight
    record.reports = [encode_report(r).hex() for r in accepted]
    seed = lottery_seed(cycle_id, accepted)
    record.lottery_seed = seed.hex()
    winner_index = weighted_lottery([s.weight for s in scores], seed)
    winner = registered[winner_index]
    record.winner_id = winner.miner_id
    transport.announce("PublishScores", json.dumps(
        [asdict(s) for s in scores], sort_keys=True).encode())
    transport.announce("AnnounceWinner", winner.miner_id.to_bytes(4, "big") + seed)

    co.advance(CycleState.CERTIFICATION)
    contribution_certs = []
    for mid, report in evaluated.items():
        contribution_certs.append(issue_certificate(
            co.server_key, report, cycle_id, cycle_id, co.cert_nonce(mid, "contribution"),
            miner_pubkey=by_id[mid].public_key))
    record.contribution_certificates = [serialize_certificate(c).hex() for c in contribution_certs]
    winner_report = evaluated.get(winner.miner_id) or TrainingReport(
        winner.miner_id, ParameterShard(*tasks[winner.miner_id].shard_range,
                                        co.params[slice(*tasks[winner.miner_id].shard_range)]),
        0, loss_before, loss_before, 0)
    block_cert = issue_certificate(co.server_key, winner_report, cycle_id, cycle_id,
                                   co.cert_nonce(winner.miner_id, "block"),
                                   miner_pubkey=winner.public_key)
    record.certificate = serialize_certificate(block_cert).hex()
    record.certificate_hash = certificate_hash(block_cert).hex()

    co.advance(CycleState.BLOCK_PROPOSAL)
    txs = (coinbase_transaction(cycle_id, winner.public_key, config.reward),) + transactions
    proposal = BlockProposal(cycle_id, chain.tip_hash(), block_cert, txs)
    block = transport.request_block(winner, proposal)
    if block is None:
        raise CycleAborted(f"winner {winner.miner_id} did not propose a block")

    co.advance(CycleState.VALIDATION)
    verdicts = transport.collect_validations(block, chain, registered)
    record.validations = {str(k): v for k, v in sorted(verdicts.items())}
    if not all(verdicts.values()):
        rejecting = sorted(k for k, v in verdicts.items() if not v)
        raise CycleAborted(f"block rejected by validators {rejecting}")
    new_chain = append_block(chain, block)

    co.advance(CycleState.REWARD)
    co.balances = distribute_reward(co.balances, winner.miner_id, config.reward)
    improving = [r.shard for r in accepted if r.loss_after <= loss_before]
    co.params = assemble_model(co.params, improving)
    record.status = "ok"
    record.block_hash = block.hash().hex()
    record.chain_height = new_chain.height
    record.reward_delta = {str(winner.miner_id): config.reward}
    return CycleResult(block, record, contribution_certs, new_chain)


def build_certificate_block(proposal: BlockProposal) -> Block:
    """Honest block assembly around a server certificate."""
    header = BlockHeader(
        version=BLOCK_VERSION, prev_hash=proposal.prev_hash,
        merkle_root=merkle_root(proposal.transactions), timestamp=proposal.cycle_id,
        proof_kind=ProofKind.TRAINING_CERTIFICATE, nonce=0,
        certificate_hash=certificate_hash(proposal.certificate))
    return Block(header, tuple(proposal.transactions), proposal.certificate)


# --- audit --------------------------------------------------------------------

def audit_record(record: CycleRecord, server_pubkey: Point | bytes | None = None,
                 block: Block | None = None) -> list[str]:
    """Recompute everything a cycle published; return a list of problems.

    Only the record itself (and optionally the block and the server's public
    key) is consulted.
    """
    problems: list[str] = []
    if record.status != "ok":
        return problems if record.block_hash == "" else ["failed cycle names a block"]
    try:
        reports = [decode_report(bytes.fromhex(h)) for h in record.reports]
    except ValueError as exc:
        return [f"unparseable report: {exc}"]
    by_id = {e.miner_id: e for e in record.miners}
    for r in reports:
        e = by_id.get(r.miner_id)
        if e is None or not e.accepted:
            problems.append(f"published report for miner {r.miner_id} has no accepted entry")
            continue
        if (r.params_trained != e.params_trained or r.loss_before != e.loss_before
                or r.loss_after != e.loss_after_measured or r.steps_used != e.steps_claimed
                or (r.shard.range_start, r.shard.range_end) != (e.shard_start, e.shard_end)):
            problems.append(f"report for miner {r.miner_id} disagrees with its entry")
    if sorted(r.miner_id for r in reports) != [e.miner_id for e in record.miners if e.accepted]:
        problems.append("accepted set differs from published reports")

    for e in record.miners:
        volume = e.params_trained * min(e.steps_claimed, e.steps_assigned) if e.accepted else 0
        delta = (max(0.0, e.loss_before - e.loss_after_measured)
                 if e.accepted and e.loss_after_measured is not None else 0.0)
        if volume != e.param_volume or delta != e.loss_delta:
            problems.append(f"miner {e.miner_id} raw metrics do not recompute")
    scores = score_contribution([(e.param_volume, e.loss_delta) for e in record.miners],
                                record.alpha, [e.miner_id for e in record.miners])
    for e, s in zip(record.miners, scores):
        if (e.param_component, e.loss_component, e.weight) != (
                s.param_component, s.loss_component, s.weight):
            problems.append(f"miner {e.miner_id} weight does not recompute")

    seed = lottery_seed(record.cycle_id, reports)
    if seed.hex() != record.lottery_seed:
        problems.append("lottery seed does not recompute")
    winner_index = weighted_lottery([s.weight for s in scores], seed)
    if record.miners[winner_index].miner_id != record.winner_id:
        problems.append("winner does not recompute")

    try:
        cert = deserialize_certificate(bytes.fromhex(record.certificate))
    except ValueError as exc:
        return problems + [f"unparseable certificate: {exc}"]
    if certificate_hash(cert).hex() != record.certificate_hash:
        problems.append("certificate hash does not match certificate")
    w = by_id.get(record.winner_id)
    if w is not None and (cert.miner_pubkey.hex() != w.pubkey or cert.cycle_id != record.cycle_id
                          or cert.params_trained != w.params_trained):
        problems.append("certificate does not describe the winner")
    if server_pubkey is not None:
        if not verify_certificate(server_pubkey, cert):
            problems.append("certificate signature invalid")
        for text in record.contribution_certificates:
            try:
                c = deserialize_certificate(bytes.fromhex(text))
            except ValueError:
                problems.append("unparseable contribution certificate")
                continue
            if not verify_certificate(server_pubkey, c):
                problems.append("contribution certificate signature invalid")
    if block is not None:
        if block.hash().hex() != record.block_hash:
            problems.append("block hash does not match record")
        if block.header.certificate_hash.hex() != record.certificate_hash:
            problems.append("block carries a different certificate")
    return problems
