"""Discrete-event harness around the coordination server.

Every exchange between the coordinator and the miners travels as a
:class:`SimMessage` with a byte payload and a delivery tick drawn from a
seeded latency range. The event loop is single-threaded, so a scenario is a
pure function of its configuration.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .config import Behavior, ScenarioConfig
from .consensus import (
    BlockProposal, Coordinator, CycleRecord, TrainingTask, build_certificate_block,
    coinbase_transaction, run_cycle,
)
from .crypto import (
    CERTIFICATE_SIZE, KeyPair, Point, deserialize_certificate, generate_keypair,
    serialize_certificate,
)
from .errors import ConfigInvalid, CycleAborted, DivergenceDetected, HeightMismatch, TargetUnreachable
from .hashing import Hash256, merkle_root
from .ledger import (
    BLOCK_VERSION, Block, BlockHeader, Chain, ProofKind, append_block, check_block,
    deserialize_block, pow_mine, serialize_block, target_from_bits,
)
from .training import (
    Dataset, ModelSpec, ParameterShard, TrainingReport, decode_report, encode_report,
    evaluate_loss, initial_params, loss_flops, make_synthetic_dataset, sgd_flops, sgd_train,
)

__all__ = [
    "COORDINATOR_ID", "MessageKind", "SimMessage", "MessageQueue", "deliver_messages",
    "MinerAgent", "Network", "UsefulnessMetric", "CycleMetrics", "ScenarioResult",
    "BaselineResult", "ComparisonReport", "run_scenario", "run_baseline_pow",
    "compare_usefulness", "cycle_transactions", "server_keypair", "miner_keypair",
]

COORDINATOR_ID = 0xFFFFFFFF
# winner id (4 bytes) + lottery seed (32 bytes), broadcast to everyone
_PUBLIC_ANNOUNCEMENT = 36


class MessageKind(enum.IntEnum):
    REGISTER = 0
    ASSIGN_TASK = 1
    SUBMIT_UPDATE = 2
    PUBLISH_SCORES = 3
    ANNOUNCE_WINNER = 4
    PROPOSE_BLOCK = 5
    VALIDATION_RESULT = 6


@dataclass(frozen=True, order=True)
class SimMessage:
    deliver_at: int
    sender: int
    sequence: int
    kind: MessageKind = field(compare=False)
    receiver: int = field(compare=False)
    payload: bytes = field(compare=False, repr=False)
    sent_at: int = field(compare=False, default=0)


class MessageQueue:
    def __init__(self):
        self._heap: list[SimMessage] = []

    def push(self, message: SimMessage) -> None:
        heapq.heappush(self._heap, message)

    def __len__(self) -> int:
        return len(self._heap)

    def next_tick(self) -> int | None:
        return self._heap[0].deliver_at if self._heap else None


def deliver_messages(queue: MessageQueue, current_tick: int) -> list[SimMessage]:
    """Pop every message due by ``current_tick`` in (deliver_at, sender,
    sequence) order."""
    due = []
    while queue._heap and queue._heap[0].deliver_at <= current_tick:
        due.append(heapq.heappop(queue._heap))
    return due


# --- payload codecs -------------------------------------------------------------

_TASK = struct.Struct(">QIQQQdQQQQ")


def _encode_task(task: TrainingTask, partition: Dataset) -> bytes:
    n, d = partition.features.shape
    return (_TASK.pack(task.cycle_id, task.miner_id, task.shard_range[0], task.shard_range[1],
                       task.steps, task.learning_rate, task.batch_size, task.seed,
                       len(task.base_params), n)
            + d.to_bytes(4, "big")
            + np.asarray(task.base_params, dtype=">f8").tobytes()
            + partition.features.astype(">f8").tobytes()
            + partition.targets.astype(">f8").tobytes())


def _decode_task(data: bytes) -> tuple[TrainingTask, Dataset]:
    (cycle_id, miner_id, start, end, steps, lr, batch, seed, p, n) = _TASK.unpack_from(data)
    pos = _TASK.size
    d = int.from_bytes(data[pos:pos + 4], "big")
    pos += 4

    def take(count):
        nonlocal pos
        out = np.frombuffer(data[pos:pos + 8 * count], dtype=">f8").astype(np.float64)
        pos += 8 * count
        return out

    params = take(p)
    x = take(n * d).reshape(n, d)
    y = take(n)
    task = TrainingTask(cycle_id, miner_id, params, (start, end), steps, lr, batch, seed)
    return task, Dataset(x, y)


def _encode_proposal(p: BlockProposal) -> bytes:
    parts = [p.cycle_id.to_bytes(8, "big"), bytes(p.prev_hash), serialize_certificate(p.certificate),
             len(p.transactions).to_bytes(4, "big")]
    parts += [len(tx).to_bytes(4, "big") + tx for tx in p.transactions]
    return b"".join(parts)


def _decode_proposal(data: bytes) -> BlockProposal:
    cycle_id = int.from_bytes(data[:8], "big")
    prev = Hash256(data[8:40])
    cert = deserialize_certificate(data[40:40 + CERTIFICATE_SIZE])
    pos = 40 + CERTIFICATE_SIZE
    count = int.from_bytes(data[pos:pos + 4], "big")
    pos += 4
    txs = []
    for _ in range(count):
        length = int.from_bytes(data[pos:pos + 4], "big")
        txs.append(data[pos + 4:pos + 4 + length])
        pos += 4 + length
    return BlockProposal(cycle_id, prev, cert, tuple(txs))


# --- agents --------------------------------------------------------------------

class MinerAgent:
    """A miner with a fixed behavior profile.

    ``flops`` maps cycle id to the multiply-adds the agent spent training in
    that cycle.
    """

    def __init__(self, miner_id: int, keypair: KeyPair, behavior: Behavior,
                 compute_budget: float, spec: ModelSpec, server_pubkey: Point):
        self.miner_id = miner_id
        self.keypair = keypair
        self.behavior = Behavior(behavior)
        self.compute_budget = compute_budget
        self.spec = spec
        self.server_pubkey = server_pubkey
        self.flops: dict[int, int] = {}

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_bytes

    @property
    def online(self) -> bool:
        return self.behavior is not Behavior.OFFLINE

    def train(self, task: TrainingTask, partition: Dataset) -> TrainingReport | None:
        start, end = task.shard_range
        issued = np.asarray(task.base_params)[start:end]
        if self.behavior is Behavior.OFFLINE:
            return None
        if self.behavior is Behavior.LAZY:
            self.flops[task.cycle_id] = 0
            return TrainingReport(self.miner_id, ParameterShard(start, end, issued),
                                  end - start, 1.0, 0.5, task.steps)
        if self.behavior is Behavior.FALSIFIER:
            rng = np.random.default_rng(task.seed)
            fake = ParameterShard(start, end, rng.normal(scale=3.0, size=end - start))
            self.flops[task.cycle_id] = 0
            return TrainingReport(self.miner_id, fake, end - start, 1.0, 0.0, task.steps)

        spec = self.spec
        before = evaluate_loss(spec, task.base_params, partition)
        try:
            values, steps_used = sgd_train(spec, task.base_params, task.shard_range, partition,
                                           task.steps, task.learning_rate, task.batch_size, task.seed)
        except DivergenceDetected as exc:
            values, steps_used = issued.copy(), exc.steps_used
        params = np.array(task.base_params)
        params[start:end] = values
        try:
            after = evaluate_loss(spec, params, partition)
        except ArithmeticError:
            after = before
        rows = min(task.batch_size, len(partition))
        self.flops[task.cycle_id] = (2 * loss_flops(spec, len(partition))
                                     + sgd_flops(spec, steps_used, rows, end - start))
        return TrainingReport(self.miner_id, ParameterShard(start, end, values), end - start,
                              before, after, steps_used)

    def propose_block(self, proposal: BlockProposal) -> Block | None:
        if not self.online:
            return None
        return build_certificate_block(proposal)

    def validate_block(self, chain: Chain, block: Block) -> bool | None:
        if not self.online:
            return None
        prev = chain.blocks[-1] if chain.blocks else None
        return check_block(prev, block, chain.height, self.server_pubkey, chain.target).ok


class Network:
    """Message fabric and transport for :func:`run_cycle`.

    Latency for each message is an integer drawn uniformly from
    ``[latency_min, latency_max]``; delivery happens at
    ``send_tick + 1 + latency``. The coordinator waits for replies until
    every message that could still arrive has had time to.
    """

    def __init__(self, agents: Sequence[MinerAgent], latency_min: int = 0, latency_max: int = 0,
                 latency_seed: int = 0,
                 tamper: Callable[[int, bytes], bytes] | None = None):
        self.agents = {a.miner_id: a for a in agents}
        self.latency = (latency_min, latency_max)
        self.rng = np.random.default_rng(latency_seed)
        self.queue = MessageQueue()
        self.tick = 0
        self.sequence = 0
        self.log: list[SimMessage] = []
        self.tamper = tamper
        self.chain: Chain = Chain()
        self._inbox: list[SimMessage] = []

    # fabric -------------------------------------------------------------------
    def send(self, kind: MessageKind, sender: int, receiver: int, payload: bytes) -> None:
        lo, hi = self.latency
        delay = int(self.rng.integers(lo, hi + 1)) if hi > lo else lo
        msg = SimMessage(self.tick + 1 + delay, sender, self.sequence, kind, receiver, payload, self.tick)
        self.sequence += 1
        self.queue.push(msg)
        self.log.append(msg)

    @property
    def timeout(self) -> int:
        return 2 * (self.latency[1] + 1)

    def run_until(self, deadline: int) -> None:
        while self.tick < deadline:
            self.tick += 1
            for msg in deliver_messages(self.queue, self.tick):
                self._dispatch(msg)

    def _dispatch(self, msg: SimMessage) -> None:
        if msg.receiver == COORDINATOR_ID:
            self._inbox.append(msg)
            return
        agent = self.agents[msg.receiver]
        if not agent.online:
            return
        if msg.kind is MessageKind.ASSIGN_TASK:
            task, partition = _decode_task(msg.payload)
            report = agent.train(task, partition)
            if report is not None:
                self.send(MessageKind.SUBMIT_UPDATE, agent.miner_id, COORDINATOR_ID,
                          encode_report(report))
        elif msg.kind is MessageKind.ANNOUNCE_WINNER and len(msg.payload) != _PUBLIC_ANNOUNCEMENT:
            block = agent.propose_block(_decode_proposal(msg.payload))
            if block is not None:
                raw = serialize_block(block)
                if self.tamper is not None:
                    raw = self.tamper(block.header.timestamp, raw)
                for receiver in [COORDINATOR_ID, *sorted(self.agents)]:
                    self.send(MessageKind.PROPOSE_BLOCK, agent.miner_id, receiver, raw)
        elif msg.kind is MessageKind.PROPOSE_BLOCK:
            try:
                block = deserialize_block(msg.payload)
                ok = agent.validate_block(self.chain, block)
            except ValueError:
                ok = False
            self.send(MessageKind.VALIDATION_RESULT, agent.miner_id, COORDINATOR_ID,
                      bytes([1 if ok else 0]) + hashlib.sha256(msg.payload).digest())

    def _drain(self, kind: MessageKind) -> list[SimMessage]:
        taken = [m for m in self._inbox if m.kind is kind]
        self._inbox = [m for m in self._inbox if m.kind is not kind]
        return taken

    # transport -----------------------------------------------------------------
    def register(self, miners):
        for m in miners:
            self.send(MessageKind.REGISTER, m.miner_id, COORDINATOR_ID,
                      m.public_key + struct.pack(">d", m.compute_budget))
        self.run_until(self.tick + self.timeout)
        ids = {m.sender for m in self._drain(MessageKind.REGISTER)}
        return [m for m in miners if m.miner_id in ids]

    def dispatch_tasks(self, tasks, miners, partitions):
        for mid in sorted(tasks):
            self.send(MessageKind.ASSIGN_TASK, COORDINATOR_ID, mid,
                      _encode_task(tasks[mid], partitions[mid]))
        self.run_until(self.tick + self.timeout)
        reports = {}
        for msg in self._drain(MessageKind.SUBMIT_UPDATE):
            try:
                reports.setdefault(msg.sender, decode_report(msg.payload))
            except (ValueError, struct.error):
                continue
        return reports

    def announce(self, kind: str, payload: bytes) -> None:
        mk = MessageKind.PUBLISH_SCORES if kind == "PublishScores" else MessageKind.ANNOUNCE_WINNER
        for mid in sorted(self.agents):
            self.send(mk, COORDINATOR_ID, mid, payload)

    def request_block(self, winner, proposal):
        winner_id = winner.miner_id
        self.send(MessageKind.ANNOUNCE_WINNER, COORDINATOR_ID, winner_id, _encode_proposal(proposal))
        self.run_until(self.tick + self.timeout)
        for msg in self._drain(MessageKind.PROPOSE_BLOCK):
            if msg.sender == winner_id:
                try:
                    return deserialize_block(msg.payload)
                except ValueError:
                    return None
        return None

    def collect_validations(self, block, chain, validators):
        # the proposer already broadcast the block; wait for verdicts on it
        self.run_until(self.tick + self.timeout)
        digest = hashlib.sha256(serialize_block(block)).digest()
        wanted = {v.miner_id for v in validators}
        verdicts = {}
        for msg in self._drain(MessageKind.VALIDATION_RESULT):
            if msg.sender in wanted and msg.payload[1:] == digest:
                verdicts[msg.sender] = msg.payload[0] == 1
        return verdicts


# --- scenario runs ------------------------------------------------------------------

@dataclass
class UsefulnessMetric:
    """Counted work. ``hash_ops`` counts double-SHA-256 header evaluations."""

    hash_ops: int = 0
    training_flops: int = 0
    per_hash_op_cost: float = 1.0
    blocks: int = 0

    @property
    def useful_fraction(self) -> float:
        total = self.training_flops + self.hash_ops * self.per_hash_op_cost
        return self.training_flops / total if total > 0 else 0.0


@dataclass
class CycleMetrics:
    cycle_id: int
    winner_id: int | None
    weights: dict[int, float]
    chain_height: int
    hash_ops: int
    training_flops: int
    per_hash_op_cost: float = 1.0

    @property
    def useful_fraction(self) -> float:
        return UsefulnessMetric(self.hash_ops, self.training_flops, self.per_hash_op_cost).useful_fraction


class ScenarioResult(NamedTuple):
    chain: Chain
    records: list[CycleRecord]
    metrics: UsefulnessMetric
    ledger: dict[int, int]
    server_pubkey: Point
    cycle_metrics: list[CycleMetrics]


class BaselineResult(NamedTuple):
    chain: Chain
    metrics: UsefulnessMetric
    attempts: list[int]
    failed_cycles: list[int]


@dataclass(frozen=True)
class ComparisonReport:
    training_useful_fraction: float
    baseline_useful_fraction: float
    difference: float
    chain_height: int

    @property
    def training_strictly_more_useful(self) -> bool:
        return self.training_useful_fraction > self.baseline_useful_fraction


def _derive_seed(seed: int, *parts: object) -> bytes:
    return hashlib.sha256("|".join(str(p) for p in (seed, *parts)).encode()).digest()


def server_keypair(seed: int) -> KeyPair:
    return generate_keypair(_derive_seed(seed, "server"))


def miner_keypair(seed: int, miner_id: int) -> KeyPair:
    return generate_keypair(_derive_seed(seed, "miner", miner_id))


def cycle_transactions(seed: int, cycle_id: int, count: int = 2) -> tuple[bytes, ...]:
    """Deterministic filler transactions carried by every block of a cycle."""
    return tuple(_derive_seed(seed, "tx", cycle_id, i) for i in range(count))


def _validate_scenario(config: ScenarioConfig) -> None:
    if not config.miners:
        raise ConfigInvalid("need at least one miner")
    if config.cycles < 1:
        raise ConfigInvalid("need at least one cycle")
    if len(config.miners) > config.model.parameter_count:
        raise ConfigInvalid("more miners than model parameters")
    if config.dataset.n_examples < 2 * len(config.miners):
        raise ConfigInvalid("need at least two examples per miner")


def run_scenario(config: ScenarioConfig, *,
                 tamper: Callable[[int, bytes], bytes] | None = None) -> ScenarioResult:
    """Drive ``config.cycles`` cycles over the simulated network.

    ``tamper(cycle_id, block_bytes)`` is a test hook that may rewrite a
    proposed block in transit to every receiver.
    """
    _validate_scenario(config)
    spec = config.model
    train, validation = make_synthetic_dataset(config.seed, config.dataset.n_examples,
                                               spec.input_dim, config.dataset.noise_std)
    server_key = server_keypair(config.seed)
    agents = [MinerAgent(i, miner_keypair(config.seed, i), m.behavior, m.compute_budget,
                         spec, server_key.public_point)
              for i, m in enumerate(config.miners)]
    coordinator = Coordinator(server_key, spec, train, validation,
                              initial_params(spec, config.seed), seed=config.seed)
    network = Network(agents, config.network.latency_min, config.network.latency_max,
                      latency_seed=config.seed, tamper=tamper)
    chain = Chain(server_pubkey=server_key.public_point)
    records: list[CycleRecord] = []
    per_cycle: list[CycleMetrics] = []
    total = UsefulnessMetric(per_hash_op_cost=config.per_hash_op_cost)

    for cycle_id in range(config.cycles):
        coordinator.cycle_id = cycle_id
        txs = cycle_transactions(config.seed, cycle_id)
        network.chain = chain
        try:
            result = run_cycle(coordinator, agents, config.cycle, chain, network, txs)
            record = result.record
            chain = result.chain
            hash_ops = 1
        except CycleAborted as exc:
            record = exc.record
            hash_ops = 0
        flops = sum(agents[e.miner_id].flops.get(cycle_id, 0) for e in record.miners if e.accepted)
        total.hash_ops += hash_ops
        total.training_flops += flops
        records.append(record)
        per_cycle.append(CycleMetrics(cycle_id, record.winner_id if record.status == "ok" else None,
                                      {e.miner_id: e.weight for e in record.miners},
                                      chain.height, hash_ops, flops, config.per_hash_op_cost))
    total.blocks = chain.height
    return ScenarioResult(chain, records, total, dict(coordinator.balances),
                          server_key.public_point, per_cycle)


def run_baseline_pow(config: ScenarioConfig) -> BaselineResult:
    """Nonce-search chain of ``config.cycles`` blocks over the same
    transactions a training run would carry."""
    _validate_scenario(config)
    target = target_from_bits(config.pow_baseline.difficulty_bits)
    chain = Chain(target=target)
    metric = UsefulnessMetric(per_hash_op_cost=config.per_hash_op_cost)
    miner_pub = miner_keypair(config.seed, 0).public_bytes
    attempts_log, failed = [], []
    for cycle_id in range(config.cycles):
        txs = (coinbase_transaction(cycle_id, miner_pub, config.cycle.reward),
               *cycle_transactions(config.seed, cycle_id))
        template = BlockHeader(BLOCK_VERSION, chain.tip_hash(), merkle_root(txs), cycle_id,
                               ProofKind.POW_NONCE, 0)
        try:
            nonce, attempts = pow_mine(template, target, config.pow_baseline.max_attempts)
        except TargetUnreachable as exc:
            metric.hash_ops += exc.attempts
            failed.append(cycle_id)
            continue
        metric.hash_ops += attempts
        attempts_log.append(attempts)
        chain = append_block(chain, Block(replace(template, nonce=nonce), txs))
    metric.blocks = chain.height
    return BaselineResult(chain, metric, attempts_log, failed)


def compare_usefulness(training: UsefulnessMetric, baseline: UsefulnessMetric) -> ComparisonReport:
    if training.blocks != baseline.blocks:
        raise HeightMismatch(f"training chain has {training.blocks} blocks, baseline {baseline.blocks}")
    t, b = training.useful_fraction, baseline.useful_fraction
    return ComparisonReport(t, b, t - b, training.blocks)
