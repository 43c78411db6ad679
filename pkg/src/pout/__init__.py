"""Proof of useful training: a deterministic desk-scale consensus simulator."""

from .hashing import Hash256, double_sha256, merkle_root
from .crypto import (
    Certificate, KeyPair, Point, Signature, generate_keypair, issue_certificate,
    sign, verify, verify_certificate,
)
from .ledger import (
    Block, BlockHeader, Chain, ProofKind, append_block, pow_mine, pow_verify, validate_chain,
)
from .training import ModelSpec, Dataset, TrainingReport, make_synthetic_dataset, sgd_train
from .consensus import (
    CycleConfig, CycleRecord, Coordinator, audit_record, lottery_seed, run_cycle,
    score_contribution, weighted_lottery,
)
from .config import ScenarioConfig, parse_config
from .netsim import compare_usefulness, run_baseline_pow, run_scenario

__version__ = "0.1.0"
