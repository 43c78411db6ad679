"""Exception types raised across the package."""

from __future__ import annotations


class PoutError(Exception):
    """Base class for all package errors."""


# ledger
class EmptyTransactionSet(PoutError, ValueError):
    pass


class BlockRejected(PoutError):
    """A block failed validation against the chain tip."""


class LinkageMismatch(BlockRejected):
    pass


class MerkleMismatch(BlockRejected):
    pass


class ProofInvalid(BlockRejected):
    pass


class TargetUnreachable(PoutError):
    def __init__(self, attempts: int):
        super().__init__(f"no nonce below target after {attempts} attempts")
        self.attempts = attempts


# crypto
class NonFiniteMetric(PoutError, ValueError):
    pass


# training
class TooManyMiners(PoutError, ValueError):
    pass


class NonFiniteLoss(PoutError, ArithmeticError):
    pass


class DivergenceDetected(PoutError, ArithmeticError):
    def __init__(self, steps_used: int):
        super().__init__(f"parameters became non-finite at step {steps_used}")
        self.steps_used = steps_used


class OverlappingShards(PoutError, ValueError):
    pass


# consensus
class ShardRangeMismatch(PoutError, ValueError):
    pass


class DegenerateWeights(PoutError, ValueError):
    pass


class NoRegisteredMiners(PoutError):
    pass


class CycleAborted(PoutError):
    """A cycle ended without appending a block; ``record`` describes it."""

    def __init__(self, reason: str, record=None):
        super().__init__(reason)
        self.record = record


# netsim
class ConfigInvalid(PoutError, ValueError):
    pass


class HeightMismatch(PoutError, ValueError):
    pass


# config parsing
class ParseError(PoutError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class ValidationError(ParseError):
    pass
