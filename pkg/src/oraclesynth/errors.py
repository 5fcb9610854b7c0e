"""Exception hierarchy.

Every error raised on purpose by the package derives from ``SynthError`` so the
CLI can map it to an exit code. ``ConfigError`` marks problems with user input
(bad flags, bad JSON, missing files) as opposed to failures inside a component.
"""


class SynthError(Exception):
    pass


class ConfigError(SynthError, ValueError):
    pass


# data-domain

class SchemaError(ConfigError):
    pass


class UnknownCategoricalValue(SynthError, ValueError):
    def __init__(self, row: int, attr: str, value: str):
        super().__init__(f"row {row}: value {value!r} not declared for attribute {attr!r}")
        self.row = row
        self.attr = attr
        self.value = value


class MalformedRow(SynthError, ValueError):
    def __init__(self, row: int, reason: str = ""):
        msg = f"row {row} is malformed"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.row = row


class EmptyFile(SynthError, ValueError):
    pass


class IoFailure(SynthError, OSError):
    pass


# marginal-workload

class ArityTooLarge(SynthError, ValueError):
    pass


class TooManyMarginals(SynthError, ValueError):
    pass


class DimensionMismatch(SynthError, ValueError):
    pass


class EmptyDataset(SynthError, ValueError):
    pass


# privacy-core

class DeltaOutOfRange(SynthError, ValueError):
    pass


class ChargeAfterHalt(SynthError, RuntimeError):
    pass


class EmptyCandidates(SynthError, ValueError):
    pass


# optimization-oracle

class SearchSpaceTooLarge(SynthError, ValueError):
    pass


# engines

class EmptySeparator(SynthError, ValueError):
    pass


class LedgerHalted(SynthError, RuntimeError):
    pass


class RequiresExactOracle(SynthError, ValueError):
    pass


class DegenerateWorkload(SynthError, ValueError):
    pass


class PoolUnderflow(SynthError, RuntimeError):
    pass


class BudgetExceeded(SynthError, RuntimeError):
    pass


# harness

class MismatchedWorkloads(SynthError, ValueError):
    pass
