"""Exception hierarchy shared by every module."""


class CausalRecError(Exception):
    """Base class for all package errors."""


class DimensionError(CausalRecError, ValueError):
    pass


class NumericError(CausalRecError, FloatingPointError):
    """NaN/Inf produced where finite values are required."""


class ContractError(CausalRecError, ValueError):
    """A documented precondition was violated by the caller."""


class TapeError(CausalRecError, RuntimeError):
    pass


class IngestionError(CausalRecError):
    pass


class SamplingError(CausalRecError, ValueError):
    pass


class MetricError(CausalRecError, ValueError):
    """Metric requested over an empty user set."""


class CheckpointError(CausalRecError):
    pass
