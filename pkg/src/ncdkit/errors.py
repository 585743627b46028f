"""Exception types shared across the package."""


class NcdError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NcdError):
    """Invalid hyperparameter, config file, or run setup."""


class DimensionError(NcdError):
    """Array shapes do not conform."""


class NumericError(NcdError):
    """Non-finite value produced where finiteness is required."""


class DegenerateInputError(NcdError):
    """Input is numerically degenerate (e.g. a zero-norm row)."""


class BatchError(NcdError):
    """Malformed training batch."""


class PreconditionError(NcdError):
    """A documented call contract was violated."""


class InputError(NcdError):
    """Missing or invalid forward-pass input."""


class ParseError(NcdError):
    """Malformed dataset or checkpoint file."""


class SamplingError(NcdError):
    """Batch composition cannot be satisfied by the dataset."""
