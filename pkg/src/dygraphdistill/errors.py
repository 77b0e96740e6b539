"""Exception types raised across the package."""


class DyGraphDistillError(Exception):
    """Base class for all package errors."""


class DimensionError(DyGraphDistillError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateRowError(DyGraphDistillError):
    """A softmax row has no finite entry left after masking."""


class NormalizationError(DyGraphDistillError):
    """An input that must be a probability distribution is not one."""


class ContractError(DyGraphDistillError):
    """A caller violated an API precondition (non-scalar loss, missing gradients, ...)."""


class CoverageError(DyGraphDistillError):
    """Required embeddings are missing for nodes that an operation must cover."""


class SamplingError(DyGraphDistillError):
    """A rejection sampler exhausted its attempt budget."""


class DegenerateDataError(DyGraphDistillError):
    """A dataset lacks the variety an estimator needs (e.g. a single class label)."""


class UndefinedMetricError(DyGraphDistillError):
    """A metric is undefined for the given inputs (e.g. AUC with one class)."""


class ParseError(DyGraphDistillError):
    """A text input could not be parsed; carries the offending line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(DyGraphDistillError):
    """An experiment configuration is invalid or contains unknown keys."""


class TrainingDivergedError(DyGraphDistillError):
    """Training produced a non-finite loss."""
