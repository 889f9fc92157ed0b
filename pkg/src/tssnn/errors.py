"""Exception types raised across the package."""


class TSSNNError(Exception):
    """Base class for all library errors."""


class DimensionError(TSSNNError, ValueError):
    """Tensor shapes disagree with what an operation requires."""


class ContractError(TSSNNError, ValueError):
    """A precondition on argument values was violated."""


class ConfigError(TSSNNError, ValueError):
    """A configuration value is invalid or inconsistent."""


class FormatError(TSSNNError, ValueError):
    """A binary file does not follow the expected layout."""


class IngestionError(TSSNNError, ValueError):
    """An external dataset could not be loaded."""


class TrainingError(TSSNNError, RuntimeError):
    """Training aborted, e.g. on a non-finite loss."""
