"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataError and subclasses -> 2, TrainingError -> 3.
"""


class FewsegError(Exception):
    """Base class for all package errors."""


class ConfigError(FewsegError):
    """Malformed or unknown configuration input."""


class DataError(FewsegError):
    """Invalid dataset contents, shapes, or file layout."""


class ShapeError(DataError):
    """Array shape inconsistent with the declared contract."""


class DomainError(DataError):
    """Array values outside the documented domain."""


class EmptyMaskError(DataError):
    """A mask became empty where a nonempty mask is required."""


class SamplingError(DataError):
    """Episode sampling could not satisfy its preconditions."""


class ProtocolError(DataError):
    """Evaluation protocol preconditions violated for a volume."""


class CheckpointError(DataError):
    """Checkpoint container missing, corrupt, or inconsistent."""


class TrainingError(FewsegError):
    """Optimization failure (non-finite loss or diverging run)."""
