"""Exception types shared across the package."""

from __future__ import annotations


class SlamFiltersError(Exception):
    """Base class for all package-specific errors."""


class DegenerateGeometryError(SlamFiltersError, ValueError):
    """A landmark coincides with the agent, so the bearing is undefined."""


class IllConditionedError(SlamFiltersError, RuntimeError):
    """A linear solve was refused because the matrix is singular or nearly so."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class FilterDivergenceError(SlamFiltersError, RuntimeError):
    """A filter produced a non-finite state or covariance."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DatasetFormatError(SlamFiltersError, ValueError):
    """A dataset file is malformed. ``record`` is the offending trajectory index."""

    def __init__(self, message: str, record: int | None = None):
        super().__init__(message)
        self.record = record


class DatasetVersionError(DatasetFormatError):
    """A dataset file declares an unsupported format version."""


class CheckpointFormatError(SlamFiltersError, ValueError):
    """A model checkpoint file is malformed or has an unsupported version."""


class TrainingDivergenceError(SlamFiltersError, RuntimeError):
    """Training hit a non-finite loss, gradient, or parameter."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None,
                 phase: str | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.phase = phase


class ConfigError(SlamFiltersError, ValueError):
    """A CLI/config file failed validation. ``field`` names the bad entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
