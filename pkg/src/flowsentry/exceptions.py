"""Exception types shared across the package.

The CLI maps each family onto its own exit code, so callers can tell a bad
config apart from a missing artifact or a malformed dataset.
"""


class FlowSentryError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowSentryError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(FlowSentryError, ValueError):
    """A dataset could not be read or does not satisfy a precondition."""


class MissingLabelColumnError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class StratificationError(DataError):
    """A class has too few records to be split."""

    def __init__(self, label, count):
        self.label = label
        self.count = count
        super().__init__(
            f"class {label!r} has {count} record(s); at least 2 are needed to stratify"
        )


class MissingArtifactError(FlowSentryError):
    """A stage was invoked before the artifacts it depends on exist."""


class CheckpointError(FlowSentryError):
    """A checkpoint is corrupt, has an unknown version or mismatches its config."""


class TrainingError(FlowSentryError, RuntimeError):
    """Training diverged (non-finite loss or parameters)."""


class UndefinedMetricWarning(UserWarning):
    """A metric had a zero denominator and was reported as 0."""
