from typing import Any


class IterSentinelError(Exception):
    """
    Base class for every recoverable error raised by the pipeline.

    Parameters
    ----------
    message : str
        Human readable description of the failure.
    details : dict[str, Any] | None, optional
        Machine readable context, serialized to stderr by the CLI.

    Attributes
    ----------
    exit_code : int
        Process exit code the CLI uses when this error escapes a command.
    """

    exit_code: int = 1

    def __init__(self, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> dict[str, Any]:
        """
        Render the error as the JSON object printed on stderr.

        Returns
        -------
        dict[str, Any]
            Error type, message, details and exit code.
        """
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": self.details,
            "exit_code": self.exit_code,
        }


class ConfigError(IterSentinelError):
    """Invalid or unreadable configuration."""


class RunDirectoryLocked(IterSentinelError):
    """Another process holds the advisory lock of an output directory."""


# trace-model

class InvalidTrace(IterSentinelError):
    """A trace file failed validation."""


class MalformedEvent(IterSentinelError):
    """A trace record could not be decoded into a TraceEvent."""

    def __init__(self, message: str, byte_offset: int | None = None, details: dict[str, Any] | None = None) -> None:
        merged = dict(details or {})
        merged["byte_offset"] = byte_offset
        super().__init__(message, merged)
        self.byte_offset = byte_offset


# ingest-align

class NoBeacons(IterSentinelError):
    """A clock domain has no synchronization beacon."""


class InconsistentBeacons(IterSentinelError):
    """Beacon residuals exceed the calibration tolerance."""


class AlreadyCalibrated(IterSentinelError):
    """Calibration applied to an event that is already on the unified timeline."""


class DuplicateCorrelation(IterSentinelError):
    """A correlation id appears on two host-side events."""


class ConflictingTopology(IterSentinelError):
    """A (commHash, rank) pair maps to two different devices."""


# cycle-engine

class NoAnchorFound(IterSentinelError):
    """No function is called often enough to delimit iteration cycles."""


class MissingWorkloadArgs(IterSentinelError):
    """A cycle carries no event with the workload arguments."""


# baseline-predictor

class InsufficientData(IterSentinelError):
    """Too few samples to train a model."""


class InvalidTargets(IterSentinelError):
    """Latency targets must be positive and finite."""


class FeatureMismatch(IterSentinelError):
    """Feature vector does not match the schema of the trained model."""


class EmptyTestSet(IterSentinelError):
    """Evaluation requested on an empty sample set."""


class SchemaVersionMismatch(IterSentinelError):
    """Persisted model was written by an incompatible schema version."""


# anomaly-detector

class NonPositiveLatency(IterSentinelError):
    """Observed latency must be strictly positive."""


class InsufficientCalibration(IterSentinelError):
    """Too few calibration residuals to derive a control limit."""


class NoLabels(IterSentinelError):
    """Strategy evaluation needs ground-truth labels."""


class EpisodeNotFound(IterSentinelError):
    """No alert episode with the requested id."""


# rca-ranker

class EmptySeries(IterSentinelError):
    """Counter series has no samples."""


class InsufficientCycles(IterSentinelError):
    """Too few normal or abnormal cycles to score suspects."""


# simkit

class InvalidProfile(IterSentinelError):
    """Workload profile ranges are inconsistent."""


class ConfigConflict(IterSentinelError):
    """Generator configuration is internally inconsistent."""


class UnlabeledEffect(IterSentinelError):
    """A fault would not change the trace, so its labels carry no signal."""
