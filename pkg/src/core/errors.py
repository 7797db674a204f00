"""Exception hierarchy for aad-evalkit.

Library code raises these; only the CLI turns them into exit codes.
"""

from typing import Optional


class EvalKitError(Exception):
    """Base class for every error raised by aad-evalkit."""

    exit_code = 1


# Validation failures (exit code 2)

class ValidationError(EvalKitError):
    exit_code = 2


class InvalidStimulusId(ValidationError):
    pass


class InvalidPair(ValidationError):
    """A stimulus cannot compete with itself."""


class MetadataError(ValidationError):
    """Trial metadata problem reported with its file/line/field location."""

    def __init__(self, message: str, source: Optional[str] = None,
                 line: Optional[int] = None, field: Optional[str] = None):
        self.message = message
        self.source = source
        self.line = line
        self.field = field
        location = ":".join(str(part) for part in (source, line) if part is not None)
        if field:
            location = f"{location} [{field}]" if location else f"[{field}]"
        super().__init__(f"{location}: {message}" if location else message)


class DuplicateTrialId(MetadataError):
    pass


class AttendedAmongUnattended(MetadataError):
    pass


class EmptyUnattended(MetadataError):
    pass


class MalformedRow(MetadataError):
    pass


class EmptyDataset(ValidationError):
    pass


class NoFeasibleSubset(ValidationError):
    pass


class PairUndefined(ValidationError):
    pass


class NeedThreeFolds(ValidationError):
    pass


class InsufficientKeys(ValidationError):
    pass


class PlanMismatch(ValidationError):
    pass


class UnknownTrial(ValidationError):
    pass


class ConstantSeries(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class NoFullWindow(ValidationError):
    pass


class EmptyCompetitors(ValidationError):
    pass


class AllZeroDifferences(ValidationError):
    pass


class TooFewPairs(ValidationError):
    pass


class InvalidProbability(ValidationError):
    pass


class InfeasibleBalance(ValidationError):
    pass


class ChannelMismatch(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class InconsistentShapes(ValidationError):
    pass


class MissingEnvelope(ValidationError):
    pass


class SchemaVersionMismatch(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class SignalFileError(ValidationError):
    pass


class InconsistentResults(ValidationError):
    """Stored aggregates disagree with the per-partition values they summarize."""


# Leakage (exit code 3)

class LeakageError(EvalKitError):
    exit_code = 3


class LeakageDetected(LeakageError):
    pass


class MemorizationLeak(LeakageError):
    """A memorizing decoder would store an envelope of a held-out stimulus pair."""


# Training failures (exit code 4)

class TrainingError(EvalKitError):
    exit_code = 4


class SingularSystem(TrainingError):
    pass


class Diverged(TrainingError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch} (loss={loss})")


class PartitionFailure(TrainingError):
    """Wraps an error raised while processing the (t, v) partition."""

    def __init__(self, t: int, v: int, cause: Exception):
        self.t = t
        self.v = v
        self.cause = cause
        exit_code = getattr(cause, "exit_code", TrainingError.exit_code)
        self.exit_code = exit_code
        super().__init__(f"Partition (t={t}, v={v}) failed: {cause}")
