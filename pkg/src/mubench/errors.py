"""Exception types shared across the package."""


class MuError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MuError):
    """A value violates an operation's preconditions."""


class ShapeMismatch(MuError):
    """Array shapes or parameter layouts disagree."""


class EmptyInput(MuError):
    """An operation received an empty batch or dataset."""


class NumericError(MuError):
    """Non-finite values where finite ones are required."""


class CsvParseError(MuError):
    """A CSV cell or structure could not be parsed."""


class LabelDomainError(MuError):
    """A label outside {0, 1}."""


class EmptyDatasetError(MuError):
    """A dataset with no data rows."""


class NotFound(MuError):
    """Lookup of a missing id, checkpoint or increment record."""


class AlreadyRevoked(MuError):
    """The sample id was revoked by an earlier request."""


class PolicyViolation(MuError):
    """An increment write outside the recorded slice range."""


class StoreCorruption(MuError):
    """Checksum or framing mismatch in a persisted store."""


class StoreVersionError(MuError):
    """Unsupported on-disk format version."""


class DispatchError(MuError):
    """A strategy was invoked outside its dispatch region."""


class TrainingDiverged(MuError):
    """Training produced non-finite loss, gradients or parameters."""


class DegenerateAttackSet(MuError):
    """Attack training data contains a single membership class."""


class ConfigError(MuError):
    """Invalid experiment configuration."""
