"""Exception types raised across semloop."""


class SemloopError(Exception):
    """Base class for every error raised by this package."""


class UnknownSchemaError(SemloopError, KeyError):
    pass


class ScoreRangeError(SemloopError, ValueError):
    pass


class WindowError(SemloopError, ValueError):
    """A behavioral window violates one of its invariants."""


class WrongLengthError(WindowError):
    pass


class NonConsecutiveDatesError(WindowError):
    pass


class MixedSubjectsError(WindowError):
    pass


class UnknownFeatureKeyError(WindowError):
    pass


class IngestError(SemloopError, ValueError):
    pass


class MalformedCSVError(IngestError):
    pass


class UnknownFeatureColumnError(IngestError):
    pass


class LabelOutOfRangeError(IngestError):
    pass


class DuplicateLabelRowError(IngestError):
    pass


class SingleSubsetError(IngestError):
    pass


class InvalidConfigError(SemloopError, ValueError):
    pass


class EmptySummaryError(SemloopError, ValueError):
    pass


class ProviderError(SemloopError):
    """Failure talking to a text-generation provider."""


class TransportError(ProviderError):
    pass


class ProviderTimeoutError(ProviderError):
    pass


class MalformedResponseError(ProviderError):
    pass


class UnparseablePromptError(SemloopError, ValueError):
    pass


class ShapeMismatchError(SemloopError, ValueError):
    pass


class GroupTooSmallError(SemloopError, ValueError):
    pass


class MissingDecisionsError(SemloopError, ValueError):
    pass


class EmptySetError(SemloopError, ValueError):
    pass


class LengthMismatchError(SemloopError, ValueError):
    pass


class LeakageError(SemloopError):
    """A predictor was fitted on data from the subset it is evaluated on."""
