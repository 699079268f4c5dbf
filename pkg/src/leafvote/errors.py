"""Exception types raised across the toolkit."""


class LeafvoteError(Exception):
    """Base class for every error raised by leafvote."""


# label registry
class DuplicateClass(LeafvoteError, ValueError):
    pass


class EmptyRegistry(LeafvoteError, ValueError):
    pass


class UnknownClass(LeafvoteError, IndexError):
    pass


# data pipeline
class EmptyClass(LeafvoteError, ValueError):
    pass


class BadRatios(LeafvoteError, ValueError):
    pass


class BadImage(LeafvoteError, ValueError):
    pass


class ManifestError(LeafvoteError, ValueError):
    """A manifest or cache file could not be parsed."""


# models
class ProviderError(LeafvoteError, RuntimeError):
    """Backbone weights could not be obtained or failed verification."""


class UnknownArch(LeafvoteError, ValueError):
    pass


class BadBatch(LeafvoteError, ValueError):
    pass


# trainer
class EmptySplit(LeafvoteError, ValueError):
    pass


class DivergedTraining(LeafvoteError, RuntimeError):
    pass


# ensemble
class AlignmentError(LeafvoteError, ValueError):
    pass


class DegenerateWeights(LeafvoteError, ValueError):
    pass


class BadAccuracy(LeafvoteError, ValueError):
    pass


class BadSubsetSize(LeafvoteError, ValueError):
    pass


class BadProbabilities(LeafvoteError, ValueError):
    pass


# metrics
class LengthMismatch(LeafvoteError, ValueError):
    pass


# bench
class InsufficientSamples(LeafvoteError, ValueError):
    pass


class NoModels(InsufficientSamples):
    pass


class BadLatency(LeafvoteError, ValueError):
    pass


# reporting / pipeline
class ReportIOError(LeafvoteError, OSError):
    pass


class StageError(LeafvoteError, RuntimeError):
    """Wraps any failure inside a pipeline stage with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
