"""Exception hierarchy shared by every stage of the pipeline."""


class SlowtexError(Exception):
    """Base class; ``code`` is the machine-readable name printed by the CLI."""

    @property
    def code(self):
        return type(self).__name__


class NonFinite(SlowtexError, ValueError):
    pass


class NoConvergence(SlowtexError, RuntimeError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class SingularB(SlowtexError, ValueError):
    pass


class DimMismatch(SlowtexError, ValueError):
    pass


class UnsupportedFormat(SlowtexError, ValueError):
    pass


class CorruptHeader(SlowtexError, ValueError):
    pass


class EmptyVideo(SlowtexError, ValueError):
    pass


class DegenerateSize(SlowtexError, ValueError):
    pass


class EmptyDataset(SlowtexError, ValueError):
    pass


class DuplicatePath(SlowtexError, ValueError):
    pass


class TooSmallVideo(SlowtexError, ValueError):
    pass


class TooFewSamples(SlowtexError, ValueError):
    pass


class AllZeroVariations(SlowtexError, ValueError):
    pass


class AllDropped(SlowtexError, ValueError):
    pass


class FilterLargerThanFrame(SlowtexError, ValueError):
    pass


class TooFewFrames(SlowtexError, ValueError):
    pass


class VolumeLargerThanMaps(SlowtexError, ValueError):
    pass


class EmptyFeatureSet(SlowtexError, ValueError):
    pass


class MissingSet(SlowtexError, KeyError):
    pass


class SingleClass(SlowtexError, ValueError):
    pass


class EmptyData(SlowtexError, ValueError):
    pass


class TooFewVideos(SlowtexError, ValueError):
    pass


class InsufficientPerClass(SlowtexError, ValueError):
    pass


class BadMagic(CorruptHeader):
    pass
