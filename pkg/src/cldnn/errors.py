"""Exception types raised across the package."""


class CLDNNError(Exception):
    """Base class for all package errors."""


# -- feature extraction --
class EmptySignal(CLDNNError):
    pass


class BadBandEdges(CLDNNError):
    pass


class BadOrder(CLDNNError):
    pass


class UnsupportedRate(CLDNNError):
    pass


class FormatError(CLDNNError):
    """A binary or CSV artifact does not match its documented layout."""


# -- augmentation --
class CannotComputeSNR(CLDNNError):
    pass


class PoolTooSmall(CLDNNError):
    pass


# -- layers --
class GeometryError(CLDNNError):
    pass


class SpecError(CLDNNError):
    pass


class ShapeError(CLDNNError):
    pass


class StaleCache(CLDNNError):
    pass


# -- training --
class PartitionError(CLDNNError):
    pass


class MetricError(CLDNNError):
    pass


class DivergedError(CLDNNError):
    """Raised when the training loss becomes non-finite.

    ``params`` holds the last parameter set that produced a finite loss.
    """

    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history


# -- probing --
class ProbeError(CLDNNError):
    pass


class InfiniteRho(CLDNNError):
    pass


class LDAError(CLDNNError):
    pass


# -- harness --
class ConfigError(CLDNNError):
    """Invalid experiment configuration; ``key`` names the offending key when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
