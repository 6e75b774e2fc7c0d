"""Exception hierarchy shared by every hyperdrive module."""


class HyperdriveError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(HyperdriveError, ValueError):
    pass


class ConfigurationError(HyperdriveError):
    pass


class SpectralCoverageError(HyperdriveError):
    """A requested wavelength lies outside the available spectral grid."""


class DegenerateInputError(HyperdriveError):
    pass


class ConvergenceError(HyperdriveError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EstimationError(HyperdriveError):
    pass


class MaskedPixelError(HyperdriveError):
    pass


class StitchError(HyperdriveError):
    pass


class MonotonicityError(HyperdriveError):
    """A message arrived with a timestamp older than the stream allows."""


class WireError(HyperdriveError):
    """Base class for malformed binary messages and capture files."""


class FormatError(WireError):
    pass


class LengthError(WireError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class VersionError(WireError):
    pass


class ChecksumError(WireError):
    pass


class EncodingError(WireError):
    pass


class ValidationError(HyperdriveError):
    pass


class StorageError(HyperdriveError):
    pass


class DegenerateRankError(HyperdriveError):
    pass


class NumericalError(HyperdriveError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UndefinedScoreError(HyperdriveError):
    pass
