"""Exception types raised across photonstat.

Errors are grouped so the CLI can map them onto exit codes: format and I/O
problems, configuration problems, and analysis failures.
"""


class PhotonstatError(Exception):
    """Base class for every error raised by this package."""


# -- stream format / I/O ---------------------------------------------------


class StreamFormatError(PhotonstatError):
    """A stream file or record array violates the PSTR contract."""


class MalformedHeader(StreamFormatError):
    pass


class TruncatedFile(StreamFormatError):
    pass


class MalformedRecord(StreamFormatError):
    """A record field is out of range (channel, microtime, reserved bytes)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class OutOfOrderRecord(StreamFormatError):
    """Records are not sorted by absolute time.

    ``index`` is the position of the first offending record.
    """

    def __init__(self, index, message=None):
        super().__init__(message or f"record {index} precedes record {index - 1} in time")
        self.index = index


class IoFailure(PhotonstatError):
    pass


class ParseError(PhotonstatError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvalidWindow(PhotonstatError, ValueError):
    pass


# -- configuration ---------------------------------------------------------


class InvalidModel(PhotonstatError, ValueError):
    """Emitter model or simulation config is inconsistent.

    ``field`` names the offending parameter when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


# -- analysis --------------------------------------------------------------


class AnalysisError(PhotonstatError):
    """An analysis step cannot produce a trustworthy result."""


class EmptyChannel(AnalysisError):
    pass


class SpanTooLarge(AnalysisError):
    pass


class TooLarge(AnalysisError):
    pass


class NoPlateau(AnalysisError):
    pass


class DurationTooShort(AnalysisError):
    pass


class FitDiverged(AnalysisError):
    pass


class InsufficientRange(AnalysisError):
    pass


class InsufficientCounts(AnalysisError):
    pass


class InsufficientPoints(AnalysisError):
    pass


class NoPeak(AnalysisError):
    pass


class Unimodal(AnalysisError):
    pass


class EmptySelection(AnalysisError):
    pass


class TooFewSamples(AnalysisError):
    pass


class MismatchedTraces(AnalysisError):
    pass
