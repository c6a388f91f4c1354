class CFlowError(Exception):
    """Base error. Carries optional track/frame context for skip attribution."""

    def __init__(self, message="", *, track_id=None, frame_index=None):
        super().__init__(message)
        self.track_id = track_id
        self.frame_index = frame_index

    def at(self, track_id=None, frame_index=None):
        """Attach context (keeps any context that is already set) and return self."""
        if self.track_id is None:
            self.track_id = track_id
        if self.frame_index is None:
            self.frame_index = frame_index
        return self

    @property
    def cause(self):
        return type(self).__name__

    def __str__(self):
        base = super().__str__()
        where = []
        if self.track_id is not None:
            where.append(f"track={self.track_id}")
        if self.frame_index is not None:
            where.append(f"frame={self.frame_index}")
        return f"{base} ({', '.join(where)})" if where else base


class ConfigError(CFlowError):
    pass


# --- flow files ---

class FloFormatError(CFlowError):
    pass


class BadMagic(FloFormatError):
    pass


class Truncated(FloFormatError):
    def __init__(self, message="", *, expected=None, actual=None, **kwargs):
        super().__init__(message, **kwargs)
        self.expected = expected
        self.actual = actual


class BadDims(FloFormatError):
    pass


class NonFinite(FloFormatError):
    pass


class TrailingData(FloFormatError):
    pass


class EmptyRegion(CFlowError):
    pass


class FlowUnavailable(CFlowError):
    pass


# --- tracks ---

class InvalidBox(CFlowError, ValueError):
    pass


class TrackError(CFlowError):
    pass


class TrackParseError(TrackError):
    def __init__(self, message="", *, line=None, **kwargs):
        super().__init__(f"line {line}: {message}" if line is not None else message, **kwargs)
        self.line = line


class MissingField(TrackParseError):
    pass


class OrderError(TrackError):
    pass


# --- c-flow windows ---

class WindowError(CFlowError):
    pass


class InsufficientWindow(WindowError):
    pass


class UnsortedWindow(WindowError):
    pass


class MissingCurrent(WindowError):
    pass


class WindowSpanError(WindowError):
    pass


class DegenerateAbscissa(CFlowError):
    pass


# --- hypotheses ---

class HypothesisError(CFlowError):
    pass


class TooFewDetections(HypothesisError):
    pass


class BadTarget(HypothesisError):
    pass


# --- synthetic scenes / evaluation ---

class SpecError(CFlowError):
    pass


class EvalError(CFlowError):
    pass


class DegenerateVariance(EvalError):
    pass


class EmptyInput(EvalError):
    pass


# Skips caused by these are part of normal operation (track starts, short tracks).
EXPECTED_SKIPS = (InsufficientWindow, TooFewDetections)
