"""Exception types raised across the package."""


class MetricDepthError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(MetricDepthError, ValueError):
    pass


class DegenerateBox(MetricDepthError, ValueError):
    pass


class NonPositiveResolution(MetricDepthError, ValueError):
    pass


class EmptyWindow(MetricDepthError, ValueError):
    pass


class FilterOnWrongSource(MetricDepthError, ValueError):
    pass


class DegenerateCloud(MetricDepthError, ValueError):
    pass


class PointAtViewpoint(MetricDepthError, ValueError):
    pass


class SizeMismatch(MetricDepthError, ValueError):
    pass


class EmptyPrompt(MetricDepthError, ValueError):
    pass


class OffsetOutOfRange(MetricDepthError, IndexError):
    pass


class EmptyOverlap(MetricDepthError, ValueError):
    pass


class NonPositiveGT(MetricDepthError, ValueError):
    pass


class DensifierContractViolation(MetricDepthError):
    pass


class BackendFailure(MetricDepthError):
    """An external densifier process exited nonzero or produced no output."""


class StageError(MetricDepthError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")

    def __reduce__(self):
        return (StageError, (self.stage, self.cause))
