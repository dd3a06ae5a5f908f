"""Exception types raised across the pipeline."""


class AdPipeError(Exception):
    """Base class for all pipeline errors."""


class InvalidInputError(AdPipeError, ValueError):
    pass


class DegenerateInputError(AdPipeError, ValueError):
    pass


class BehindCameraError(AdPipeError, ValueError):
    pass


class NoIntersectionError(AdPipeError, ValueError):
    pass


class InvalidHullError(AdPipeError, ValueError):
    pass


class EmptyMaskError(AdPipeError, ValueError):
    pass


class NoCandidateError(AdPipeError):
    pass


class InsufficientStructureError(AdPipeError):
    pass


class InconsistentGeometryError(AdPipeError):
    pass


class NoAlignmentError(AdPipeError):
    pass


class PlacementFailedError(AdPipeError):
    pass


class InsufficientTextureError(AdPipeError):
    pass


class InvalidSpecError(AdPipeError, ValueError):
    pass


class ConfigError(AdPipeError, ValueError):
    """Configuration problem; ``lineno`` is set when it came from a file."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class StageError(AdPipeError):
    """Wraps a failure inside one named pipeline stage."""

    def __init__(self, stage, cause, diagnostics=None):
        self.stage = stage
        self.cause = cause
        self.diagnostics = diagnostics
        super().__init__(f"stage '{stage}' failed: {cause}")
