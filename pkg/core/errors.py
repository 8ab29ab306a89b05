"""
core/errors.py
Exception hierarchy shared by every stage of the toolkit.
"""

from typing import Optional


class RovermapError(Exception):
    """Base class for all toolkit errors."""


# ── Argument / input errors ───────────────────────────────────────────────────

class ConfigError(RovermapError, ValueError):
    pass


class InvalidCloud(RovermapError, ValueError):
    pass


class InvalidTransform(RovermapError, ValueError):
    pass


class NonPositiveEdge(RovermapError, ValueError):
    pass


class NonPositiveRadius(RovermapError, ValueError):
    pass


class KExceedsSize(RovermapError, ValueError):
    pass


class LengthMismatch(RovermapError, ValueError):
    pass


class NotNeighbors(RovermapError, ValueError):
    pass


class ParseError(RovermapError, ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class EmptyFile(RovermapError, ValueError):
    pass


class IoError(RovermapError, OSError):
    pass


# ── Geometry ──────────────────────────────────────────────────────────────────

class EmptyIndex(RovermapError):
    pass


class EmptyCloud(RovermapError):
    pass


class TooFewPoints(RovermapError):
    pass


class MissingNormals(RovermapError):
    pass


class DegenerateGeometry(RovermapError):
    pass


# ── Registration ──────────────────────────────────────────────────────────────

class EmptyDescriptors(RovermapError):
    pass


class InsufficientInliers(RovermapError):
    def __init__(self, fraction: float, required: float):
        super().__init__(f"inlier fraction {fraction:.4f} below required {required:.4f}")
        self.fraction = fraction
        self.required = required


class NoCorrespondences(RovermapError):
    pass


class NoConstrainedPlane(RovermapError):
    pass


# ── Planning ──────────────────────────────────────────────────────────────────

class NoPath(RovermapError):
    pass


class LethalEndpoint(RovermapError):
    pass


class InconsistentState(RovermapError):
    pass


# ── Pipeline ──────────────────────────────────────────────────────────────────

class StageError(RovermapError):
    """A pipeline stage failed; `cause` holds the original error."""

    def __init__(self, stage: str, cause: Exception, index: Optional[int] = None):
        where = f"{stage}#{index}" if index is not None else stage
        super().__init__(f"stage '{where}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.index = index
