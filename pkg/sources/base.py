"""
sources/base.py
Abstract base class (interface) for scan sources, plus shared helpers
for reading text inputs.
"""

from abc import ABC, abstractmethod
from typing import Optional

from core.errors import IoError, ParseError
from core.geometry import Point3, PointCloud, RigidTransform


# ── Shared helpers ─────────────────────────────────────────────────────────────

def read_lines(path: str) -> list[str]:
    """Read a UTF-8 text file as lines, surfacing OS failures as IoError
    and undecodable bytes as a ParseError on the offending line."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise IoError(f"cannot read '{path}': {e}") from e
    try:
        return data.decode("utf-8").splitlines()
    except UnicodeDecodeError as e:
        line = data.count(b"\n", 0, e.start) + 1
        raise ParseError(path, line, f"not UTF-8 text ({e.reason})") from e


def strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


# ── Abstract source ────────────────────────────────────────────────────────────

class ScanSource(ABC):
    """Where the pipeline gets its scans from."""

    @abstractmethod
    def describe(self) -> str:
        """Short human-readable label used in logs and reports."""

    @abstractmethod
    def scans(self) -> list[PointCloud]:
        """Scans in acquisition order, each in its own sensor frame."""

    def ground_truth(self) -> Optional[list[RigidTransform]]:
        """Transforms taking scan i into scan 0's frame, when known."""
        return None

    def endpoints(self) -> tuple[Optional[Point3], Optional[Point3]]:
        """Suggested (start, goal) points in scan 0's frame, when known."""
        return None, None
