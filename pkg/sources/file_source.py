"""
sources/file_source.py
Cloud files on disk: plain "x y z" text or ASCII PCD.
"""

import math
from typing import Sequence

import numpy as np

from config.settings import log
from core.errors import EmptyFile, ParseError
from core.geometry import PointCloud
from sources.base import ScanSource, read_lines, strip_comment

_PCD_HEADER_KEYS = {
    "VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA",
}


def _coords(path: str, lineno: int, tokens: Sequence[str]) -> tuple[float, float, float]:
    try:
        xyz = tuple(float(t) for t in tokens)
    except ValueError:
        raise ParseError(path, lineno, f"non-numeric coordinate in {' '.join(tokens)!r}") from None
    if not all(math.isfinite(v) for v in xyz):
        raise ParseError(path, lineno, "coordinates must be finite")
    return xyz


def _is_pcd(path: str, lines: list[str]) -> bool:
    if path.lower().endswith(".pcd"):
        return True
    for line in lines:
        text = strip_comment(line)
        if text:
            return text.split()[0].upper() in _PCD_HEADER_KEYS
    return False


def _parse_xyz(path: str, lines: list[str]) -> list[tuple[float, float, float]]:
    points = []
    for lineno, line in enumerate(lines, start=1):
        text = strip_comment(line)
        if not text:
            continue
        tokens = text.split()
        if len(tokens) != 3:
            raise ParseError(path, lineno, f"expected 3 values, got {len(tokens)}")
        points.append(_coords(path, lineno, tokens))
    return points


def _parse_pcd(path: str, lines: list[str]) -> list[tuple[float, float, float]]:
    columns = None
    expected = None
    data_start = None
    for lineno, line in enumerate(lines, start=1):
        text = strip_comment(line)
        if not text:
            continue
        key, *values = text.split()
        key = key.upper()
        if key == "FIELDS":
            names = [v.lower() for v in values]
            if not {"x", "y", "z"} <= set(names):
                raise ParseError(path, lineno, "FIELDS must declare x y z")
            columns = (names.index("x"), names.index("y"), names.index("z"), len(names))
        elif key == "POINTS":
            try:
                expected = int(values[0])
            except (IndexError, ValueError):
                raise ParseError(path, lineno, "POINTS needs an integer count") from None
        elif key == "DATA":
            if not values or values[0].lower() != "ascii":
                raise ParseError(path, lineno, "only DATA ascii is supported")
            data_start = lineno
            break
        elif key not in _PCD_HEADER_KEYS:
            raise ParseError(path, lineno, f"unexpected header entry '{key}'")

    if data_start is None:
        raise ParseError(path, len(lines), "missing DATA ascii section")
    if columns is None:
        raise ParseError(path, data_start, "DATA before FIELDS")

    ix, iy, iz, width = columns
    points = []
    for lineno in range(data_start + 1, len(lines) + 1):
        text = strip_comment(lines[lineno - 1])
        if not text:
            continue
        tokens = text.split()
        if len(tokens) != width:
            raise ParseError(path, lineno, f"expected {width} values, got {len(tokens)}")
        points.append(_coords(path, lineno, (tokens[ix], tokens[iy], tokens[iz])))

    if expected is not None and expected != len(points):
        log.warning(f"[Sources] {path}: header declares {expected} points, found {len(points)}")
    return points


def load_cloud(path: str) -> PointCloud:
    """Parse a cloud file (meters). Format is detected from the header."""
    lines = read_lines(path)
    points = _parse_pcd(path, lines) if _is_pcd(path, lines) else _parse_xyz(path, lines)
    if not points:
        raise EmptyFile(f"{path}: no points")
    log.debug(f"[Sources] loaded {len(points)} points from {path}")
    return PointCloud(np.array(points, dtype=np.float64))


class FileSource(ScanSource):
    def __init__(self, paths: Sequence[str]):
        self.paths = list(paths)

    def describe(self) -> str:
        return ",".join(self.paths)

    def scans(self) -> list[PointCloud]:
        return [load_cloud(p) for p in self.paths]
