"""
render/export.py
File outputs: binary PGM costmaps, binary PPM overlays, CSV paths,
xyz clouds and text reports, plus the readers used to load them back.

Every writer goes through `atomic_write`: bytes land in a temp file in the
destination directory and are renamed over the target, so a failed write
never leaves a partial file behind.
"""

import os
import tempfile

import numpy as np

from config.settings import log
from core.costmap import CostField
from core.errors import IoError, ParseError
from core.geometry import PointCloud
from core.planner import GridPath, GridVertex

RED   = (255, 0, 0)
GREEN = (0, 255, 0)
BLUE  = (0, 0, 255)


# ── Atomic writes ─────────────────────────────────────────────────────────────

def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    tmp = None
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as e:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write '{path}': {e}") from e
    log.debug(f"[Export] wrote {len(data)} bytes to {path}")


# ── Pixel mapping ─────────────────────────────────────────────────────────────

def costfield_pixels(field: CostField) -> np.ndarray:
    """uint8 gray levels: 0 for lethal, else round(255·(1 − min(p, 1)))."""
    free = np.floor(255.0 * (1.0 - np.minimum(field.penalty, 1.0)) + 0.5)
    return np.where(field.lethal, 0, free).astype(np.uint8)


def overlay_pixels(field: CostField, path: GridPath) -> np.ndarray:
    """(H, W, 3) grayscale costmap with the path drawn on top: interior
    vertices red, start green, goal blue."""
    rgb = np.repeat(costfield_pixels(field)[:, :, None], 3, axis=2)
    if path.vertices:
        for row, col in path.vertices[1:-1]:
            rgb[row, col] = RED
        rgb[path.vertices[-1]] = BLUE
        rgb[path.vertices[0]] = GREEN
    return rgb


# ── Writers ───────────────────────────────────────────────────────────────────

def save_costfield_pgm(field: CostField, path: str) -> None:
    pixels = costfield_pixels(field)
    header = f"P5\n{field.width} {field.height}\n255\n".encode("ascii")
    atomic_write(path, header + pixels.tobytes(order="C"))


def save_overlay_ppm(field: CostField, grid_path: GridPath, path: str) -> None:
    rgb = overlay_pixels(field, grid_path)
    header = f"P6\n{field.width} {field.height}\n255\n".encode("ascii")
    atomic_write(path, header + rgb.tobytes(order="C"))


def save_path_csv(grid_path: GridPath, path: str) -> None:
    text = "".join(f"{r},{c}\n" for r, c in grid_path.vertices)
    atomic_write(path, text.encode("ascii"))


def save_cloud_xyz(cloud: PointCloud, path: str) -> None:
    text = "".join(f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in cloud.points)
    atomic_write(path, text.encode("ascii"))


def save_text(text: str, path: str) -> None:
    atomic_write(path, text.encode("utf-8"))


# ── Readers ───────────────────────────────────────────────────────────────────

def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise IoError(f"cannot read '{path}': {e}") from e


def _netpbm(path: str, magic: bytes, channels: int) -> np.ndarray:
    data = _read_bytes(path)
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(path, 1, "truncated header")
        tokens.append(data[start:pos])
    pos += 1   # single whitespace byte ends the header

    if tokens[0] != magic:
        raise ParseError(path, 1, f"expected magic {magic.decode()}, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError(path, 1, "non-integer header field") from None
    if maxval != 255:
        raise ParseError(path, 1, f"unsupported maxval {maxval}")
    body = np.frombuffer(data[pos:], dtype=np.uint8)
    if len(body) != width * height * channels:
        raise ParseError(path, 1, f"expected {width * height * channels} pixel bytes, got {len(body)}")
    shape = (height, width) if channels == 1 else (height, width, channels)
    return body.reshape(shape).copy()


def read_pgm(path: str) -> np.ndarray:
    return _netpbm(path, b"P5", 1)


def read_ppm(path: str) -> np.ndarray:
    return _netpbm(path, b"P6", 3)


def read_path_csv(path: str) -> list[GridVertex]:
    text = _read_bytes(path).decode("ascii", errors="replace")
    vertices = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 2:
                raise ValueError
            vertices.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(path, lineno, f"expected 'row,col', got {line!r}") from None
    return vertices


def pixels_to_layers(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Invert the gray mapping as far as it goes: (lethal mask, penalty).
    Penalties are quantized to 1/255 and saturate at 1."""
    lethal = pixels == 0
    penalty = np.where(lethal, 0.0, 1.0 - pixels.astype(np.float64) / 255.0)
    return lethal, penalty

