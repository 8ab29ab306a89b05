"""
config/settings.py
Centralized configuration and logging setup.

Process-level settings come from the environment; every algorithm
parameter lives in PipelineConfig, loaded from a key=value file with
command-line overrides on top.
"""

import os
import logging
from dataclasses import dataclass, fields, replace
from typing import Any, Optional, get_args, get_origin

from core.errors import ConfigError

# ── Version ──────────────────────────────────────────────────────────────────
VERSION = "1.2.0"

# ── Runtime config (env-driven) ───────────────────────────────────────────────
LOG_LVL      = os.environ.get("ROVERMAP_LOG_LEVEL", "INFO")
OUT_DIR      = os.environ.get("ROVERMAP_OUT_DIR", "out")
DEFAULT_SEED = int(os.environ.get("ROVERMAP_SEED", 7))

# ── Logging ───────────────────────────────────────────────────────────────────
logging.basicConfig(
    level=getattr(logging, LOG_LVL.upper(), logging.INFO),
    format="%(asctime)s [%(levelname)s] %(message)s",
)
log = logging.getLogger("rovermap")


# ── Pipeline configuration ────────────────────────────────────────────────────

@dataclass(frozen=True)
class PipelineConfig:
    # Voxel sizes (meters)
    voxel_edge: float = 0.01
    coarse_voxel: float = 0.05
    icp_voxel: float = 0.02
    normal_k: int = 16

    # Coarse registration
    fpfh_radius: Optional[float] = None          # defaults to 5 × coarse_voxel
    consensus_iterations: int = 20000
    consensus_threshold: Optional[float] = None  # defaults to 1.5 × coarse_voxel
    min_inlier_fraction: float = 0.05
    max_correspondences: int = 2000
    edge_similarity: float = 0.9
    prior: Optional[tuple[float, float, float]] = None
    seed: int = DEFAULT_SEED

    # ICP
    icp_max_iterations: int = 50
    icp_distance_cap: Optional[float] = None     # defaults to 10 × voxel_edge
    icp_translation_eps: float = 1e-5
    icp_rotation_eps: float = 1e-5
    surface_gating: bool = True
    gating_threshold: float = 0.02
    gating_planes: int = 8
    gating_min_inliers: int = 200

    # Ground removal
    ransac_threshold: float = 0.01
    ransac_iterations: int = 500
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    max_tilt_deg: float = 15.0
    band_low: float = -0.01
    band_high: float = 0.03
    ceiling: float = 1.5

    # Grid and embodiment
    resolution: float = 0.01
    robot_length: float = 0.40
    robot_width: float = 0.41
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    no_embodiment: bool = False

    # Planning endpoints, either as cells or as map-frame points
    start: Optional[tuple[int, int]] = None
    goal: Optional[tuple[int, int]] = None
    start_point: Optional[tuple[float, float, float]] = None
    goal_point: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        lengths = {
            "voxel_edge": self.voxel_edge, "coarse_voxel": self.coarse_voxel,
            "icp_voxel": self.icp_voxel, "ransac_threshold": self.ransac_threshold,
            "resolution": self.resolution, "robot_length": self.robot_length,
            "robot_width": self.robot_width, "sigma_x": self.sigma_x,
            "sigma_y": self.sigma_y, "ceiling": self.ceiling,
            "gating_threshold": self.gating_threshold,
        }
        for name in ("fpfh_radius", "consensus_threshold", "icp_distance_cap"):
            if getattr(self, name) is not None:
                lengths[name] = getattr(self, name)
        for name, value in lengths.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not self.band_low < self.band_high < self.ceiling:
            raise ConfigError(
                f"need band_low < band_high < ceiling, got "
                f"{self.band_low}, {self.band_high}, {self.ceiling}"
            )
        if not 0 < self.min_inlier_fraction <= 1:
            raise ConfigError("min_inlier_fraction must lie in (0, 1]")
        if not 0 < self.edge_similarity <= 1:
            raise ConfigError("edge_similarity must lie in (0, 1]")
        for name in ("normal_k", "consensus_iterations", "max_correspondences",
                     "icp_max_iterations", "ransac_iterations",
                     "gating_planes", "gating_min_inliers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.normal_k < 3:
            raise ConfigError("normal_k must be at least 3")
        if not 0 < self.max_tilt_deg <= 90:
            raise ConfigError("max_tilt_deg must lie in (0, 90]")

    # ── Derived defaults ─────────────────────────────────────────────────────

    @property
    def feature_radius(self) -> float:
        return self.fpfh_radius if self.fpfh_radius is not None else 5.0 * self.coarse_voxel

    @property
    def inlier_threshold(self) -> float:
        if self.consensus_threshold is not None:
            return self.consensus_threshold
        return 1.5 * self.coarse_voxel

    @property
    def distance_cap(self) -> float:
        return self.icp_distance_cap if self.icp_distance_cap is not None else 10.0 * self.voxel_edge

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(self, **overrides)


# ── key=value loader ──────────────────────────────────────────────────────────

_TRUE  = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _scalar(raw: str, kind: type, key: str) -> Any:
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got '{raw}'")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got '{raw}'") from None


def parse_value(key: str, raw: str) -> Any:
    """Convert the textual value of `key` to the type PipelineConfig declares."""
    hints = {f.name: f.type for f in fields(PipelineConfig)}
    if key not in hints:
        raise ConfigError(f"unknown config key '{key}'")
    kind = hints[key]
    raw = raw.strip()

    if type(None) in get_args(kind):
        if raw.lower() == "none" or raw == "":
            return None
        kind = next(a for a in get_args(kind) if a is not type(None))

    if get_origin(kind) is tuple:
        item_types = get_args(kind)
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != len(item_types):
            raise ConfigError(f"{key}: expected {len(item_types)} comma-separated values")
        return tuple(_scalar(p, t, key) for p, t in zip(parts, item_types))

    return _scalar(raw, kind, key)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read a key=value file (if given), then apply `overrides` on top."""
    values: dict[str, Any] = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as e:
            raise ConfigError(f"cannot read config '{path}': {e}") from e
        except UnicodeDecodeError as e:
            raise ConfigError(f"{path}: not UTF-8 text ({e.reason})") from e
        for lineno, line in enumerate(lines, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (s.strip() for s in text.split("=", 1))
            values[key] = parse_value(key, raw)
    values.update(overrides or {})
    try:
        return PipelineConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


DEFAULTS = PipelineConfig()

__all__ = [
    "VERSION", "LOG_LVL", "OUT_DIR", "DEFAULT_SEED", "log",
    "PipelineConfig", "load_config", "parse_value", "DEFAULTS",
]
