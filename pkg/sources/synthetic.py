"""
sources/synthetic.py
Deterministic synthetic scenes with exact ground truth.

A scene is a square ground patch plus axis-aligned boxes. One shared pool
of surface samples is drawn per seed; each sensor pose keeps the pool
points it can see (facing surfaces within range), expressed in its own
sensor frame, with per-scan Gaussian noise. Occlusion is not modeled.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config.settings import log
from core.geometry import Point3, PointCloud, RigidTransform, compose, invert
from sources.base import ScanSource

SENSOR_HEIGHT = 1.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: footprint center (x, y), size (sx, sy, sz), bottom at `base`."""
    center: tuple[float, float]
    size: tuple[float, float, float]
    base: float = 0.0

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.center[0] - self.size[0] / 2, self.center[1] - self.size[1] / 2, self.base])
        return lo, lo + np.asarray(self.size, dtype=np.float64)

    @property
    def grounded(self) -> bool:
        return self.base <= 0.0

    def covers(self, xy: np.ndarray) -> np.ndarray:
        """Mask of planar points inside the footprint (closed)."""
        lo, hi = self.bounds
        return ((xy[:, 0] >= lo[0]) & (xy[:, 0] <= hi[0])
                & (xy[:, 1] >= lo[1]) & (xy[:, 1] <= hi[1]))

    def faces(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """(corner, edge a, edge b, outward normal) per sampled face."""
        (x0, y0, z0), (x1, y1, z1) = self.bounds
        sx, sy, sz = self.size
        ex, ey, ez = np.eye(3)
        faces = [
            (np.array([x1, y0, z0]), sy * ey, sz * ez, ex),
            (np.array([x0, y0, z0]), sy * ey, sz * ez, -ex),
            (np.array([x0, y1, z0]), sx * ex, sz * ez, ey),
            (np.array([x0, y0, z0]), sx * ex, sz * ez, -ey),
            (np.array([x0, y0, z1]), sx * ex, sy * ey, ez),
        ]
        if not self.grounded:
            faces.append((np.array([x0, y0, z0]), sx * ex, sy * ey, -ez))
        return faces


DEFAULT_BOXES = (
    Box((0.9, 0.5), (0.6, 0.8, 0.7)),
    Box((-0.8, 0.9), (0.7, 0.5, 0.5)),
    Box((0.2, -1.0), (0.9, 0.5, 0.9)),
    Box((-1.0, -0.6), (0.4, 0.4, 0.6)),
    Box((-0.3, 0.2), (0.6, 0.6, 0.1), base=1.7),   # overhead, above the ceiling
)


def sensor_pose(x: float, y: float, yaw_deg: float = 0.0, roll_deg: float = 0.0,
                pitch_deg: float = 0.0, z: float = SENSOR_HEIGHT) -> RigidTransform:
    """World-from-sensor pose."""
    return RigidTransform.from_euler(math.radians(roll_deg), math.radians(pitch_deg),
                                     math.radians(yaw_deg), (x, y, z))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 7
    ground_size: float = 4.0                  # square side, centered on the world origin
    boxes: tuple[Box, ...] = DEFAULT_BOXES
    poses: tuple[RigidTransform, ...] = field(
        default_factory=lambda: (sensor_pose(-0.3, 0.0), sensor_pose(0.2, 0.1, yaw_deg=10.0))
    )
    points_per_scan: int = 100_000
    noise: float = 0.005
    max_range: float = 8.0
    obstacle_weight: float = 8.0              # box surfaces sampled this much denser than ground
    pool_factor: float = 2.0
    start_point: Optional[tuple[float, float]] = (-1.7, 1.7)   # world (x, y) on the ground
    goal_point: Optional[tuple[float, float]] = (1.6, -1.7)

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError("a scene needs at least two sensor poses")
        if self.points_per_scan < 1:
            raise ValueError("points_per_scan must be positive")
        if self.noise < 0:
            raise ValueError("noise sigma must be nonnegative")
        if not (self.ground_size > 0 and self.max_range > 0):
            raise ValueError("ground size and sensor range must be positive")
        if self.obstacle_weight <= 0 or self.pool_factor < 1:
            raise ValueError("obstacle_weight must be positive and pool_factor >= 1")


# ── Sampling ──────────────────────────────────────────────────────────────────

@dataclass
class _Pool:
    points: np.ndarray       # (P, 3) world coordinates
    normals: np.ndarray      # (P, 3) outward surface normals
    priority: np.ndarray     # (P,) uniform draws; lower is kept first


def _surfaces(spec: SceneSpec) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]]:
    half = spec.ground_size / 2.0
    ground = (np.array([-half, -half, 0.0]), np.array([spec.ground_size, 0.0, 0.0]),
              np.array([0.0, spec.ground_size, 0.0]), np.array([0.0, 0.0, 1.0]), 1.0)
    surfaces = [ground]
    for box in spec.boxes:
        for corner, a, b, n in box.faces():
            surfaces.append((corner, a, b, n, spec.obstacle_weight))
    return surfaces


def _sample_pool(spec: SceneSpec) -> _Pool:
    rng = np.random.default_rng(spec.seed)
    surfaces = _surfaces(spec)
    weights = np.array([np.linalg.norm(a) * np.linalg.norm(b) * w for _, a, b, _, w in surfaces])
    total = int(math.ceil(spec.pool_factor * spec.points_per_scan))
    counts = rng.multinomial(total, weights / weights.sum())

    pts, nrm = [], []
    for (corner, a, b, n, _), count in zip(surfaces, counts):
        uv = rng.random((count, 2))
        pts.append(corner + uv[:, :1] * a + uv[:, 1:] * b)
        nrm.append(np.broadcast_to(n, (count, 3)))
    points = np.vstack(pts)
    normals = np.vstack(nrm)

    # ground hidden under grounded boxes
    ground = np.zeros(len(points), dtype=bool)
    ground[:counts[0]] = True
    buried = np.zeros(len(points), dtype=bool)
    for box in spec.boxes:
        if box.grounded:
            buried |= ground & box.covers(points[:, :2])
    keep = ~buried
    return _Pool(points[keep], normals[keep], rng.random(int(keep.sum())))


def _visible(pool: _Pool, pose: RigidTransform, max_range: float) -> np.ndarray:
    to_sensor = pose.translation - pool.points
    facing = np.einsum("ij,ij->i", pool.normals, to_sensor) > 0
    in_range = np.linalg.norm(to_sensor, axis=1) <= max_range
    return facing & in_range


def generate_scene(spec: SceneSpec) -> tuple[list[PointCloud], list[RigidTransform]]:
    """Scans in their sensor frames plus exact transforms into scan 0's frame."""
    pool = _sample_pool(spec)
    base_inv = invert(spec.poses[0])
    scans, truth = [], []
    for k, pose in enumerate(spec.poses):
        ids = np.flatnonzero(_visible(pool, pose, spec.max_range))
        if len(ids) > spec.points_per_scan:
            ids = np.sort(ids[np.argsort(pool.priority[ids], kind="stable")[:spec.points_per_scan]])
        local = invert(pose).apply(pool.points[ids])
        if spec.noise > 0:
            local = local + np.random.default_rng([spec.seed, k]).normal(0.0, spec.noise, local.shape)
        scans.append(PointCloud(local))
        truth.append(compose(base_inv, pose))
    log.info(f"[Synthetic] seed {spec.seed}: {len(scans)} scans of "
             f"{[len(s) for s in scans]} points, noise {spec.noise} m")
    return scans, truth


# ── Scene factories ───────────────────────────────────────────────────────────

def two_pose_scene(seed: int = 7, yaw_deg: float = 10.0, offset: tuple[float, float] = (0.5, 0.1),
                   noise: float = 0.005, points_per_scan: int = 100_000) -> SceneSpec:
    """Default boxes seen from two poses `offset` apart with a relative yaw."""
    first = sensor_pose(-0.3, 0.0)
    second = sensor_pose(-0.3 + offset[0], offset[1], yaw_deg=yaw_deg)
    return SceneSpec(seed=seed, poses=(first, second), noise=noise, points_per_scan=points_per_scan)


def random_scene(seed: int, max_rotation_deg: float = 30.0, max_translation: float = 2.0,
                 noise: float = 0.005, points_per_scan: int = 40_000) -> SceneSpec:
    """Random boxes and a random relative pose bounded in angle and offset."""
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(int(rng.integers(4, 7))):
        size = (float(rng.uniform(0.3, 0.9)), float(rng.uniform(0.3, 0.9)), float(rng.uniform(0.3, 0.9)))
        center = (float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-1.5, 1.5)))
        boxes.append(Box(center, size))

    tilt = max_rotation_deg / 6.0
    yaw = float(rng.uniform(-1.0, 1.0)) * (max_rotation_deg - 2.0 * tilt)
    roll, pitch = (float(v) for v in rng.uniform(-tilt, tilt, size=2))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    # keep the second sensor inside the patch
    dist = float(rng.uniform(0.0, min(max_translation, 1.5)))
    first = sensor_pose(0.0, 0.0)
    second = sensor_pose(dist * math.cos(heading), dist * math.sin(heading),
                         yaw_deg=yaw, roll_deg=roll, pitch_deg=pitch)
    return SceneSpec(seed=seed, boxes=tuple(boxes), poses=(first, second), noise=noise,
                     points_per_scan=points_per_scan, start_point=None, goal_point=None)


# ── Source ────────────────────────────────────────────────────────────────────

class SyntheticSource(ScanSource):
    """Synthetic scene served through the ScanSource interface."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self._cache: Optional[tuple[list[PointCloud], list[RigidTransform]]] = None

    def _generated(self) -> tuple[list[PointCloud], list[RigidTransform]]:
        if self._cache is None:
            self._cache = generate_scene(self.spec)
        return self._cache

    def describe(self) -> str:
        return f"synthetic(seed={self.spec.seed}, poses={len(self.spec.poses)})"

    def scans(self) -> list[PointCloud]:
        return self._generated()[0]

    def ground_truth(self) -> Optional[list[RigidTransform]]:
        return self._generated()[1]

    def to_map(self, xy: tuple[float, float]) -> np.ndarray:
        """World ground point (x, y) expressed in scan 0's frame."""
        return invert(self.spec.poses[0]).apply(np.array([[xy[0], xy[1], 0.0]]))[0]

    def endpoints(self) -> tuple[Optional[Point3], Optional[Point3]]:
        start = self.to_map(self.spec.start_point) if self.spec.start_point is not None else None
        goal = self.to_map(self.spec.goal_point) if self.spec.goal_point is not None else None
        return start, goal
