"""
core/mapping.py
From registered clouds to the 1 cm top-down occupancy grid:

  merge_clouds → ransac_plane (floor) → filter_heights → project_topdown

Heights are measured from the fitted floor plane, with the normal
oriented toward the sensor side.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from config.settings import log
from core.errors import EmptyCloud, LengthMismatch, NoConstrainedPlane, TooFewPoints
from core.geometry import (
    Point3, PointCloud, RigidTransform, apply_transform, concatenate, voxel_downsample,
)

GROUND_BAND = (-0.01, 0.03)
CEILING     = 1.5

_RANSAC_BATCH = 32


# ── Plane model ───────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane n·x + d = 0 with unit normal n."""
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.array(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def fit(cls, points: np.ndarray) -> "PlaneModel":
        """Least-squares plane through `points` (smallest principal axis)."""
        centroid = points.mean(axis=0)
        _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
        n = vt[-1] / np.linalg.norm(vt[-1])
        return cls(n, -float(n @ centroid))

    def heights(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def tilt(self, axis: np.ndarray) -> float:
        """Unsigned angle between the plane normal and `axis`, radians."""
        return math.acos(min(1.0, abs(float(self.normal @ axis))))

    def oriented_toward(self, viewpoint: Point3, axis: Optional[np.ndarray] = None) -> "PlaneModel":
        side = float(self.normal @ np.asarray(viewpoint, dtype=np.float64)) + self.offset
        if side == 0 and axis is not None:
            side = float(self.normal @ axis)
        if side < 0:
            return PlaneModel(-self.normal, -self.offset)
        return self


# ── RANSAC kernel ─────────────────────────────────────────────────────────────

def ransac_kernel(points: np.ndarray, threshold: float, iterations: int,
                  rng: np.random.Generator, axis: Optional[np.ndarray] = None,
                  max_tilt: Optional[float] = None) -> Optional[PlaneModel]:
    """Best sampled plane by inlier count (first found wins ties), or None
    when no sample is admissible."""
    n = len(points)
    min_cos = math.cos(max_tilt) if axis is not None and max_tilt is not None else None
    best_count, best = -1, None

    remaining = iterations
    while remaining > 0:
        b = min(_RANSAC_BATCH, remaining)
        remaining -= b
        idx = rng.integers(0, n, size=(b, 3))
        a, p1, p2 = points[idx[:, 0]], points[idx[:, 1]], points[idx[:, 2]]
        normals = np.cross(p1 - a, p2 - a)
        norms = np.linalg.norm(normals, axis=1)
        scale = np.maximum(np.linalg.norm(p1 - a, axis=1), np.linalg.norm(p2 - a, axis=1)) ** 2
        valid = norms > 1e-12 * np.maximum(scale, 1e-300)
        normals = normals / np.where(valid, norms, 1.0)[:, None]
        if min_cos is not None:
            valid &= np.abs(normals @ axis) >= min_cos
        if not valid.any():
            continue
        offsets = -np.einsum("ij,ij->i", normals, a)
        counts = (np.abs(points @ normals.T + offsets) <= threshold).sum(axis=0)
        counts[~valid] = -1
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count = int(counts[top])
            best = PlaneModel(normals[top], offsets[top])
    return best


def ransac_plane(cloud: PointCloud, dist_threshold: float, iterations: int = 500,
                 axis: Point3 = (0.0, 0.0, 1.0), max_tilt: float = math.radians(15.0),
                 seed: int = 0, viewpoint: Point3 = (0.0, 0.0, 0.0)
                 ) -> tuple[PlaneModel, np.ndarray]:
    """Dominant plane whose normal lies within `max_tilt` of `axis`.

    The best sample is refined by a least-squares fit over its inliers
    (kept only if it still honors the tilt bound) and oriented toward
    `viewpoint`. Returns the plane and the sorted inlier ids.
    """
    if len(cloud) < 3:
        raise TooFewPoints(f"RANSAC needs at least 3 points, got {len(cloud)}")
    if not dist_threshold > 0:
        raise ValueError("distance threshold must be positive")
    ax = np.asarray(axis, dtype=np.float64)
    ax = ax / np.linalg.norm(ax)

    pts = cloud.points
    rng = np.random.default_rng(seed)
    plane = ransac_kernel(pts, dist_threshold, iterations, rng, ax, max_tilt)
    if plane is None:
        raise NoConstrainedPlane(f"no sample within {math.degrees(max_tilt):.1f}° of axis {ax}")

    inliers = np.abs(plane.heights(pts)) <= dist_threshold
    if inliers.sum() >= 3:
        refined = PlaneModel.fit(pts[inliers])
        if refined.tilt(ax) <= max_tilt:
            plane = refined
            inliers = np.abs(plane.heights(pts)) <= dist_threshold
    plane = plane.oriented_toward(viewpoint, ax)
    ids = np.flatnonzero(inliers)
    log.info(f"[Mapping] floor plane n={np.round(plane.normal, 4)} d={plane.offset:.4f} "
             f"with {len(ids)}/{len(pts)} inliers")
    return plane, ids


# ── Height filtering ──────────────────────────────────────────────────────────

def signed_height(point: Point3, plane: PlaneModel) -> float:
    return float(plane.heights(np.asarray(point, dtype=np.float64).reshape(1, 3))[0])


def filter_heights(cloud: PointCloud, plane: PlaneModel,
                   band: tuple[float, float] = GROUND_BAND,
                   ceiling: float = CEILING) -> PointCloud:
    """Drop the ground band (closed interval) and everything strictly above
    the ceiling; order of the kept points is preserved."""
    h = plane.heights(cloud.points)
    low, high = band
    keep = ~(((h >= low) & (h <= high)) | (h > ceiling))
    return cloud.select(np.flatnonzero(keep))


# ── Occupancy grid ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Top-down raster. Columns follow basis[0], rows follow basis[1];
    `origin` is the planar coordinate of the corner of cell (0, 0)."""
    origin: np.ndarray
    resolution: float
    occupied: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("grid resolution must be positive")
        occ = np.array(self.occupied, dtype=bool)
        if occ.ndim != 2:
            raise ValueError("occupancy must be a 2D array")
        occ.setflags(write=False)
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "origin", np.array(self.origin, dtype=np.float64).reshape(2))
        object.__setattr__(self, "basis", np.array(self.basis, dtype=np.float64).reshape(2, 3))

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    def planar(self, points: np.ndarray) -> np.ndarray:
        """Planar (u, v) coordinates of 3D points, shape (n, 2)."""
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.basis.T

    def cells(self, points: np.ndarray) -> np.ndarray:
        """(row, col) index of every point, shape (n, 2); may be out of bounds."""
        uv = self.planar(points)
        cols = np.floor((uv[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        rows = np.floor((uv[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        return np.column_stack([rows, cols])

    def cell_of(self, point: Point3) -> tuple[int, int]:
        row, col = self.cells(np.asarray(point, dtype=np.float64))[0]
        return int(row), int(col)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def cell_center(self, row: int, col: int) -> np.ndarray:
        """Planar (u, v) of a cell center."""
        return self.origin + (np.array([col, row], dtype=np.float64) + 0.5) * self.resolution


def plane_basis(normal: np.ndarray) -> np.ndarray:
    """Deterministic in-plane basis: e1 = world +x projected (else +y), e2 = n × e1."""
    n = np.asarray(normal, dtype=np.float64)
    for axis in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        e1 = axis - (axis @ n) * n
        norm = np.linalg.norm(e1)
        if norm > 1e-9:
            e1 = e1 / norm
            return np.vstack([e1, np.cross(n, e1)])
    raise ValueError("cannot build a plane basis")  # unreachable for unit normals


def project_topdown(cloud: PointCloud, plane: PlaneModel, resolution: float = 0.01) -> OccupancyGrid:
    """Top-down projection onto `plane`, binned at `resolution`; the grid
    origin is the elementwise minimum of the projected coordinates."""
    if len(cloud) == 0:
        raise EmptyCloud("nothing to project")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    basis = plane_basis(plane.normal)
    uv = cloud.points @ basis.T
    origin = uv.min(axis=0)
    cols = np.floor((uv[:, 0] - origin[0]) / resolution).astype(np.int64)
    rows = np.floor((uv[:, 1] - origin[1]) / resolution).astype(np.int64)
    occupied = np.zeros((int(rows.max()) + 1, int(cols.max()) + 1), dtype=bool)
    occupied[rows, cols] = True
    log.info(f"[Mapping] projected {len(cloud)} points into {occupied.shape[0]}x{occupied.shape[1]} "
             f"grid, {int(occupied.sum())} occupied cells")
    return OccupancyGrid(origin, resolution, occupied, basis)


def project_into(cloud: PointCloud, grid: OccupancyGrid) -> OccupancyGrid:
    """Rasterize `cloud` in the frame and extent of an existing grid; points
    falling outside the grid are dropped."""
    occupied = np.zeros(grid.shape, dtype=bool)
    if len(cloud):
        rc = grid.cells(cloud.points)
        inside = (rc[:, 0] >= 0) & (rc[:, 0] < grid.height) & (rc[:, 1] >= 0) & (rc[:, 1] < grid.width)
        occupied[rc[inside, 0], rc[inside, 1]] = True
    return OccupancyGrid(grid.origin, grid.resolution, occupied, grid.basis)


# ── Merging ───────────────────────────────────────────────────────────────────

def merge_clouds(clouds: Sequence[PointCloud], transforms: Sequence[RigidTransform],
                 voxel_edge: float = 0.01) -> PointCloud:
    """Transform every cloud into the common frame, concatenate, voxelize."""
    if len(clouds) != len(transforms):
        raise LengthMismatch(f"{len(clouds)} clouds but {len(transforms)} transforms")
    moved = [apply_transform(c, t) for c, t in zip(clouds, transforms)]
    merged = voxel_downsample(concatenate([PointCloud(c.points) for c in moved]), voxel_edge)
    log.info(f"[Mapping] merged {len(clouds)} clouds into {len(merged)} voxels")
    return merged
