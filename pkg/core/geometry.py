"""
core/geometry.py
Fundamental geometric types and operations shared by every stage:

  - PointCloud / RigidTransform value types
  - voxel_downsample, apply_transform, compose, invert
  - NeighborIndex with exact (distance, id) ordering: knn, radius_search
  - estimate_normals (PCA over k-neighborhoods, viewpoint-oriented)

All types are immutable after construction; arrays are stored read-only.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from core.errors import (
    EmptyIndex, InvalidCloud, InvalidTransform, KExceedsSize,
    NonPositiveEdge, NonPositiveRadius, TooFewPoints,
)

Point3 = Union[Sequence[float], np.ndarray]

NORMAL_TOL   = 1e-9
ROTATION_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


# ── PointCloud ────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidCloud(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidCloud("points must be finite")
        object.__setattr__(self, "points", _frozen(pts))

        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.size == 0:
                nrm = nrm.reshape(0, 3)
            if nrm.shape != pts.shape:
                raise InvalidCloud(f"normals shape {nrm.shape} != points shape {pts.shape}")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > NORMAL_TOL:
                raise InvalidCloud("normals must be unit length")
            object.__setattr__(self, "normals", _frozen(nrm))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, normals)

    def select(self, ids: Union[Sequence[int], np.ndarray]) -> "PointCloud":
        ids = np.asarray(ids, dtype=np.int64)
        normals = self.normals[ids] if self.normals is not None else None
        return PointCloud(self.points[ids], normals)


def concatenate(clouds: Sequence[PointCloud]) -> PointCloud:
    """Stack clouds; normals are kept only when every input carries them."""
    if not clouds:
        return PointCloud.empty()
    points = np.vstack([c.points for c in clouds])
    if all(c.has_normals for c in clouds):
        return PointCloud(points, np.vstack([c.normals for c in clouds]))
    return PointCloud(points)


# ── RigidTransform ────────────────────────────────────────────────────────────

def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest proper rotation to `rotation` (SVD projection onto SO(3))."""
    u, _, vt = np.linalg.svd(rotation)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidTransform(f"bad shapes rotation={r.shape} translation={t.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidTransform("transform must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_TOL:
            raise InvalidTransform("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise InvalidTransform("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float,
                   translation: Point3 = (0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation R = Rz(yaw)·Ry(pitch)·Rx(roll)."""
        r = Rotation.from_euler("xyz", [roll, pitch, yaw]).as_matrix()
        return cls(orthonormalize(r), np.asarray(translation, dtype=np.float64))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def compose(t2: RigidTransform, t1: RigidTransform) -> RigidTransform:
    """t2 ∘ t1: apply t1 first, then t2."""
    return RigidTransform(t2.rotation @ t1.rotation,
                          t2.rotation @ t1.translation + t2.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def transform_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """(rotation error in degrees, translation error in meters)."""
    delta = compose(invert(truth), estimate)
    rot_deg = float(np.degrees(delta.rotation_angle))
    trans = float(np.linalg.norm(estimate.translation - truth.translation))
    return rot_deg, trans


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    points = t.apply(cloud.points)
    if cloud.normals is None:
        return PointCloud(points)
    normals = cloud.normals @ t.rotation.T
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(points, normals)


# ── Voxel downsampling ────────────────────────────────────────────────────────

def voxel_downsample(cloud: PointCloud, edge: float) -> PointCloud:
    """One centroid per nonempty voxel, voxels indexed by floor(coord / edge)
    and emitted in ascending lexicographic (ix, iy, iz) order."""
    if not edge > 0:
        raise NonPositiveEdge(f"voxel edge must be positive, got {edge}")
    if len(cloud) == 0:
        return PointCloud.empty()

    pts = cloud.points
    keys = np.floor(pts / edge).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    sums = np.column_stack([
        np.bincount(inverse, weights=pts[:, d], minlength=len(uniq)) for d in range(3)
    ])
    return PointCloud(sums / counts[:, None])


# ── Neighbor queries ──────────────────────────────────────────────────────────

def point_distances(points: np.ndarray, query: Point3) -> np.ndarray:
    """Euclidean distances from every row of `points` to `query`."""
    q = np.asarray(query, dtype=np.float64)
    return np.sqrt(np.sum((points - q) ** 2, axis=1))


class NeighborIndex:
    """kd-tree over a cloud whose query results match a brute-force scan:
    sorted by nondecreasing distance, ties broken by lower point id."""

    # candidate slack so the tree's own rounding never drops a boundary point
    _SLACK_REL = 1e-9
    _SLACK_ABS = 1e-12

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud
        self.points = cloud.points
        self.tree = cKDTree(cloud.points) if len(cloud) else None

    def __len__(self) -> int:
        return len(self.points)

    def _ordered(self, candidates: np.ndarray, query: Point3,
                 radius: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
        candidates = np.asarray(candidates, dtype=np.int64)
        dists = point_distances(self.points[candidates], query)
        if radius is not None:
            keep = dists <= radius
            candidates, dists = candidates[keep], dists[keep]
        order = np.lexsort((candidates, dists))
        return candidates[order], dists[order]

    def knn(self, query: Point3, k: int) -> list[tuple[int, float]]:
        if self.tree is None:
            raise EmptyIndex("neighbor index is empty")
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        if k > len(self):
            raise KExceedsSize(f"k={k} exceeds cloud size {len(self)}")
        dk = float(np.atleast_1d(self.tree.query(query, k)[0])[-1])
        reach = dk * (1 + self._SLACK_REL) + self._SLACK_ABS
        ids, dists = self._ordered(self.tree.query_ball_point(query, reach), query)
        return [(int(i), float(d)) for i, d in zip(ids[:k], dists[:k])]

    def radius_search(self, query: Point3, r: float) -> list[tuple[int, float]]:
        if self.tree is None:
            raise EmptyIndex("neighbor index is empty")
        if not r > 0:
            raise NonPositiveRadius(f"search radius must be positive, got {r}")
        reach = r * (1 + self._SLACK_REL) + self._SLACK_ABS
        ids, dists = self._ordered(self.tree.query_ball_point(query, reach), query, radius=r)
        return [(int(i), float(d)) for i, d in zip(ids, dists)]


def knn(index: NeighborIndex, query: Point3, k: int) -> list[tuple[int, float]]:
    return index.knn(query, k)


def radius_search(index: NeighborIndex, query: Point3, r: float) -> list[tuple[int, float]]:
    return index.radius_search(query, r)


# ── Normals ───────────────────────────────────────────────────────────────────

def estimate_normals(cloud: PointCloud, k: int = 16,
                     viewpoint: Point3 = (0.0, 0.0, 0.0)) -> PointCloud:
    """PCA normals over k-neighborhoods, flipped so n·(viewpoint − p) ≥ 0."""
    n = len(cloud)
    if k < 3 or n < k:
        raise TooFewPoints(f"need cloud size >= k >= 3, got size={n} k={k}")

    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    facing = np.einsum("ni,ni->n", normals, np.asarray(viewpoint, dtype=np.float64) - pts)
    normals[facing < 0] *= -1.0
    return PointCloud(pts, normals)
