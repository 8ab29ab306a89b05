"""
core/coarse.py
Rough inter-scan alignment:

  1. optional rotation-only pre-alignment from the orientation tracker
  2. FPFH descriptors on both clouds, mutual nearest-descriptor pairs
     (one-way nearest pairs when fewer than three are mutual)
  3. seeded 3-sample consensus over the correspondences (edge-length check,
     closed-form SVD estimate per sample, inlier counting)
  4. re-estimation on the inliers of the best sample
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

from config.settings import log
from core.errors import (
    DegenerateGeometry, InsufficientInliers, InvalidTransform, MissingNormals,
)
from core.features import CorrespondenceSet, compute_fpfh, match_correspondences, mutual_matches
from core.geometry import PointCloud, RigidTransform, apply_transform, compose

_BATCH = 256
_COLLINEAR_TOL = 1e-9


# ── Parameters ────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class OrientationPrior:
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            value = getattr(self, name)
            if not -math.pi <= value <= math.pi:
                raise ValueError(f"{name}={value} outside [-pi, pi]")

    def as_transform(self) -> RigidTransform:
        return RigidTransform.from_euler(self.roll, self.pitch, self.yaw)

    @classmethod
    def from_transform(cls, t: RigidTransform) -> "OrientationPrior":
        roll, pitch, yaw = Rotation.from_matrix(t.rotation).as_euler("xyz")
        return cls(float(roll), float(pitch), float(yaw))


@dataclass(frozen=True)
class CoarseAlignParams:
    feature_radius: float
    iterations: int = 20000
    inlier_threshold: float = 0.075
    min_inlier_fraction: float = 0.05
    seed: int = 0
    max_correspondences: int = 2000
    edge_similarity: float = 0.9

    def __post_init__(self):
        if not (self.feature_radius > 0 and self.inlier_threshold > 0):
            raise ValueError("feature radius and inlier threshold must be positive")
        if self.iterations < 1 or self.max_correspondences < 3:
            raise ValueError("iterations >= 1 and max_correspondences >= 3 required")
        if not 0 < self.min_inlier_fraction <= 1:
            raise ValueError("min_inlier_fraction must lie in (0, 1]")
        if not 0 < self.edge_similarity <= 1:
            raise ValueError("edge_similarity must lie in (0, 1]")


# ── Closed-form estimator ─────────────────────────────────────────────────────

def _kabsch(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched least-squares rotation/translation mapping p onto q.

    p, q: (..., m, 3). Returns R (..., 3, 3) and t (..., 3).
    """
    p_bar = p.mean(axis=-2)
    q_bar = q.mean(axis=-2)
    h = np.swapaxes(p - p_bar[..., None, :], -1, -2) @ (q - q_bar[..., None, :])
    u, _, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, -1, -2)
    ut = np.swapaxes(u, -1, -2)
    d = np.sign(np.linalg.det(v @ ut))
    d = np.where(d == 0, 1.0, d)
    fix = np.zeros(h.shape)
    fix[..., 0, 0] = 1.0
    fix[..., 1, 1] = 1.0
    fix[..., 2, 2] = d
    r = v @ fix @ ut
    t = q_bar - np.einsum("...ij,...j->...i", r, p_bar)
    return r, t


def _is_degenerate(points: np.ndarray) -> bool:
    if len(points) < 3:
        return True
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    return s[0] == 0 or s[1] <= _COLLINEAR_TOL * s[0]


def estimate_rigid_svd(src_points: np.ndarray, dst_points: np.ndarray,
                       correspondences: Union[CorrespondenceSet, np.ndarray, None] = None
                       ) -> RigidTransform:
    """Transform minimizing Σ|R·p_i + t − q_i|² over the corresponded pairs.

    `correspondences` may be a CorrespondenceSet, an (m, 2) id array, or None
    when the two point arrays are already row-aligned.
    """
    src = np.asarray(src_points, dtype=np.float64)
    dst = np.asarray(dst_points, dtype=np.float64)
    if correspondences is None:
        if len(src) != len(dst):
            raise DegenerateGeometry("row-aligned point sets must have equal length")
        p, q = src, dst
    elif isinstance(correspondences, CorrespondenceSet):
        p, q = src[correspondences.src_ids], dst[correspondences.dst_ids]
    else:
        ids = np.asarray(correspondences, dtype=np.int64).reshape(-1, 2)
        p, q = src[ids[:, 0]], dst[ids[:, 1]]

    if _is_degenerate(p) or _is_degenerate(q):
        raise DegenerateGeometry(f"need >= 3 non-collinear pairs, got {len(p)}")
    r, t = _kabsch(p, q)
    try:
        return RigidTransform(r, t)
    except InvalidTransform as e:
        raise DegenerateGeometry(str(e)) from e


# ── Consensus ─────────────────────────────────────────────────────────────────

def _sample_mask(p: np.ndarray, q: np.ndarray, similarity: float) -> np.ndarray:
    """Keep samples with matching edge lengths and non-collinear triangles.
    p, q: (B, 3, 3) sampled source/target triangles."""
    keep = np.ones(len(p), dtype=bool)
    for a, b in ((0, 1), (1, 2), (0, 2)):
        ls = np.linalg.norm(p[:, a] - p[:, b], axis=1)
        lt = np.linalg.norm(q[:, a] - q[:, b], axis=1)
        keep &= np.minimum(ls, lt) >= similarity * np.maximum(ls, lt)
        keep &= np.maximum(ls, lt) > 0
    for tri in (p, q):
        area2 = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        scale = np.max(np.linalg.norm(tri - tri[:, :1], axis=2), axis=1) ** 2
        keep &= area2 > _COLLINEAR_TOL * np.maximum(scale, 1e-300)
    return keep


def _count_inliers(r: np.ndarray, t: np.ndarray, p: np.ndarray, q: np.ndarray,
                   threshold: float) -> np.ndarray:
    moved = np.einsum("bij,mj->bmi", r, p) + t[:, None, :]
    return (np.linalg.norm(moved - q[None], axis=2) < threshold).sum(axis=1)


def _inliers(t: RigidTransform, p: np.ndarray, q: np.ndarray, threshold: float) -> np.ndarray:
    return np.linalg.norm(t.apply(p) - q, axis=1) < threshold


def coarse_align(src: PointCloud, dst: PointCloud, params: CoarseAlignParams,
                 prior: Optional[OrientationPrior] = None
                 ) -> tuple[RigidTransform, float]:
    """Rough transform mapping `src` onto `dst` and its inlier fraction."""
    if not (src.has_normals and dst.has_normals):
        raise MissingNormals("coarse alignment requires normals on both clouds")

    rng = np.random.default_rng(params.seed)
    pre = prior.as_transform() if prior is not None else RigidTransform.identity()
    src_pre = apply_transform(src, pre)

    src_f = compute_fpfh(src_pre, params.feature_radius)
    dst_f = compute_fpfh(dst, params.feature_radius)

    # isolated points carry no descriptor information
    candidates = np.flatnonzero(src_f.any(axis=1))
    targets = np.flatnonzero(dst_f.any(axis=1))
    if len(candidates) < 3 or len(targets) < 3:
        raise InsufficientInliers(0.0, params.min_inlier_fraction)
    if len(candidates) > params.max_correspondences:
        candidates = np.sort(rng.choice(candidates, params.max_correspondences, replace=False))

    corr = mutual_matches(src_f[candidates], dst_f[targets])
    if len(corr) < 3:
        log.warning(f"[Coarse] only {len(corr)} mutual descriptor matches; using one-way matches")
        corr = match_correspondences(src_f[candidates], dst_f[targets])
    p = src_pre.points[candidates[corr.src_ids]]
    q = dst.points[targets[corr.dst_ids]]
    m = len(p)
    log.debug(f"[Coarse] {m} correspondences from {len(src)} → {len(dst)} points")

    best_count, best_r, best_t = 0, None, None
    remaining = params.iterations
    while remaining > 0 and best_count < m:
        b = min(_BATCH, remaining)
        remaining -= b
        idx = rng.integers(0, m, size=(b, 3))
        distinct = (idx[:, 0] != idx[:, 1]) & (idx[:, 1] != idx[:, 2]) & (idx[:, 0] != idx[:, 2])
        idx = idx[distinct]
        if len(idx) == 0:
            continue
        ps, qs = p[idx], q[idx]
        keep = _sample_mask(ps, qs, params.edge_similarity)
        if not keep.any():
            continue
        r, t = _kabsch(ps[keep], qs[keep])
        counts = _count_inliers(r, t, p, q, params.inlier_threshold)
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count, best_r, best_t = int(counts[top]), r[top], t[top]

    if best_r is None:
        log.warning("[Coarse] no consensus sample passed the geometric checks")
        raise InsufficientInliers(0.0, params.min_inlier_fraction)

    found = RigidTransform(best_r, best_t)
    mask = _inliers(found, p, q, params.inlier_threshold)
    try:
        refined = estimate_rigid_svd(p[mask], q[mask])
        refined_mask = _inliers(refined, p, q, params.inlier_threshold)
        if refined_mask.sum() >= mask.sum():
            found, mask = refined, refined_mask
    except DegenerateGeometry:
        log.debug("[Coarse] inlier set degenerate; keeping the sample estimate")

    fraction = float(mask.sum()) / m
    log.info(f"[Coarse] inliers {int(mask.sum())}/{m} ({fraction:.3f}), "
             f"rotation {math.degrees(found.rotation_angle):.2f}°, "
             f"translation {np.linalg.norm(found.translation):.3f} m")
    if fraction < params.min_inlier_fraction:
        raise InsufficientInliers(fraction, params.min_inlier_fraction)
    return compose(found, pre), fraction
