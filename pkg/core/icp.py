"""
core/icp.py
Point-to-plane ICP refinement, optionally restricted to points lying on
planar surfaces observed in both scans.

Each iteration linearizes the rotation (R ≈ I + [ω]×), solves the 6×6
normal equations for (ω, t), composes the step and projects the rotation
back onto SO(3). A step is accepted only if it does not raise the RMS
point-to-plane residual, so the residual history is nonincreasing.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from config.settings import log
from core.errors import MissingNormals, NoCorrespondences
from core.geometry import PointCloud, RigidTransform, apply_transform, orthonormalize
from core.mapping import PlaneModel, ransac_kernel

ACCEPT_SLACK = 1e-9


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    distance_cap: float = 0.1
    translation_eps: float = 1e-5
    rotation_eps: float = 1e-5
    surface_gating: bool = False
    gating_threshold: float = 0.02
    gating_planes: int = 8
    gating_min_inliers: int = 200
    gating_max_angle: float = math.radians(15.0)
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        for name in ("distance_cap", "translation_eps", "rotation_eps", "gating_threshold"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite")


@dataclass
class IcpResult:
    transform: RigidTransform
    rms: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)
    correspondences: int = 0
    gated: bool = False


# ── Surface segmentation ──────────────────────────────────────────────────────

def segment_surfaces(cloud: PointCloud, dist_threshold: float, min_inliers: int,
                     max_planes: int, iterations: int = 300, seed: int = 0
                     ) -> list[tuple[PlaneModel, np.ndarray]]:
    """Greedy RANSAC plane extraction; planes returned by decreasing size."""
    if len(cloud) == 0:
        raise ValueError("cannot segment an empty cloud")
    if not dist_threshold > 0:
        raise ValueError("distance threshold must be positive")

    pts = cloud.points
    rng = np.random.default_rng(seed)
    remaining = np.arange(len(pts))
    planes: list[tuple[PlaneModel, np.ndarray]] = []

    while len(planes) < max_planes and len(remaining) >= max(3, min_inliers):
        sub = pts[remaining]
        plane = ransac_kernel(sub, dist_threshold, iterations, rng)
        if plane is None:
            break
        mask = np.abs(plane.heights(sub)) <= dist_threshold
        if mask.sum() < min_inliers:
            break
        refined = PlaneModel.fit(sub[mask])
        refined_mask = np.abs(refined.heights(sub)) <= dist_threshold
        if refined_mask.sum() >= mask.sum():
            plane, mask = refined, refined_mask
        planes.append((plane, remaining[mask]))
        remaining = remaining[~mask]

    planes.sort(key=lambda pm: len(pm[1]), reverse=True)
    log.debug(f"[ICP] segmented {len(planes)} planes: {[len(ids) for _, ids in planes]}")
    return planes


def overlapping_surfaces(src_planes: list[tuple[PlaneModel, np.ndarray]],
                         dst_planes: list[tuple[PlaneModel, np.ndarray]],
                         dist_threshold: float, max_angle: float
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Member ids of source and target planes that have a counterpart with a
    normal within `max_angle` and an offset within 3 × `dist_threshold`."""
    src_ids, dst_ids = [], []
    cos_min = math.cos(max_angle)
    for sp, s_members in src_planes:
        for dp, d_members in dst_planes:
            dot = float(sp.normal @ dp.normal)
            if abs(dot) < cos_min:
                continue
            d_offset = dp.offset if dot >= 0 else -dp.offset
            if abs(sp.offset - d_offset) < 3.0 * dist_threshold:
                src_ids.append(s_members)
                dst_ids.append(d_members)
    if not src_ids:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(src_ids)), np.unique(np.concatenate(dst_ids))


# ── Linearized point-to-plane system ──────────────────────────────────────────

def point_to_plane_residuals(src_pts: np.ndarray, dst_pts: np.ndarray,
                             dst_normals: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", dst_normals, src_pts - dst_pts)


def point_to_plane_objective(src_pts: np.ndarray, dst_pts: np.ndarray,
                             dst_normals: np.ndarray, transform: RigidTransform) -> float:
    """Σ (n_i · (R·p_i + t − q_i))²"""
    r = point_to_plane_residuals(transform.apply(src_pts), dst_pts, dst_normals)
    return float(r @ r)


def point_to_plane_system(src_pts: np.ndarray, dst_pts: np.ndarray,
                          dst_normals: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normal equations at the current pose: returns (JᵀJ, Jᵀr, r) where the
    Jacobian rows are [p × n, n] for the unknowns (ω, t)."""
    r = point_to_plane_residuals(src_pts, dst_pts, dst_normals)
    j = np.hstack([np.cross(src_pts, dst_normals), dst_normals])
    return j.T @ j, j.T @ r, r


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _solve_step(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(a, -g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(a, -g, rcond=None)[0]


# ── Correspondences ───────────────────────────────────────────────────────────

@dataclass
class _Matches:
    src_ids: np.ndarray
    dst_ids: np.ndarray
    moved: np.ndarray

    def __len__(self) -> int:
        return len(self.src_ids)


def icp_correspondences(src_pts: np.ndarray, tree: cKDTree, transform: RigidTransform,
                        cap: float, src_gate: Optional[np.ndarray] = None,
                        dst_gate: Optional[np.ndarray] = None) -> _Matches:
    """Nearest target within `cap` for each source point. Gates (boolean
    masks) drop pairs whose source or target is off the shared surfaces,
    so gated pairs are always a subset of the ungated ones."""
    moved = transform.apply(src_pts)
    dist, idx = tree.query(moved, k=1, distance_upper_bound=cap)
    keep = np.isfinite(dist) & (dist <= cap)
    if src_gate is not None:
        keep &= src_gate
    if dst_gate is not None:
        keep &= dst_gate[np.minimum(idx, len(dst_gate) - 1)]
    src_ids = np.flatnonzero(keep)
    return _Matches(src_ids, idx[keep], moved[keep])


def _gates(src: PointCloud, dst: PointCloud, init: RigidTransform,
           params: IcpParams) -> tuple[np.ndarray, np.ndarray]:
    src_moved = apply_transform(PointCloud(src.points), init)
    seg_args = (params.gating_threshold, params.gating_min_inliers, params.gating_planes)
    src_planes = segment_surfaces(src_moved, *seg_args, seed=params.seed)
    dst_planes = segment_surfaces(PointCloud(dst.points), *seg_args, seed=params.seed)
    s_ids, d_ids = overlapping_surfaces(src_planes, dst_planes,
                                        params.gating_threshold, params.gating_max_angle)
    src_gate = np.zeros(len(src), dtype=bool)
    dst_gate = np.zeros(len(dst), dtype=bool)
    src_gate[s_ids] = True
    dst_gate[d_ids] = True
    log.info(f"[ICP] gating: {len(src_planes)}/{len(dst_planes)} planes, "
             f"{len(s_ids)} source and {len(d_ids)} target points on shared surfaces")
    return src_gate, dst_gate


# ── ICP ───────────────────────────────────────────────────────────────────────

def icp_point_to_plane(src: PointCloud, dst: PointCloud, init: RigidTransform,
                       params: IcpParams) -> IcpResult:
    if not dst.has_normals:
        raise MissingNormals("point-to-plane ICP requires target normals")
    if len(src) == 0 or len(dst) == 0:
        raise NoCorrespondences("empty cloud")

    tree = cKDTree(dst.points)
    src_gate = dst_gate = None
    if params.surface_gating:
        src_gate, dst_gate = _gates(src, dst, init, params)

    def match(t: RigidTransform) -> _Matches:
        return icp_correspondences(src.points, tree, t, params.distance_cap, src_gate, dst_gate)

    def rms_of(m: _Matches) -> float:
        r = point_to_plane_residuals(m.moved, dst.points[m.dst_ids], dst.normals[m.dst_ids])
        return float(np.sqrt(np.mean(r * r)))

    current = init
    matches = match(current)
    if len(matches) == 0:
        raise NoCorrespondences(f"no pair within {params.distance_cap} m at the initial pose")
    rms = rms_of(matches)
    history = [rms]
    iterations, converged = 0, False

    while iterations < params.max_iterations:
        q, nq = dst.points[matches.dst_ids], dst.normals[matches.dst_ids]
        a, g, _ = point_to_plane_system(matches.moved, q, nq)
        x = _solve_step(a, g)
        omega, tau = x[:3], x[3:]
        step_r = orthonormalize(np.eye(3) + _skew(omega))
        candidate = RigidTransform(
            orthonormalize(step_r @ current.rotation),
            step_r @ current.translation + tau,
        )
        iterations += 1

        candidate_matches = match(candidate)
        if len(candidate_matches) == 0:
            log.debug("[ICP] step lost every correspondence; stopping")
            break
        candidate_rms = rms_of(candidate_matches)
        if candidate_rms > rms + ACCEPT_SLACK:
            log.info(f"[ICP] stalled at iter {iterations}: step would raise rms "
                     f"{rms:.6g} → {candidate_rms:.6g}; keeping the previous pose")
            break

        d_trans = float(np.linalg.norm(candidate.translation - current.translation))
        d_rot = RigidTransform(step_r, np.zeros(3)).rotation_angle
        current, matches, rms = candidate, candidate_matches, candidate_rms
        history.append(rms)
        log.debug(f"[ICP] iter {iterations}: rms={rms:.6g} pairs={len(matches)} "
                  f"dt={d_trans:.2e} dr={d_rot:.2e}")
        if d_trans < params.translation_eps and d_rot < params.rotation_eps:
            converged = True
            break

    log.info(f"[ICP] {'converged' if converged else 'stopped'} after {iterations} iterations, "
             f"rms={rms:.6f} m, {len(matches)} pairs{' (gated)' if params.surface_gating else ''}")
    return IcpResult(current, rms, iterations, converged, history,
                     len(matches), params.surface_gating)
