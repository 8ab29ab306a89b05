"""
core/features.py
Fast Point Feature Histograms and descriptor matching.

Descriptor layout: 33 bins = 3 angular features × 11 bins, blocks in
the order (alpha, phi, theta). Each block is normalized to sum to 100,
or is all-zero for a point without usable neighbors.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from core.errors import EmptyDescriptors, MissingNormals, NonPositiveRadius
from core.geometry import PointCloud

FPFH_BINS = 11
FPFH_DIM  = 3 * FPFH_BINS

_MATCH_CHUNK = 512
_TIE_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    src_ids: np.ndarray
    dst_ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.src_ids)

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return [(int(s), int(d), float(w))
                for s, d, w in zip(self.src_ids, self.dst_ids, self.distances)]


# ── Pair features ─────────────────────────────────────────────────────────────

def pair_features(p_s: np.ndarray, n_s: np.ndarray,
                  p_t: np.ndarray, n_t: np.ndarray) -> tuple[np.ndarray, ...]:
    """Darboux-frame angular features for rows of point/normal pairs.

    Returns (alpha, phi, theta, valid). The endpoint whose normal makes the
    smaller angle with the connecting line acts as the frame origin, which
    makes the features independent of pair order. Angles equal to within
    1e-9 in cosine keep the given order.
    """
    d = p_t - p_s
    dist = np.linalg.norm(d, axis=1)
    valid = dist > 0
    safe = np.where(valid, dist, 1.0)
    d = d / safe[:, None]

    cos_s = np.einsum("ij,ij->i", n_s, d)
    cos_t = np.einsum("ij,ij->i", n_t, d)
    swap = np.abs(cos_s) < np.abs(cos_t) - _TIE_EPS

    u   = np.where(swap[:, None], n_t, n_s)
    n2  = np.where(swap[:, None], n_s, n_t)
    d   = np.where(swap[:, None], -d, d)
    phi = np.where(swap, -cos_t, cos_s)

    v = np.cross(d, u)
    v_norm = np.linalg.norm(v, axis=1)
    valid &= v_norm > _TIE_EPS
    v = v / np.where(v_norm > _TIE_EPS, v_norm, 1.0)[:, None]
    w = np.cross(u, v)

    alpha = np.einsum("ij,ij->i", v, n2)
    y = np.einsum("ij,ij->i", w, n2)
    x = np.einsum("ij,ij->i", u, n2)
    # θ = ±π collapses to +π, and n2 ∥ v gives θ = 0
    y = np.where(np.abs(y) <= _TIE_EPS, 0.0, y)
    x = np.where(np.abs(x) <= _TIE_EPS, 0.0, x)
    theta = np.arctan2(y, x)
    return alpha, phi, theta, valid


def _bin(values: np.ndarray, low: float, high: float) -> np.ndarray:
    idx = np.floor(FPFH_BINS * (values - low) / (high - low)).astype(np.int64)
    return np.clip(idx, 0, FPFH_BINS - 1)


def _normalize_blocks(hist: np.ndarray) -> np.ndarray:
    blocks = hist.reshape(len(hist), 3, FPFH_BINS)
    sums = blocks.sum(axis=2, keepdims=True)
    scale = np.divide(100.0, sums, out=np.zeros_like(sums), where=sums > 0)
    return (blocks * scale).reshape(len(hist), FPFH_DIM)


# ── FPFH ──────────────────────────────────────────────────────────────────────

def compute_fpfh(cloud: PointCloud, radius: float) -> np.ndarray:
    """One 33-bin FPFH descriptor per point, shape (n, 33).

    FPFH(p) = SPFH(p) + (1/k) Σ_k SPFH(p_k) / ω_k with ω_k = |p − p_k|,
    each 11-bin block renormalized to 100.
    """
    if not cloud.has_normals:
        raise MissingNormals("FPFH requires a cloud with normals")
    if not radius > 0:
        raise NonPositiveRadius(f"feature radius must be positive, got {radius}")
    n = len(cloud)
    if n == 0:
        return np.zeros((0, FPFH_DIM))

    pts, nrm = cloud.points, cloud.normals
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((n, FPFH_DIM))
    i, j = pairs[:, 0], pairs[:, 1]

    alpha, phi, theta, valid = pair_features(pts[i], nrm[i], pts[j], nrm[j])
    i, j = i[valid], j[valid]
    alpha, phi, theta = alpha[valid], phi[valid], theta[valid]
    dist = np.linalg.norm(pts[j] - pts[i], axis=1)

    cols = np.stack([
        _bin(alpha, -1.0, 1.0),
        FPFH_BINS + _bin(phi, -1.0, 1.0),
        2 * FPFH_BINS + _bin(theta, -np.pi, np.pi),
    ], axis=1)

    # each unordered pair contributes to both endpoints' histograms
    rows = np.concatenate([i, j])
    cols = np.concatenate([cols, cols])
    flat = (rows[:, None] * FPFH_DIM + cols).reshape(-1)
    spfh = np.bincount(flat, minlength=n * FPFH_DIM).astype(np.float64).reshape(n, FPFH_DIM)
    spfh = _normalize_blocks(spfh)

    k = np.bincount(rows, minlength=n).astype(np.float64)
    weights = 1.0 / (np.concatenate([dist, dist]) * k[rows])
    w = sparse.csr_matrix((weights, (rows, np.concatenate([j, i]))), shape=(n, n))
    return _normalize_blocks(spfh + w @ spfh)


# ── Matching ──────────────────────────────────────────────────────────────────

def _as_descriptor_lists(src_descs, dst_descs) -> tuple[np.ndarray, np.ndarray]:
    src = np.asarray(src_descs, dtype=np.float64)
    dst = np.asarray(dst_descs, dtype=np.float64)
    if len(src) == 0 or len(dst) == 0:
        raise EmptyDescriptors("both descriptor lists must be nonempty")
    return src, dst


def _nearest_two(src: np.ndarray, dst: np.ndarray, second: bool = True
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest target id (lowest on ties), its distance and the
    second-smallest distance (inf with a single target or `second` off)."""
    best = np.empty(len(src), dtype=np.int64)
    best_d = np.empty(len(src))
    second_d = np.full(len(src), np.inf)
    for start in range(0, len(src), _MATCH_CHUNK):
        block = cdist(src[start:start + _MATCH_CHUNK], dst)
        rows = slice(start, start + len(block))
        arg = np.argmin(block, axis=1)  # first minimum → lowest id
        best[rows] = arg
        best_d[rows] = block[np.arange(len(arg)), arg]
        if second and block.shape[1] > 1:
            second_d[rows] = np.partition(block, 1, axis=1)[:, 1]
    return best, best_d, second_d


def match_correspondences(src_descs: np.ndarray, dst_descs: np.ndarray) -> CorrespondenceSet:
    """L2-nearest target descriptor for every source descriptor; ties go to
    the lower target id."""
    src, dst = _as_descriptor_lists(src_descs, dst_descs)
    best, best_d, _ = _nearest_two(src, dst, second=False)
    return CorrespondenceSet(np.arange(len(src), dtype=np.int64), best, best_d)


def mutual_matches(src_descs: np.ndarray, dst_descs: np.ndarray) -> CorrespondenceSet:
    """Pairs that are each other's nearest descriptor in both directions.

    A source whose nearest and second-nearest targets are equally far
    (repeated descriptors, as on flat patches) is dropped.
    """
    src, dst = _as_descriptor_lists(src_descs, dst_descs)
    fwd, fwd_d, fwd_second = _nearest_two(src, dst)
    back, _, _ = _nearest_two(dst, src, second=False)
    keep = (back[fwd] == np.arange(len(src))) & (fwd_second - fwd_d > _TIE_EPS)
    ids = np.flatnonzero(keep)
    return CorrespondenceSet(ids, fwd[ids], fwd_d[ids])
