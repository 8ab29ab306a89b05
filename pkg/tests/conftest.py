"""
Shared fixtures and brute-force oracles.

The oracles are written independently of the package code: plain loops
and dictionaries, no kd-trees, no vectorized kernels.
"""

import heapq
import math

import numpy as np
import pytest

from core.costmap import CostField
from core.geometry import PointCloud
from core.mapping import OccupancyGrid, plane_basis


# ── Oracles ──────────────────────────────────────────────────────────────

def brute_knn(points: np.ndarray, query, k: int) -> list[tuple[int, float]]:
    q = np.asarray(query, dtype=np.float64)
    scored = [(float(np.sqrt(np.sum((p - q) ** 2))), i) for i, p in enumerate(points)]
    scored.sort()
    return [(i, d) for d, i in scored[:k]]


def brute_voxels(points: np.ndarray, edge: float) -> list[np.ndarray]:
    buckets: dict[tuple[int, int, int], list[np.ndarray]] = {}
    for p in points:
        key = tuple(int(math.floor(c / edge)) for c in p)
        buckets.setdefault(key, []).append(p)
    return [np.mean(buckets[key], axis=0) for key in sorted(buckets)]


def brute_inflate(occupied: np.ndarray, radius: int, sigma_x: float = 1.0,
                  sigma_y: float = 1.0) -> np.ndarray:
    h, w = occupied.shape
    out = np.zeros((h, w))
    obstacles = list(zip(*np.nonzero(occupied)))
    for r in range(h):
        for c in range(w):
            if occupied[r, c]:
                continue
            total = 0.0
            for orow, ocol in obstacles:
                dr, dc = r - orow, c - ocol
                if max(abs(dr), abs(dc)) <= radius:
                    total += math.exp(-(dc * dc / (2 * sigma_x ** 2) + dr * dr / (2 * sigma_y ** 2)))
            out[r, c] = total
    return out


def _oracle_edge(lethal: np.ndarray, penalty: np.ndarray, u, v) -> float:
    if lethal[u] or lethal[v]:
        return math.inf
    diagonal = u[0] != v[0] and u[1] != v[1]
    if diagonal and (lethal[u[0], v[1]] or lethal[v[0], u[1]]):
        return math.inf
    length = math.sqrt(2.0) if diagonal else 1.0
    return length * (1.0 + (penalty[u] + penalty[v]) / 2.0)


def dijkstra(field: CostField, start, goal) -> float:
    """Forward Dijkstra over the 8-connected grid; inf when unreachable."""
    lethal, penalty = field.lethal, field.penalty
    h, w = lethal.shape
    dist = {tuple(start): 0.0}
    heap = [(0.0, tuple(start))]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == tuple(goal):
            return d
        done.add(u)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                v = (u[0] + dr, u[1] + dc)
                if not (0 <= v[0] < h and 0 <= v[1] < w) or v in done:
                    continue
                c = _oracle_edge(lethal, penalty, u, v)
                if c == math.inf:
                    continue
                if d + c < dist.get(v, math.inf):
                    dist[v] = d + c
                    heapq.heappush(heap, (d + c, v))
    return math.inf


# ── Builders ─────────────────────────────────────────────────────────────

def make_grid(occupied: np.ndarray, resolution: float = 0.01) -> OccupancyGrid:
    return OccupancyGrid((0.0, 0.0), resolution, occupied, plane_basis(np.array([0.0, 0.0, 1.0])))


def make_field(lethal: np.ndarray, penalty=None) -> CostField:
    lethal = np.asarray(lethal, dtype=bool)
    if penalty is None:
        penalty = np.zeros(lethal.shape)
    return CostField(make_grid(lethal), lethal, np.where(lethal, 0.0, penalty))


def random_field(rng: np.random.Generator, h: int, w: int, lethal_fraction: float = 0.2) -> CostField:
    lethal = rng.random((h, w)) < lethal_fraction
    return make_field(lethal, rng.random((h, w)))


def floor_points(x_range, y_range, spacing: float = 0.01, z: float = 0.0) -> np.ndarray:
    xs = np.arange(x_range[0], x_range[1] + spacing / 2, spacing)
    ys = np.arange(y_range[0], y_range[1] + spacing / 2, spacing)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])


def wall_points(x: float, y_range, z_range=(0.1, 0.3), spacing: float = 0.01) -> np.ndarray:
    ys = np.arange(y_range[0], y_range[1] + spacing / 2, spacing)
    zs = np.arange(z_range[0], z_range[1] + spacing / 2, spacing)
    gy, gz = np.meshgrid(ys, zs)
    return np.column_stack([np.full(gy.size, x), gy.ravel(), gz.ravel()])


def room_points(wall: bool = True) -> np.ndarray:
    """1.0 × 0.6 m floor on z = 0; optional wall at x = 0.5 over y ∈ [0, 0.4]."""
    floor = floor_points((0.0, 1.0), (0.0, 0.6))
    if not wall:
        return floor
    # half-voxel spacing so every 1 cm cell along the wall is hit
    return np.vstack([floor, wall_points(0.5, (0.0, 0.4), spacing=0.005)])


# ── Fixtures ─────────────────────────────────────────────────────────────

@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def plane_patch() -> PointCloud:
    """Regular 1 cm grid on z = 0, 41 × 41 points."""
    return PointCloud(floor_points((0.0, 0.4), (0.0, 0.4)))
