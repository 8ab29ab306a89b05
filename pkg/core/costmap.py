"""
core/costmap.py
Embodiment-aware cost field: every occupied cell is lethal, and every
free cell within the embodiment radius (Chebyshev distance, in cells)
of an obstacle accumulates a Gaussian penalty from each such obstacle.
"""

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable

import numpy as np
from scipy.ndimage import correlate1d

from config.settings import log
from core.mapping import OccupancyGrid

LETHAL = math.inf


@dataclass(frozen=True)
class EmbodimentSpec:
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("robot length and width must be positive")

    @property
    def half_diagonal(self) -> float:
        return math.hypot(self.length / 2.0, self.width / 2.0)


@dataclass(frozen=True)
class GaussianParams:
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    radius: int = 29

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("Gaussian sigmas must be positive")
        if self.radius < 0 or int(self.radius) != self.radius:
            raise ValueError("truncation radius must be a nonnegative integer")


@dataclass(frozen=True, eq=False)
class CostField:
    """Grid geometry plus lethal flags and accumulated penalties.
    Lethal cells hold penalty 0; `cost()` reports them as LETHAL."""
    grid: OccupancyGrid
    lethal: np.ndarray
    penalty: np.ndarray

    def __post_init__(self):
        lethal = np.array(self.lethal, dtype=bool)
        penalty = np.array(self.penalty, dtype=np.float64)
        if lethal.shape != self.grid.shape or penalty.shape != self.grid.shape:
            raise ValueError("cost layers must match the grid shape")
        if np.any(penalty < 0):
            raise ValueError("penalties must be nonnegative")
        lethal.setflags(write=False)
        penalty.setflags(write=False)
        object.__setattr__(self, "lethal", lethal)
        object.__setattr__(self, "penalty", penalty)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lethal.shape

    @property
    def height(self) -> int:
        return self.lethal.shape[0]

    @property
    def width(self) -> int:
        return self.lethal.shape[1]

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def cost(self, row: int, col: int) -> float:
        return LETHAL if self.lethal[row, col] else float(self.penalty[row, col])

    def without_penalties(self) -> "CostField":
        return CostField(self.grid, self.lethal, np.zeros(self.shape))

    def with_changes(self, changes: Iterable[tuple[tuple[int, int], bool, float]]) -> "CostField":
        lethal = self.lethal.copy()
        penalty = self.penalty.copy()
        for (row, col), is_lethal, value in changes:
            lethal[row, col] = bool(is_lethal)
            penalty[row, col] = 0.0 if is_lethal else float(value)
        return CostField(self.grid, lethal, penalty)

    def diff(self, other: "CostField") -> list[tuple[tuple[int, int], bool, float]]:
        """Changes turning this field into `other`, row-major, in the
        form `with_changes` and the planner's `update_cells` take."""
        if other.shape != self.shape:
            raise ValueError(f"cannot diff {self.shape} against {other.shape}")
        changed = (self.lethal != other.lethal) | (self.penalty != other.penalty)
        rows, cols = np.nonzero(changed)
        return [((int(r), int(c)), bool(other.lethal[r, c]), float(other.penalty[r, c]))
                for r, c in zip(rows, cols)]


def embodiment_radius_cells(spec: EmbodimentSpec, resolution: float) -> int:
    """Half-diagonal of the footprint in cells, rounded half-up."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    cells = Decimal(repr(spec.half_diagonal / resolution))
    return int(cells.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))


def inflate(grid: OccupancyGrid, radius: int, params: GaussianParams = GaussianParams()) -> CostField:
    """Accumulated truncated Gaussian penalties around every occupied cell.

    f(c) = exp(−(Δx²/2σx² + Δy²/2σy²)) summed over obstacles within
    Chebyshev distance `radius`. The square window makes the kernel
    separable, so rows then columns are correlated independently.
    """
    if radius < 0:
        raise ValueError("inflation radius must be nonnegative")
    occupied = grid.occupied.astype(np.float64)
    if radius == 0 or not occupied.any():
        penalty = np.zeros(grid.shape)
    else:
        along_cols = correlate1d(occupied, gaussian_kernel(params.sigma_x, radius),
                                 axis=1, mode="constant", cval=0.0)
        penalty = correlate1d(along_cols, gaussian_kernel(params.sigma_y, radius),
                              axis=0, mode="constant", cval=0.0)
        penalty[grid.occupied] = 0.0
    log.info(f"[Costmap] inflated {int(grid.occupied.sum())} obstacles with radius {radius} cells "
             f"(sigma {params.sigma_x}, {params.sigma_y}); max penalty {penalty.max(initial=0.0):.4f}")
    return CostField(grid, grid.occupied, penalty)
