"""Uniform grids on the unit cube, dyadic panels and cube/ball predicates."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "Aabb",
    "PanelId",
    "panel_bounds",
    "cube_inside_ball",
    "cube_intersects_ball",
    "does_cube_intersect_ball",
    "node_position",
    "inside_ball_many",
    "intersects_ball_many",
]


@dataclass(frozen=True)
class Grid:
    """``n**d`` cell-centred nodes on [0, 1]^d, flattened row-major."""

    dimension: int
    n: int

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of 2 (>= 2), got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def N(self) -> int:
        return self.n ** self.dimension

    @property
    def depth(self) -> int:
        return self.n.bit_length() - 1

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dimension

    @cached_property
    def positions(self) -> np.ndarray:
        """Node coordinates, shape (N, d)."""
        idx = np.indices(self.shape).reshape(self.dimension, -1).T
        return (idx + 0.5) * self.h


def node_position(grid: Grid, flat_index: int) -> np.ndarray:
    if not 0 <= flat_index < grid.N:
        raise IndexError(f"node index {flat_index} out of range for N={grid.N}")
    k = np.array(np.unravel_index(flat_index, grid.shape))
    return (k + 0.5) * grid.h


@dataclass(frozen=True)
class Aabb:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box {self.lo} .. {self.hi}")

    @property
    def dimension(self) -> int:
        return len(self.lo)

    def corners(self):
        return itertools.product(*zip(self.lo, self.hi))


@dataclass(frozen=True)
class PanelId:
    level: int
    index: tuple

    def __post_init__(self):
        side = 1 << self.level
        if self.level < 0 or any(not 0 <= k < side for k in self.index):
            raise ValueError(f"invalid panel {self.level}, {self.index}")


def panel_bounds(panel: PanelId) -> Aabb:
    side = 1 << panel.level
    return Aabb(tuple(k / side for k in panel.index),
                tuple((k + 1) / side for k in panel.index))


def cube_inside_ball(box: Aabb, center, r: float) -> bool:
    """True iff every one of the 2^d corners lies in the closed ball."""
    r2 = r * r
    for corner in box.corners():
        d2 = 0.0
        for cj, xj in zip(corner, center):
            d2 += (cj - xj) ** 2
        if d2 > r2:
            return False
    return True


def does_cube_intersect_ball(bmin, bmax, center, r: float) -> bool:
    """Arvo's O(d) test on raw min/max/centre sequences: dmin < r^2 (strict)."""
    dmin = 0.0
    for i in range(len(center)):
        c = center[i]
        lo = bmin[i]
        if lo > c:
            dmin += (lo - c) ** 2
        else:
            hi = bmax[i]
            if hi < c:
                dmin += (hi - c) ** 2
    return dmin < r * r


def cube_intersects_ball(box: Aabb, center, r: float) -> bool:
    return does_cube_intersect_ball(box.lo, box.hi, center, r)


# vectorized forms used by the tree traversal; same arithmetic as above


def intersects_ball_many(lo: np.ndarray, hi: np.ndarray, centers: np.ndarray,
                         r2: np.ndarray) -> np.ndarray:
    """Row-wise Arvo test. ``lo``, ``hi``, ``centers``: (M, d); ``r2``: (M,)."""
    gap = np.where(lo > centers, lo - centers, np.where(hi < centers, hi - centers, 0.0))
    dmin = np.zeros(len(r2))
    for j in range(lo.shape[1]):
        dmin += gap[:, j] ** 2
    return dmin < r2


def inside_ball_many(lo: np.ndarray, hi: np.ndarray, centers: np.ndarray,
                     r2: np.ndarray) -> np.ndarray:
    """Row-wise corner containment; the farthest corner decides."""
    far = np.maximum((lo - centers) ** 2, (hi - centers) ** 2)
    d2 = np.zeros(len(r2))
    for j in range(lo.shape[1]):
        d2 += far[:, j]
    return d2 <= r2
