"""Complete dyadic tree over the unit cube, ball decomposition and moments.

Panels at level ``l`` are the cubes ``prod_j [k_j / 2^l, (k_j + 1) / 2^l]``
flattened row-major, so leaf panel ``i`` holds grid node ``i``. Every panel
also has a global id ``level_offsets[l] + flat`` used to index moment
tables.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid, PanelId, inside_ball_many, intersects_ball_many

__all__ = [
    "Tree",
    "Decomposition",
    "DecompositionSet",
    "MomentTable",
    "ConfigurationError",
    "build_tree",
    "decompose_region",
    "decompose_all",
    "accumulate_moments",
    "count_recur_calls",
]

# cap on (node, panel) pairs alive at once while decomposing
_PAIR_BUDGET = 1 << 21


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Tree:
    grid: Grid
    level_offsets: np.ndarray = field(repr=False)
    child_offsets: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    @property
    def depth(self) -> int:
        return self.grid.depth

    @property
    def n_panels(self) -> int:
        return int(self.level_offsets[-1])

    def level_size(self, level: int) -> int:
        return 1 << (self.dimension * level)

    def panels(self, level: int) -> list:
        side = 1 << level
        return [PanelId(level, k) for k in itertools.product(range(side), repeat=self.dimension)]

    def children(self, panel: PanelId) -> list:
        if panel.level >= self.depth:
            return []
        base = np.array(panel.index) * 2
        return [PanelId(panel.level + 1, tuple(int(v) for v in base + off))
                for off in self.child_offsets]

    def parent(self, panel: PanelId) -> PanelId | None:
        if panel.level == 0:
            return None
        return PanelId(panel.level - 1, tuple(k // 2 for k in panel.index))

    def flat_index(self, panel: PanelId) -> int:
        return int(np.ravel_multi_index(panel.index, (1 << panel.level,) * self.dimension))

    def global_id(self, panel: PanelId) -> int:
        return int(self.level_offsets[panel.level]) + self.flat_index(panel)

    def nodes_in(self, panel: PanelId) -> np.ndarray:
        """Flat indices of the grid nodes inside ``panel``."""
        span = 1 << (self.depth - panel.level)
        ranges = [np.arange(k * span, (k + 1) * span) for k in panel.index]
        mesh = np.meshgrid(*ranges, indexing="ij")
        return np.sort(np.ravel_multi_index([m.ravel() for m in mesh], self.grid.shape))


def build_tree(grid: Grid) -> Tree:
    n = grid.n
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"n must be a power of 2, got {n}")
    d = grid.dimension
    sizes = [1 << (d * l) for l in range(grid.depth + 1)]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    child = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    return Tree(grid, offsets, child)


# ---------------------------------------------------------------------------
# Step 1: decomposition of B(x, r) cap Omega


@dataclass
class Decomposition:
    center: np.ndarray
    radius: float
    panels: list
    recur_calls: int

    @property
    def panel_count(self) -> int:
        return len(self.panels)

    def covered_nodes(self, tree: Tree) -> np.ndarray:
        if not self.panels:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate([tree.nodes_in(p) for p in self.panels]))


@dataclass
class DecompositionSet:
    """Decompositions for many centres in CSR form, sorted by centre."""

    tree: Tree
    centers: np.ndarray
    radii: np.ndarray
    offsets: np.ndarray  # (M + 1,)
    level: np.ndarray    # (P,) int8
    flat: np.ndarray     # (P,) int64
    gid: np.ndarray      # (P,) int64
    owner: np.ndarray    # (P,) centre index of each panel
    recur_calls: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.radii)

    @property
    def total_recur_calls(self) -> int:
        return int(self.recur_calls.sum())

    @property
    def panel_visits(self) -> int:
        return int(self.offsets[-1])

    def panel_counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __getitem__(self, i: int) -> Decomposition:
        sl = slice(self.offsets[i], self.offsets[i + 1])
        d = self.tree.dimension
        panels = [PanelId(int(l), tuple(int(v) for v in np.unravel_index(f, (1 << int(l),) * d)))
                  for l, f in zip(self.level[sl], self.flat[sl])]
        return Decomposition(self.centers[i], float(self.radii[i]), panels,
                             int(self.recur_calls[i]))


def _decompose_chunk(tree: Tree, centers: np.ndarray, radii: np.ndarray):
    d, L = tree.dimension, tree.depth
    m = len(radii)
    owner = np.arange(m, dtype=np.int64)
    idx = np.zeros((m, d), dtype=np.int64)
    calls = np.zeros(m, dtype=np.int64)
    r2_all = radii * radii
    out_owner, out_level, out_flat = [], [], []
    for level in range(L + 1):
        if len(owner) == 0:
            break
        calls += np.bincount(owner, minlength=m)
        side = float(1 << level)
        lo = idx / side
        hi = (idx + 1) / side
        c = centers[owner]
        r2 = r2_all[owner]
        inside = inside_ball_many(lo, hi, c, r2)
        hit = intersects_ball_many(lo, hi, c, r2)
        if level == L:
            keep = inside | hit
            recurse = np.zeros_like(keep)
        else:
            keep = inside
            recurse = hit & ~inside
        if keep.any():
            out_owner.append(owner[keep])
            out_level.append(np.full(int(keep.sum()), level, dtype=np.int8))
            out_flat.append(np.ravel_multi_index(idx[keep].T, (1 << level,) * d))
        nxt = int(recurse.sum())
        if nxt == 0:
            break
        k = len(tree.child_offsets)
        owner = np.repeat(owner[recurse], k)
        idx = (np.repeat(idx[recurse] * 2, k, axis=0)
               + np.tile(tree.child_offsets, (nxt, 1)))
    if out_owner:
        o = np.concatenate(out_owner)
        lv = np.concatenate(out_level)
        fl = np.concatenate(out_flat).astype(np.int64)
    else:
        o = np.zeros(0, np.int64)
        lv = np.zeros(0, np.int8)
        fl = np.zeros(0, np.int64)
    return o, lv, fl, calls


def decompose_all(tree: Tree, centers, radii) -> DecompositionSet:
    """Run the recursive panel decomposition for every (centre, radius).

    A panel fully inside the closed ball is kept whole; a panel that meets
    the open ball is refined, or kept if it is a leaf. The traversal is
    breadth-first over all centres at once; it makes exactly the calls the
    depth-first recursion would, so ``recur_calls`` counts those.
    """
    d = tree.dimension
    centers = np.asarray(centers, dtype=float).reshape(-1, d)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),)).copy()
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    M = len(centers)
    # rough size of the frontier per centre: boundary panels at leaf level
    per = max(1, 2 ** d * int(np.ceil(4 * (tree.grid.n * 2 * float(radii.max())) ** (d - 1))))
    chunk = max(1, _PAIR_BUDGET // per)

    owners, levels, flats = [], [], []
    calls = np.zeros(M, dtype=np.int64)
    for start in range(0, M, chunk):
        stop = min(M, start + chunk)
        o, lv, fl, cl = _decompose_chunk(tree, centers[start:stop], radii[start:stop])
        owners.append(o + start)
        levels.append(lv)
        flats.append(fl)
        calls[start:stop] = cl
    owner = np.concatenate(owners)
    level = np.concatenate(levels)
    flat = np.concatenate(flats)
    order = np.argsort(owner, kind="stable")
    owner, level, flat = owner[order], level[order], flat[order]
    offsets = np.zeros(M + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=M), out=offsets[1:])
    gid = tree.level_offsets[level.astype(np.int64)] + flat
    return DecompositionSet(tree, centers, radii, offsets, level, flat, gid,
                            owner, calls)


def decompose_region(tree: Tree, center, radius: float) -> Decomposition:
    return decompose_all(tree, np.atleast_1d(np.asarray(center, dtype=float))[None, :],
                         [radius])[0]


def count_recur_calls(tree: Tree, centers, radii) -> int:
    return decompose_all(tree, centers, radii).total_recur_calls


# ---------------------------------------------------------------------------
# Step 2: bottom-up moments


@dataclass
class MomentTable:
    """``values[m, gid] = sum_{x_k in panel} x_k**m u(x_k)`` (1d) or plain sums."""

    tree: Tree
    K: int
    values: np.ndarray  # (2K + 1, n_panels)
    ops: int

    @property
    def n_moments(self) -> int:
        return self.values.shape[0]

    def level(self, level: int) -> np.ndarray:
        a, b = self.tree.level_offsets[level], self.tree.level_offsets[level + 1]
        return self.values[:, a:b]

    def __getitem__(self, key):
        m, panel = key
        return self.values[m, self.tree.global_id(panel)]


def moment_count(dimension: int, K: int) -> int:
    if K < 0:
        raise ConfigurationError(f"K must be >= 0, got {K}")
    if dimension > 1 and K != 0:
        raise ConfigurationError(f"moments with K={K} are only supported in 1d")
    return 2 * K + 1


def accumulate_moments(tree: Tree, u, K: int = 0) -> MomentTable:
    """Leaf moments from ``u``, then each parent is the sum of its children."""
    nm = moment_count(tree.dimension, K)
    grid = tree.grid
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.N,):
        raise ValueError(f"u must have shape ({grid.N},), got {u.shape}")
    d, L = tree.dimension, tree.depth
    values = np.empty((nm, tree.n_panels))
    leaf = np.empty((nm, grid.N))
    leaf[0] = u
    if nm > 1:
        x = grid.positions[:, 0]
        for m in range(1, nm):
            leaf[m] = leaf[m - 1] * x
    values[:, tree.level_offsets[L]:] = leaf
    ops = nm * grid.N
    cur = leaf.reshape((nm,) + grid.shape)
    for level in range(L - 1, -1, -1):
        side = 1 << level
        split = (nm,) + tuple(x for _ in range(d) for x in (side, 2))
        cur = cur.reshape(split).sum(axis=tuple(range(2, 2 * d + 1, 2)))
        values[:, tree.level_offsets[level]:tree.level_offsets[level + 1]] = cur.reshape(nm, -1)
        ops += nm * (side ** d) * (1 << d)
    return MomentTable(tree, K, values, ops)
