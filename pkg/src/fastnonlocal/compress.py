"""HODLR compression of dense nonlocal operators and rank profiling.

The matrix is split recursively into 2 x 2 blocks; the two off-diagonal
blocks at each level are replaced by truncated SVD factors, and recursion
continues on the diagonal blocks down to ``leaf_size``. The singular values
are cut at a relative Frobenius tolerance, so the rank of each block
directly measures how smooth the kernel is across that block.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid
from .kernel import HorizonField, KernelSpec, kernel_of_regularity
from .operator import assemble_full_dense
from .tree import ConfigurationError

__all__ = [
    "LowRankBlock",
    "HodlrMatrix",
    "truncated_svd",
    "hodlr_compress",
    "hodlr_apply",
    "ProfileRow",
    "rank_profile",
    "profile_csv",
]


@dataclass
class LowRankBlock:
    U: np.ndarray  # (rows, rank)
    V: np.ndarray  # (rank, cols)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def stored_floats(self) -> int:
        return self.U.size + self.V.size

    def dense(self) -> np.ndarray:
        return self.U @ self.V


def truncated_svd(block: np.ndarray, epsilon: float) -> LowRankBlock:
    """Smallest-rank SVD truncation with ``||B - UV||_F <= eps ||B||_F``."""
    rows, cols = block.shape
    if not np.any(block):
        return LowRankBlock(np.zeros((rows, 0)), np.zeros((0, cols)))
    u, s, vh = np.linalg.svd(block, full_matrices=False)
    # tail[r] = sum_{j >= r} s_j^2
    tail = np.concatenate([np.cumsum((s ** 2)[::-1])[::-1], [0.0]])
    rank = int(np.argmax(tail <= (epsilon ** 2) * tail[0]))
    return LowRankBlock(u[:, :rank] * s[:rank], vh[:rank].copy())


@dataclass
class _Node:
    lo: int
    hi: int
    level: int
    dense: np.ndarray | None = None
    upper: LowRankBlock | None = None   # rows [lo, mid), cols [mid, hi)
    lower: LowRankBlock | None = None   # rows [mid, hi), cols [lo, mid)
    children: tuple = ()

    @property
    def mid(self) -> int:
        return (self.lo + self.hi) // 2


@dataclass
class HodlrMatrix:
    root: _Node
    N: int
    epsilon: float
    leaf_size: int
    depth: int = 0
    stored_floats: int = 0
    ranks: dict = field(default_factory=dict)  # level -> list of ranks

    @property
    def shape(self) -> tuple:
        return (self.N, self.N)

    @property
    def max_rank(self) -> int:
        return max((max(r) for r in self.ranks.values() if r), default=0)

    def max_rank_per_level(self) -> list:
        return [max(self.ranks.get(l, [0]) or [0]) for l in range(self.depth)]

    def blocks(self):
        """Yield ``(row_slice, col_slice, LowRankBlock)`` for every factored block."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.dense is not None:
                continue
            m = node.mid
            yield slice(node.lo, m), slice(m, node.hi), node.upper
            yield slice(m, node.hi), slice(node.lo, m), node.lower
            stack.extend(node.children)

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.N:
            raise ValueError(f"dimension mismatch: matrix {self.N}, vector {u.shape[0]}")
        out = np.zeros_like(u)
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.dense is not None:
                out[node.lo:node.hi] += node.dense @ u[node.lo:node.hi]
                continue
            m = node.mid
            if node.upper.rank:
                out[node.lo:m] += node.upper.U @ (node.upper.V @ u[m:node.hi])
            if node.lower.rank:
                out[m:node.hi] += node.lower.U @ (node.lower.V @ u[node.lo:m])
            stack.extend(node.children)
        return out

    __matmul__ = apply

    def todense(self) -> np.ndarray:
        A = np.zeros((self.N, self.N))
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.dense is not None:
                A[node.lo:node.hi, node.lo:node.hi] = node.dense
                continue
            m = node.mid
            A[node.lo:m, m:node.hi] = node.upper.dense()
            A[m:node.hi, node.lo:m] = node.lower.dense()
            stack.extend(node.children)
        return A


def hodlr_compress(A, epsilon: float, leaf_size: int = 32) -> HodlrMatrix:
    A = np.asarray(A, dtype=float)
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    if leaf_size < 1:
        raise ConfigurationError(f"leaf_size must be >= 1, got {leaf_size}")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    N = A.shape[0]
    H = HodlrMatrix(_Node(0, N, 0), N, epsilon, leaf_size)

    def build(node: _Node):
        lo, hi = node.lo, node.hi
        if hi - lo <= leaf_size:
            node.dense = A[lo:hi, lo:hi].copy()
            H.stored_floats += node.dense.size
            return
        m = node.mid
        node.upper = truncated_svd(A[lo:m, m:hi], epsilon)
        node.lower = truncated_svd(A[m:hi, lo:m], epsilon)
        H.stored_floats += node.upper.stored_floats + node.lower.stored_floats
        H.ranks.setdefault(node.level, []).extend([node.upper.rank, node.lower.rank])
        H.depth = max(H.depth, node.level + 1)
        node.children = (_Node(lo, m, node.level + 1), _Node(m, hi, node.level + 1))
        for child in node.children:
            build(child)

    build(H.root)
    return H


def hodlr_apply(H: HodlrMatrix, u) -> np.ndarray:
    return H.apply(u)


# ---------------------------------------------------------------------------
# rank profile


@dataclass
class ProfileRow:
    regularity_k: int
    N: int
    delta: float
    epsilon: float
    stored_floats: int
    dense_floats: int
    max_rank: int
    ranks_by_level: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.stored_floats / self.dense_floats


CSV_COLUMNS = ("regularity_k", "N", "delta", "epsilon", "stored_floats", "dense_floats",
               "ratio", "max_rank")


def rank_profile(regularities=(-1, 0, 1, 2, 3), d: int = 1, n: int = 1024,
                 delta: float = 0.25, epsilon: float = 1e-8, leaf_size: int = 32) -> list:
    """Compress the full-kernel operator for each horizon regularity ``k``.

    ``k = -1`` is the raw ``1/|s|`` kernel; ``k >= 0`` is the C^k kernel left
    after subtracting the matched polynomial of order k.
    """
    grid = Grid(d, n)
    rows = []
    for k in regularities:
        spec = KernelSpec(d, kernel_of_regularity(k), HorizonField(delta0=delta))
        H = hodlr_compress(assemble_full_dense(spec, grid), epsilon, leaf_size)
        rows.append(ProfileRow(k, grid.N, delta, epsilon, H.stored_floats, grid.N ** 2,
                               H.max_rank, H.max_rank_per_level()))
    return rows


def profile_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.regularity_k, r.N, repr(r.delta), repr(r.epsilon), r.stored_floats,
                    r.dense_floats, f"{r.ratio:.6g}", r.max_rank])
    return buf.getvalue()
