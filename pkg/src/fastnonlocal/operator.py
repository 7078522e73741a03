"""Nonlocal operators on a uniform grid: dense oracles and the fast tree path.

All operators use midpoint quadrature with weight ``h**d`` per node. Two
inclusion rules decide which nodes enter the sum for an evaluation point
``x`` with horizon ``delta``:

* ``Rule.LEAF``: node ``y`` counts iff its leaf cell meets the open ball
  ``B(x, delta)``. This is what the panel decomposition produces.
* ``Rule.POINT``: node ``y`` counts iff ``|y - x| < delta``.

Two forms of the diagonal term are available:

* ``Form.BALL``: ``C/delta^(d+2) * (h^d sum_y p(..) u(y) - |B_delta| u(x))``
  (zero volume constraint outside the domain, full ball volume).
* ``Form.DIFFERENCE``: ``h^d sum_{y != x} omega(x, y) (u(y) - u(x))``.
"""

from __future__ import annotations

import enum
import math
import time

import numpy as np

from .geometry import Grid
from .kernel import (Family, HorizonField, KernelSpec, MatchedPolynomial, SplitKernel,
                     SymmetryClass, inverse_s, match_polynomial, split)
from .tree import ConfigurationError, accumulate_moments, build_tree, decompose_all, moment_count

__all__ = [
    "Rule",
    "Form",
    "ball_volume",
    "assemble_dense",
    "assemble_truncated_dense",
    "apply_truncated_dense",
    "assemble_smooth_dense",
    "apply_smooth_dense",
    "assemble_full_dense",
    "apply_full_dense",
    "TruncatedOperator",
    "apply_truncated_fast",
    "SplitOperator",
    "apply_split",
    "local_limit_probe",
]

# doubles per dense row block (rows * N * d)
_BLOCK_BUDGET = 1 << 22


class Rule(enum.Enum):
    LEAF = "leaf"
    POINT = "point"


class Form(enum.Enum):
    BALL = "ball"
    DIFFERENCE = "difference"


def ball_volume(d: int, r):
    if d == 1:
        return 2.0 * r
    if d == 2:
        return math.pi * r * r
    if d == 3:
        return 4.0 / 3.0 * math.pi * r ** 3
    raise ValueError(f"dimension must be 1, 2 or 3, got {d}")


def _truncated_polynomial(spec: KernelSpec, polynomial: MatchedPolynomial | None):
    if polynomial is not None:
        return polynomial
    prof = spec.profile
    if prof.family is not Family.POLYNOMIAL_TRUNCATED:
        raise ConfigurationError(
            f"truncated operator needs a polynomial_truncated profile, got {prof.family.value}")
    return match_polynomial(inverse_s(prof.c), prof.order)


# ---------------------------------------------------------------------------
# dense operators


def _row_blocks(grid: Grid):
    N, d = grid.N, grid.dimension
    step = max(1, _BLOCK_BUDGET // (N * d))
    for start in range(0, N, step):
        yield slice(start, min(N, start + step))


def _dense_block(spec: KernelSpec, grid: Grid, rows: slice, kernel, rule: Rule,
                 form: Form) -> np.ndarray:
    d, h = grid.dimension, grid.h
    P = grid.positions
    x = P[rows][:, None, :]
    y = P[None, :, :]
    delta = np.broadcast_to(spec.delta(x, y), (x.shape[0], P.shape[0]))
    diff = y - x
    r2 = np.zeros(delta.shape)
    for j in range(d):
        r2 += diff[..., j] ** 2
    dist = np.sqrt(r2)
    if rule is Rule.POINT:
        inc = dist < delta
    else:
        # leaf cell of y against the ball, same arithmetic as the tree
        lo, hi = y - 0.5 * h, y + 0.5 * h
        gap = np.where(lo > x, lo - x, np.where(hi < x, hi - x, 0.0))
        dmin = np.zeros(delta.shape)
        for j in range(d):
            dmin += gap[..., j] ** 2
        inc = dmin < delta * delta
    ri = np.arange(rows.start, rows.stop)
    diag = (np.arange(len(ri)), ri)
    if form is Form.DIFFERENCE:
        inc[diag] = False
    s = np.where(inc, dist / delta, 0.5)
    vals = np.where(inc, np.asarray(kernel(s)), 0.0)
    block = h ** d * spec.coeff(x, y) / delta ** (d + 2) * vals
    if form is Form.DIFFERENCE:
        block[diag] = -block.sum(axis=1)
    else:
        if spec.symmetry_class is not SymmetryClass.NON_DIVERGENCE:
            raise ConfigurationError("ball form needs a horizon depending on x only")
        xr = P[rows]
        dx = spec.horizon(xr)
        block[diag] -= spec.coeff(xr, xr) / dx ** (d + 2) * ball_volume(d, dx)
    return block


def assemble_dense(spec: KernelSpec, grid: Grid, kernel, rule: Rule = Rule.POINT,
                   form: Form = Form.DIFFERENCE) -> np.ndarray:
    """N x N matrix of the discretized operator with radial kernel ``kernel(s)``."""
    A = np.empty((grid.N, grid.N))
    for rows in _row_blocks(grid):
        A[rows] = _dense_block(spec, grid, rows, kernel, rule, form)
    return A


def _apply_dense(spec, grid, kernel, rule, form, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.empty(grid.N)
    for rows in _row_blocks(grid):
        block = _dense_block(spec, grid, rows, kernel, rule, form)
        if form is Form.DIFFERENCE:
            # sum of w * (u(y) - u(x)): constants cancel exactly
            out[rows] = np.sum(block * (u[None, :] - u[rows, None]), axis=1)
        else:
            out[rows] = block @ u
    return out


def assemble_truncated_dense(spec: KernelSpec, grid: Grid, rule: Rule = Rule.LEAF,
                             form: Form = Form.BALL,
                             polynomial: MatchedPolynomial | None = None) -> np.ndarray:
    """Dense matrix of the polynomial part.

    Included nodes are weighted by the plain polynomial, so a LEAF-included
    node slightly outside the ball still gets ``p(|y - x| / delta)``.
    """
    return assemble_dense(spec, grid, _truncated_polynomial(spec, polynomial), rule, form)


def apply_truncated_dense(spec: KernelSpec, grid: Grid, rule: Rule, u,
                          form: Form = Form.BALL,
                          polynomial: MatchedPolynomial | None = None) -> np.ndarray:
    return _apply_dense(spec, grid, _truncated_polynomial(spec, polynomial), rule, form, u)


def assemble_smooth_dense(sk: SplitKernel, spec: KernelSpec, grid: Grid) -> np.ndarray:
    return assemble_dense(spec, grid, sk.kappa, Rule.POINT, Form.DIFFERENCE)


def apply_smooth_dense(sk: SplitKernel, spec: KernelSpec, grid: Grid, u) -> np.ndarray:
    return _apply_dense(spec, grid, sk.kappa, Rule.POINT, Form.DIFFERENCE, u)


def assemble_full_dense(spec: KernelSpec, grid: Grid, rule: Rule = Rule.POINT) -> np.ndarray:
    return assemble_dense(spec, grid, spec.profile, rule, Form.DIFFERENCE)


def apply_full_dense(spec: KernelSpec, grid: Grid, u, rule: Rule = Rule.POINT) -> np.ndarray:
    return _apply_dense(spec, grid, spec.profile, rule, Form.DIFFERENCE, u)


# ---------------------------------------------------------------------------
# fast truncated operator


def _moment_weights(poly: MatchedPolynomial, x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """``w[m]`` with ``p(|y - x| / delta) = sum_m w[m] * y**m`` (1d).

    Each ``(y - x)**(2j)`` is expanded binomially in powers of ``y``.
    """
    K = poly.K
    w = np.zeros((2 * K + 1, len(x)))
    for j, cj in enumerate(poly.coeffs):
        scale = cj / delta ** (2 * j)
        for m in range(2 * j + 1):
            w[m] += scale * math.comb(2 * j, m) * (-x) ** (2 * j - m)
    return w


class TruncatedOperator:
    """Fast application of the polynomial-truncated operator.

    Construction runs the panel decomposition for every node (Step 1) and
    keeps it. Each :meth:`apply` accumulates panel moments bottom-up
    (Step 2) and sums them over each node's panels (Step 3). Operation
    counts of the last application are in ``counts``.
    """

    def __init__(self, spec: KernelSpec, grid: Grid, form: Form = Form.BALL,
                 polynomial: MatchedPolynomial | None = None):
        if spec.dimension != grid.dimension:
            raise ConfigurationError("kernel and grid dimensions differ")
        if spec.symmetry_class is not SymmetryClass.NON_DIVERGENCE:
            raise ConfigurationError("fast path needs a horizon depending on x only")
        self.spec, self.grid, self.form = spec, grid, form
        self.poly = _truncated_polynomial(spec, polynomial)
        self.K = self.poly.K
        self.n_moments = moment_count(grid.dimension, self.K)
        d = grid.dimension
        x = grid.positions
        self.delta = np.asarray(spec.horizon(x), dtype=float)
        self.prefactor = spec.coeff(x, x) / self.delta ** (d + 2)
        self.hd = grid.h ** d

        t0 = time.perf_counter_ns()
        self.tree = build_tree(grid)
        self.decomposition = decompose_all(self.tree, x, self.delta)
        self.setup_ns = time.perf_counter_ns() - t0
        if d == 1:
            self.weights = _moment_weights(self.poly, x[:, 0], self.delta)
        else:
            self.weights = np.full((1, grid.N), self.poly.coeffs[0])

        if form is Form.BALL:
            self.mass = ball_volume(d, self.delta)
        else:
            self.mass = self.hd * self._panel_integral(np.ones(grid.N))
        self.counts: dict = {}

    @property
    def recur_calls(self) -> int:
        return self.decomposition.total_recur_calls

    def _panel_integral(self, u: np.ndarray) -> np.ndarray:
        """``sum_{y covered} p(|y - x_i| / delta_i) u(y)`` for every node."""
        moments = accumulate_moments(self.tree, u, self.K)
        dec = self.decomposition
        N = self.grid.N
        total = np.zeros(N)
        for m in range(self.n_moments):
            t = np.bincount(dec.owner, weights=moments.values[m, dec.gid], minlength=N)
            total += self.weights[m] * t
        self.counts = {
            "step2_ops": moments.ops,
            "step3_ops": self.n_moments * (dec.panel_visits + N),
            "panel_visits": dec.panel_visits,
        }
        return total

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.grid.N,):
            raise ValueError(f"u must have shape ({self.grid.N},), got {u.shape}")
        s = self._panel_integral(u)
        return self.prefactor * (self.hd * s - self.mass * u)

    __call__ = apply

    def apply_transpose(self, v) -> np.ndarray:
        """Adjoint application: scatter to panels, push down to leaves."""
        v = np.asarray(v, dtype=float)
        tree, dec, grid = self.tree, self.decomposition, self.grid
        a = self.prefactor * v
        nm = self.n_moments
        acc = np.empty((nm, tree.n_panels))
        for m in range(nm):
            acc[m] = np.bincount(dec.gid, weights=(a * self.weights[m])[dec.owner],
                                 minlength=tree.n_panels)
        d = grid.dimension
        offs = tree.level_offsets
        for level in range(tree.depth):
            side = 1 << level
            parent = acc[:, offs[level]:offs[level + 1]].reshape((nm,) + (side,) * d)
            idx = (slice(None),) + tuple(x for _ in range(d) for x in (slice(None), None))
            expanded = np.broadcast_to(parent[idx],
                                       (nm,) + tuple(x for _ in range(d) for x in (side, 2)))
            acc[:, offs[level + 1]:offs[level + 2]] += expanded.reshape(nm, -1)
        leaf = acc[:, offs[-2]:]
        out = np.zeros(grid.N)
        y = grid.positions[:, 0]
        for m in range(nm - 1, -1, -1):
            out = out * y + leaf[m]
        return self.hd * out - self.mass * a


def apply_truncated_fast(op: TruncatedOperator, u) -> np.ndarray:
    return op.apply(u)


# ---------------------------------------------------------------------------
# split operator


class SplitOperator:
    """``L = L_kappa + L_p`` for the split ``gamma = kappa + p chi``.

    The smooth part uses the POINT rule in difference form, either dense
    or HODLR-compressed. The polynomial part is the fast tree operator
    (LEAF rule) or, with ``truncated="dense"``, a dense matrix under
    ``rule``.
    """

    def __init__(self, spec: KernelSpec, grid: Grid, K: int, smooth_backend: str = "dense",
                 epsilon: float = 1e-8, leaf_size: int = 32, truncated: str = "fast",
                 rule: Rule = Rule.LEAF, form: Form = Form.BALL):
        self.spec, self.grid = spec, grid
        self.split = split(spec.profile, K)
        self.smooth_matrix = assemble_smooth_dense(self.split, spec, grid)
        if smooth_backend == "dense":
            self._smooth = self.smooth_matrix.__matmul__
        elif smooth_backend == "hodlr":
            from .compress import hodlr_compress
            self.hodlr = hodlr_compress(self.smooth_matrix, epsilon, leaf_size)
            self._smooth = self.hodlr.apply
        else:
            raise ConfigurationError(f"unknown smooth backend {smooth_backend!r}")
        poly = self.split.polynomial
        if truncated == "fast":
            if rule is not Rule.LEAF:
                raise ConfigurationError("the fast truncated path uses the LEAF rule")
            self.truncated = TruncatedOperator(spec, grid, form, polynomial=poly)
            self._trunc = self.truncated.apply
        elif truncated == "dense":
            self.truncated_matrix = assemble_truncated_dense(spec, grid, rule, form, poly)
            self._trunc = self.truncated_matrix.__matmul__
        else:
            raise ConfigurationError(f"unknown truncated path {truncated!r}")

    def smooth_part(self, u):
        return self._smooth(np.asarray(u, dtype=float))

    def truncated_part(self, u):
        return self._trunc(np.asarray(u, dtype=float))

    def apply(self, u) -> np.ndarray:
        return self.smooth_part(u) + self.truncated_part(u)

    __call__ = apply


def apply_split(spec: KernelSpec, grid: Grid, K: int, u, smooth_backend: str = "dense",
                **kwargs) -> np.ndarray:
    return SplitOperator(spec, grid, K, smooth_backend, **kwargs).apply(u)


def local_limit_probe(profile, ns, delta: float = 0.125, u=None) -> list:
    """Full-kernel operator on ``u(x) = x**2`` (default) at interior 1d nodes.

    For a symmetric kernel the continuum value is the second moment of the
    profile, independent of ``x`` and ``delta``. Returns one array of
    interior values per grid size.
    """
    spec = KernelSpec(1, profile, HorizonField(delta0=delta))
    out = []
    for n in ns:
        grid = Grid(1, n)
        x = grid.positions[:, 0]
        vals = apply_full_dense(spec, grid, x ** 2 if u is None else u(x))
        interior = (x - delta > 0) & (x + delta < 1)
        out.append(vals[interior])
    return out
