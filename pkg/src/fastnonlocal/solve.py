"""Matrix-free Krylov solves of the volume-constrained Dirichlet problem.

The system is ``A u = f`` with ``A = -L`` the negated nonlocal operator on
the grid nodes; the zero exterior condition is built into ``L`` itself.
CG is used for symmetric configurations and CGLS (CG on the normal
equations, here called CGNR) otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernel import KernelSpec, SymmetryClass

__all__ = [
    "Method",
    "SolveReport",
    "SolverError",
    "solve_dirichlet",
    "select_method",
    "negated",
    "symmetry_defect",
    "direct_solve",
]


class SolverError(RuntimeError):
    pass


class Method(enum.Enum):
    CG = "cg"
    CGNR = "cgnr"


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    solution: np.ndarray
    method: Method
    converged: bool

    def __bool__(self) -> bool:
        return self.converged


def negated(apply: Callable) -> Callable:
    return lambda u: -apply(u)


def select_method(spec: KernelSpec) -> Method:
    """CG when the discrete operator is symmetric: constant horizon and C."""
    symmetric = spec.horizon.is_constant and spec.constant_coefficient
    if spec.symmetry_class is SymmetryClass.DIVERGENCE and spec.constant_coefficient:
        symmetric = True
    return Method.CG if symmetric else Method.CGNR


def symmetry_defect(A: np.ndarray) -> float:
    return float(np.linalg.norm(A - A.T) / np.linalg.norm(A))


def _checked(op, v):
    out = op(v)
    if not np.all(np.isfinite(out)):
        raise SolverError("operator returned non-finite values")
    return out


def _cg(A, f, tol, max_iter):
    fnorm = np.linalg.norm(f)
    x = np.zeros_like(f)
    r = f.copy()
    p = r.copy()
    rr = r @ r
    it = 0
    while it < max_iter:
        if np.sqrt(rr) <= tol * fnorm:
            # guard against drift of the recursive residual
            r = f - _checked(A, x)
            rr = r @ r
            if np.sqrt(rr) <= tol * fnorm:
                break
            p = r.copy()
        Ap = _checked(A, p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("operator is not positive definite; use CGNR")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    return x, it


def _cgnr(A, At, f, tol, max_iter):
    fnorm = np.linalg.norm(f)
    x = np.zeros_like(f)
    r = f.copy()
    s = _checked(At, r)
    p = s.copy()
    ss = s @ s
    it = 0
    while it < max_iter and np.linalg.norm(r) > tol * fnorm:
        q = _checked(A, p)
        alpha = ss / (q @ q)
        x += alpha * p
        r -= alpha * q
        s = _checked(At, r)
        ss_new = s @ s
        p = s + (ss_new / ss) * p
        ss = ss_new
        it += 1
    return x, it


def solve_dirichlet(operator: Callable, f, tol: float = 1e-10, max_iter: int | None = None,
                    method: Method | str = Method.CG,
                    adjoint: Callable | None = None) -> SolveReport:
    """Solve ``operator(u) = f``.

    ``operator`` applies the negated nonlocal operator. ``adjoint`` applies
    its transpose and is required for CGNR. Running out of iterations is
    reported through ``converged``; it does not raise.
    """
    method = Method(method)
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise SolverError("right-hand side is not finite")
    if max_iter is None:
        max_iter = 10 * len(f)
    fnorm = np.linalg.norm(f)
    if fnorm == 0:
        return SolveReport(0, 0.0, np.zeros_like(f), method, True)
    if method is Method.CG:
        x, it = _cg(operator, f, tol, max_iter)
    else:
        if adjoint is None:
            raise SolverError("CGNR needs the adjoint operator")
        x, it = _cgnr(operator, adjoint, f, tol, max_iter)
    res = float(np.linalg.norm(f - _checked(operator, x)) / fnorm)
    return SolveReport(it, res, x, method, res <= tol)


def direct_solve(A: np.ndarray, f) -> np.ndarray:
    return np.linalg.solve(A, np.asarray(f, dtype=float))
