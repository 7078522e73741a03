"""Radial kernel profiles, matched polynomials and the singularity split.

A nonlocal diffusion kernel has the form

    omega(x, y) = C(x, y) / delta(x, y)**(d + 2) * gamma(|y - x| / delta(x, y))

where ``gamma`` is a radial profile supported on [-1, 1]. The profiles used
in peridynamics are singular at the origin *and* discontinuous at the
horizon. :func:`split` writes ``gamma = kappa + p * chi(|s| < 1)`` with ``p``
an even polynomial matching ``gamma`` to order K at ``s = 1`` so that
``kappa`` is C^K across the horizon.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Union

import numpy as np
from scipy import integrate

__all__ = [
    "Family",
    "HorizonKind",
    "SymmetryClass",
    "RadialProfile",
    "HorizonField",
    "KernelSpec",
    "MatchedPolynomial",
    "SplitKernel",
    "KernelDomainError",
    "MatchingError",
    "inverse_s",
    "conical_inverse_s",
    "regularized",
    "polynomial_truncated",
    "kernel_of_regularity",
    "eval_profile",
    "match_polynomial",
    "split",
    "eval_omega",
    "second_moment",
    "kernel_spec_to_config",
    "kernel_spec_from_config",
    "parse_key_values",
]

EXACT_MAX_K = 3

# below this, kappa is evaluated as gamma - p; above, by its Taylor form at s=1
_TAYLOR_SWITCH = 0.5


class KernelDomainError(ValueError):
    """Evaluation of a singular profile at the origin."""


class MatchingError(ValueError):
    """The polynomial matching system could not be solved."""


class Family(enum.Enum):
    INVERSE_S = "inverse_s"
    CONICAL_INVERSE_S = "conical_inverse_s"
    REGULARIZED = "regularized"
    POLYNOMIAL_TRUNCATED = "polynomial_truncated"


class HorizonKind(enum.Enum):
    CONSTANT = "constant"
    GAUSSIAN_BUMP = "gaussian_bump"


class SymmetryClass(enum.Enum):
    NON_DIVERGENCE = "non_divergence"
    DIVERGENCE = "divergence"


@dataclass(frozen=True)
class RadialProfile:
    """Radial profile ``gamma(|s|)`` supported on ``|s| < 1``.

    ``order`` is the regularity k for ``REGULARIZED`` and the matching order
    K for ``POLYNOMIAL_TRUNCATED``; it is ignored otherwise.
    """

    family: Family
    c: float = 1.0
    order: int = 0

    @property
    def singular(self) -> bool:
        return self.family is not Family.POLYNOMIAL_TRUNCATED

    def __call__(self, s):
        return eval_profile(self, s)


def inverse_s(c: float = 1.0) -> RadialProfile:
    return RadialProfile(Family.INVERSE_S, c)


def conical_inverse_s(c: float = 1.0) -> RadialProfile:
    return RadialProfile(Family.CONICAL_INVERSE_S, c)


def regularized(k: int, c: float = 1.0) -> RadialProfile:
    if k < 0:
        raise ValueError(f"regularity must be >= 0, got {k}")
    return RadialProfile(Family.REGULARIZED, c, k)


def polynomial_truncated(K: int, c: float = 1.0) -> RadialProfile:
    if K < 0:
        raise ValueError(f"matching order must be >= 0, got {K}")
    return RadialProfile(Family.POLYNOMIAL_TRUNCATED, c, K)


def kernel_of_regularity(k: int, c: float = 1.0) -> RadialProfile:
    """C^k kernel at the horizon; ``k = -1`` is the raw discontinuous 1/|s|."""
    return inverse_s(c) if k == -1 else regularized(k, c)


# ---------------------------------------------------------------------------
# matched polynomials


@dataclass(frozen=True)
class MatchedPolynomial:
    """Even polynomial ``p(s) = sum_j coeffs[j] * s**(2j)``."""

    K: int
    coeffs: tuple
    exact: tuple | None = None  # Fractions when solved exactly

    def __call__(self, s):
        s2 = np.square(np.asarray(s, dtype=float))
        out = np.zeros_like(s2)
        for c in reversed(self.coeffs):
            out = out * s2 + c
        return out if out.ndim else float(out)

    def taylor_at_one(self) -> list:
        """Coefficients of p in powers of ``t = s - 1`` (length 2K + 1)."""
        cs = self.exact if self.exact is not None else self.coeffs
        zero = Fraction(0) if self.exact is not None else 0.0
        return [
            sum((cj * math.comb(2 * j, m) for j, cj in enumerate(cs) if 2 * j >= m), zero)
            for m in range(2 * self.K + 1)
        ]


def _gamma_taylor(profile: RadialProfile, M: int, exact: bool) -> list:
    """Taylor coefficients of gamma at s = 1 up to t**M.

    Both supported base families are ``c/s - beta*c`` on (0, 1).
    """
    if profile.family is Family.INVERSE_S:
        beta = 0
    elif profile.family is Family.CONICAL_INVERSE_S:
        beta = 1
    else:
        raise MatchingError(f"no closed-form matching for {profile.family.value}")
    c = Fraction(profile.c) if exact else float(profile.c)
    coeffs = [c * (-1) ** m for m in range(M + 1)]
    coeffs[0] -= beta * c
    return coeffs


def _solve_exact(A: list, b: list) -> list:
    n = len(b)
    M = [list(row) + [rhs] for row, rhs in zip(A, b)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            raise MatchingError("singular matching system")
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col] / M[col][col]
                M[r] = [a - f * p for a, p in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


def match_polynomial(profile: RadialProfile, K: int) -> MatchedPolynomial:
    """Even degree-2K polynomial agreeing with ``profile`` to order K at s=1.

    Writing ``s = 1 + t``, ``s**(2j)`` contributes ``binom(2j, m)`` to the
    t**m coefficient, so matching derivatives 0..K is a (K+1)x(K+1) system
    in the even-power coefficients. Solved in exact rationals for K <= 3.
    """
    if K < 0:
        raise MatchingError(f"matching order must be >= 0, got {K}")
    exact = K <= EXACT_MAX_K
    g = _gamma_taylor(profile, K, exact)
    A = [[math.comb(2 * j, m) for j in range(K + 1)] for m in range(K + 1)]
    if exact:
        sol = _solve_exact([[Fraction(a) for a in row] for row in A], g)
        return MatchedPolynomial(K, tuple(float(x) for x in sol), tuple(sol))
    A = np.array(A, dtype=float)
    if np.linalg.matrix_rank(A) < K + 1:
        raise MatchingError("singular matching system")
    sol = np.linalg.solve(A, np.array(g, dtype=float))
    return MatchedPolynomial(K, tuple(float(x) for x in sol))


# ---------------------------------------------------------------------------
# split


@dataclass(frozen=True)
class SplitKernel:
    """``gamma = kappa + p * chi(|s| < 1)``.

    ``kappa`` is evaluated through its Taylor form about s = 1 on [1/2, 1],
    where ``gamma - p`` would lose all relative accuracy; that keeps the
    vanishing derivatives at the horizon visible to finite differences.
    """

    profile: RadialProfile
    polynomial: MatchedPolynomial
    _diff: tuple = field(repr=False, default=())

    @property
    def K(self) -> int:
        return self.polynomial.K

    def kappa(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        if np.any(a == 0):
            raise KernelDomainError("kappa is singular at s = 0")
        out = np.zeros_like(a)
        near = (a >= _TAYLOR_SWITCH) & (a <= 1)
        far = a < _TAYLOR_SWITCH
        if np.any(far):
            af = a[far]
            out[far] = _base_gamma(self.profile, af) - self.polynomial(af)
        if np.any(near):
            an = a[near]
            t = an - 1.0
            acc = np.zeros_like(t)
            for dm in reversed(self._diff):
                acc = acc * t + dm
            # remainder of c/s = c * sum_{m<=2K} (-t)^m + c (-t)^(2K+1) / s
            rem = float(self.profile.c) * (-t) ** (2 * self.K + 1) / an
            out[near] = acc + rem
        return out if out.ndim else float(out)

    def truncated(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        out = np.where(a < 1, self.polynomial(a), 0.0)
        return out if out.ndim else float(out)

    def gamma(self, s):
        return eval_profile(self.profile, s)


def split(profile: RadialProfile, K: int) -> SplitKernel:
    poly = match_polynomial(profile, K)
    exact = poly.exact is not None
    g = _gamma_taylor(profile, 2 * K, exact)
    a = poly.taylor_at_one()
    diff = [gm - am for gm, am in zip(g, a)]
    # the matching conditions make the first K+1 Taylor coefficients vanish
    for m in range(K + 1):
        diff[m] = 0
    return SplitKernel(profile, poly, tuple(float(x) for x in diff))


# ---------------------------------------------------------------------------
# profile evaluation


def _base_gamma(profile: RadialProfile, a: np.ndarray) -> np.ndarray:
    c = float(profile.c)
    if profile.family is Family.INVERSE_S:
        return c / a
    if profile.family is Family.CONICAL_INVERSE_S:
        return c / a * (1.0 - a)
    raise ValueError(profile.family)


_split_cache: dict = {}


def _cached_split(profile: RadialProfile, K: int) -> SplitKernel:
    key = (profile, K)
    if key not in _split_cache:
        _split_cache[key] = split(profile, K)
    return _split_cache[key]


def eval_profile(profile: RadialProfile, s):
    """``gamma(|s|)``; zero for ``|s| >= 1``."""
    a = np.abs(np.asarray(s, dtype=float))
    inside = a < 1
    if profile.singular and np.any(inside & (a == 0)):
        raise KernelDomainError(f"{profile.family.value} is singular at s = 0")
    out = np.zeros_like(a)
    if np.any(inside):
        ai = a[inside]
        fam = profile.family
        if fam in (Family.INVERSE_S, Family.CONICAL_INVERSE_S):
            out[inside] = _base_gamma(profile, ai)
        elif fam is Family.REGULARIZED:
            out[inside] = _cached_split(inverse_s(profile.c), profile.order).kappa(ai)
        else:
            out[inside] = match_polynomial(inverse_s(profile.c), profile.order)(ai)
    return out if out.ndim else float(out)


def second_moment(profile: RadialProfile) -> float:
    """``int_{-1}^{1} s**2 gamma(|s|) ds`` by adaptive quadrature."""
    val, _ = integrate.quad(
        lambda s: s * s * eval_profile(profile, s), 0.0, 1.0,
        epsabs=0.0, epsrel=1e-12, limit=200,
    )
    return 2.0 * val


# ---------------------------------------------------------------------------
# horizon, coefficient, full kernel


@dataclass(frozen=True)
class HorizonField:
    kind: HorizonKind = HorizonKind.CONSTANT
    delta0: float = 0.25

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")

    @property
    def max_value(self) -> float:
        return self.delta0 if self.kind is HorizonKind.CONSTANT else 2.0 * self.delta0

    @property
    def is_constant(self) -> bool:
        return self.kind is HorizonKind.CONSTANT

    def __call__(self, x):
        """Horizon at points ``x`` of shape (..., d) (or scalars in 1d)."""
        x = np.asarray(x, dtype=float)
        first = x[..., 0] if x.ndim else x
        if self.kind is HorizonKind.CONSTANT:
            out = np.full(np.shape(first), self.delta0)
        else:
            out = self.delta0 * (1.0 + np.exp(-20.0 * (first - 0.5) ** 2))
        return out if out.ndim else float(out)


Coefficient = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class KernelSpec:
    """Full description of ``omega(x, y)``.

    ``coefficient`` is a constant or a callable ``C(x, y)`` on arrays of
    points of shape (..., d). For the divergence class the horizon is
    symmetrized as ``(delta(x) + delta(y)) / 2``.
    """

    dimension: int
    profile: RadialProfile
    horizon: HorizonField = field(default_factory=HorizonField)
    coefficient: Coefficient = 1.0
    symmetry_class: SymmetryClass = SymmetryClass.NON_DIVERGENCE

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dimension}")

    @property
    def constant_coefficient(self) -> bool:
        return not callable(self.coefficient)

    def coeff(self, x, y) -> np.ndarray:
        if callable(self.coefficient):
            return np.asarray(self.coefficient(x, y), dtype=float)
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
        return np.full(shape, float(self.coefficient))

    def delta(self, x, y) -> np.ndarray:
        if self.symmetry_class is SymmetryClass.DIVERGENCE:
            return 0.5 * (np.asarray(self.horizon(x)) + np.asarray(self.horizon(y)))
        dx = np.asarray(self.horizon(x))
        return np.broadcast_to(dx, np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]))

    def with_profile(self, profile: RadialProfile) -> "KernelSpec":
        return KernelSpec(self.dimension, profile, self.horizon, self.coefficient,
                          self.symmetry_class)


def _as_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x


def eval_omega(spec: KernelSpec, x, y):
    """Kernel value ``omega(x, y)``; zero outside the horizon."""
    x = _as_point(x, spec.dimension)
    y = _as_point(y, spec.dimension)
    delta = spec.delta(x, y)
    r = np.hypot.reduce(y - x, axis=-1)  # no underflow for tiny separations
    out = spec.coeff(x, y) / delta ** (spec.dimension + 2) * eval_profile(spec.profile, r / delta)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# config section

_CONFIG_KEYS = ("dimension", "profile", "regularity_k", "split_K", "horizon_kind",
                "delta0", "coefficient")


def kernel_spec_to_config(spec: KernelSpec, split_K: int | None = None) -> str:
    if not spec.constant_coefficient:
        raise ValueError("only constant coefficients are serializable")
    prof = spec.profile
    lines = {
        "dimension": spec.dimension,
        "profile": prof.family.value,
        "regularity_k": prof.order if prof.family is Family.REGULARIZED else "",
        "split_K": prof.order if prof.family is Family.POLYNOMIAL_TRUNCATED else (
            split_K if split_K is not None else ""),
        "horizon_kind": spec.horizon.kind.value,
        "delta0": repr(float(spec.horizon.delta0)),
        "coefficient": repr(float(spec.coefficient)),
    }
    if prof.c != 1.0:
        lines["c"] = repr(float(prof.c))
    return "".join(f"{k}={v}\n" for k, v in lines.items() if v != "")


def parse_key_values(text: str) -> dict:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def kernel_spec_from_config(cfg: Union[str, Mapping[str, str]]) -> KernelSpec:
    if isinstance(cfg, str):
        cfg = parse_key_values(cfg)
    fam = Family(cfg.get("profile", "inverse_s"))
    c = float(cfg.get("c", 1.0))
    if fam is Family.REGULARIZED:
        profile = regularized(int(cfg["regularity_k"]), c)
    elif fam is Family.POLYNOMIAL_TRUNCATED:
        profile = polynomial_truncated(int(cfg["split_K"]), c)
    else:
        profile = RadialProfile(fam, c)
    horizon = HorizonField(HorizonKind(cfg.get("horizon_kind", "constant")),
                           float(cfg.get("delta0", 0.25)))
    return KernelSpec(int(cfg.get("dimension", 1)), profile, horizon,
                      float(cfg.get("coefficient", 1.0)))
