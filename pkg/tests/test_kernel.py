from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from helpers import one_sided_derivative

from fastnonlocal.kernel import (Family, HorizonField, HorizonKind, KernelDomainError, KernelSpec,
                                 MatchingError, RadialProfile, SymmetryClass, conical_inverse_s,
                                 eval_omega, eval_profile, inverse_s, kernel_of_regularity,
                                 kernel_spec_from_config, kernel_spec_to_config, match_polynomial,
                                 polynomial_truncated, regularized, second_moment, split)

S = sp.symbols("s")


def sympy_matching(gamma, K):
    """Independent oracle: solve p^(m)(1) = gamma^(m)(1) symbolically."""
    c = sp.symbols(f"c0:{K + 1}")
    p = sum(c[j] * S ** (2 * j) for j in range(K + 1))
    eqs = [sp.Eq(sp.diff(p, S, m).subs(S, 1), sp.diff(gamma, S, m).subs(S, 1))
           for m in range(K + 1)]
    sol = sp.solve(eqs, c, dict=True)[0]
    return [sp.Rational(sol[ci]) for ci in c]


# --- profiles ---------------------------------------------------------------


def test_profile_examples():
    assert eval_profile(inverse_s(), 0.5) == 2.0
    assert eval_profile(inverse_s(), 1.2) == 0.0
    assert eval_profile(conical_inverse_s(), 0.5) == 1.0


def test_singular_profile_at_zero_raises():
    with pytest.raises(KernelDomainError):
        eval_profile(inverse_s(), 0.0)
    with pytest.raises(KernelDomainError):
        eval_profile(regularized(2), np.array([0.3, 0.0]))
    # polynomial profiles are regular at the origin
    assert eval_profile(polynomial_truncated(1), 0.0) == 1.5


@pytest.mark.parametrize("profile", [inverse_s(), conical_inverse_s(), regularized(0),
                                     regularized(3), polynomial_truncated(0),
                                     polynomial_truncated(2)])
def test_profile_even_and_compact(profile):
    s = np.linspace(0.01, 1.5, 300)
    np.testing.assert_array_equal(eval_profile(profile, s), eval_profile(profile, -s))
    assert np.all(eval_profile(profile, s[s >= 1]) == 0.0)
    assert eval_profile(profile, 1.0) == 0.0


@pytest.mark.parametrize("profile", [inverse_s(), conical_inverse_s(), regularized(0),
                                     regularized(1), regularized(2), regularized(3),
                                     polynomial_truncated(0), polynomial_truncated(3)])
def test_profile_nonnegative(profile):
    s = np.linspace(1e-3, 0.999, 2000)
    assert np.all(eval_profile(profile, s) >= -1e-14)


def test_kernel_of_regularity():
    assert kernel_of_regularity(-1) == inverse_s()
    assert kernel_of_regularity(2) == RadialProfile(Family.REGULARIZED, 1.0, 2)
    with pytest.raises(ValueError):
        regularized(-2)


# --- matching ---------------------------------------------------------------


@pytest.mark.parametrize("K", range(6))
def test_matching_inverse_s_against_sympy(K):
    oracle = sympy_matching(1 / S, K)
    poly = match_polynomial(inverse_s(), K)
    assert len(poly.coeffs) == K + 1
    if poly.exact is not None:
        assert [sp.Rational(f.numerator, f.denominator) for f in poly.exact] == oracle
    np.testing.assert_allclose(poly.coeffs, [float(v) for v in oracle], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("K", range(4))
def test_matching_conical_against_sympy(K):
    oracle = sympy_matching((1 - S) / S, K)
    poly = match_polynomial(conical_inverse_s(), K)
    assert [sp.Rational(f.numerator, f.denominator) for f in poly.exact] == oracle


def test_matching_low_orders_are_known_rationals():
    assert match_polynomial(inverse_s(), 0).exact == (Fraction(1),)
    assert match_polynomial(inverse_s(), 1).exact == (Fraction(3, 2), Fraction(-1, 2))
    assert match_polynomial(inverse_s(), 2).exact == (Fraction(15, 8), Fraction(-5, 4),
                                                      Fraction(3, 8))


def test_matching_order_three_derivatives():
    # the degree-6 polynomial must match 1/s through the third derivative at s = 1
    p = sum(sp.Rational(c.numerator, c.denominator) * S ** (2 * j)
            for j, c in enumerate(match_polynomial(inverse_s(), 3).exact))
    for m in range(4):
        assert sp.diff(p, S, m).subs(S, 1) == sp.diff(1 / S, S, m).subs(S, 1)


def test_matching_scales_with_c():
    a = match_polynomial(inverse_s(2.5), 2)
    b = match_polynomial(inverse_s(), 2)
    np.testing.assert_allclose(a.coeffs, 2.5 * np.array(b.coeffs), rtol=1e-15)


def test_matching_errors():
    with pytest.raises(MatchingError):
        match_polynomial(inverse_s(), -1)
    with pytest.raises(MatchingError):
        match_polynomial(polynomial_truncated(1), 1)


# --- split ------------------------------------------------------------------


def test_split_kappa_vanishes_at_one():
    sk = split(inverse_s(), 3)
    assert sk.kappa(1.0) == 0.0
    assert sk.kappa(1.5) == 0.0


def test_split_kappa_half_order_three():
    c = [sp.Rational(v) for v in sympy_matching(1 / S, 3)]
    expected = float(2 - sum(cj * sp.Rational(1, 4) ** j for j, cj in enumerate(c)))
    assert split(inverse_s(), 3).kappa(0.5) == pytest.approx(expected, rel=1e-14)


def test_split_kappa_at_zero_raises():
    with pytest.raises(KernelDomainError):
        split(inverse_s(), 1).kappa(0.0)


def test_split_identity_k0_thousand_points():
    sk = split(inverse_s(), 0)
    s = np.linspace(0, 1, 1002)[1:-1]
    assert np.max(np.abs(sk.kappa(s) + sk.truncated(s) - sk.gamma(s))) <= 1e-14


@pytest.mark.parametrize("K", range(4))
def test_split_identity_relative(K):
    # relative to gamma the identity holds to a few ulps everywhere
    for profile in (inverse_s(), conical_inverse_s()):
        sk = split(profile, K)
        s = np.linspace(0, 1, 10002)[1:-1]
        g = sk.gamma(s)
        err = np.abs(sk.kappa(s) + sk.truncated(s) - g)
        assert np.all(err <= 4 * np.finfo(float).eps * np.maximum(g, 1.0) * (K + 1))


@pytest.mark.parametrize("K", range(4))
def test_kappa_matches_exact_rational_oracle(K):
    c = sympy_matching(1 / S, K)
    kappa = sp.lambdify(S, 1 / S - sum(cj * S ** (2 * j) for j, cj in enumerate(c)), "mpmath")
    sk = split(inverse_s(), K)
    for s in (0.05, 0.3, 0.49, 0.5, 0.7, 0.9, 0.999):
        exact = float(kappa(sp.Rational(s)))
        assert sk.kappa(s) == pytest.approx(exact, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("K", range(4))
def test_kappa_derivatives_vanish_at_one(K):
    sk = split(inverse_s(), K)
    for order in range(K + 1):
        assert abs(one_sided_derivative(sk.kappa, 1.0, order)) <= 1e-6


@pytest.mark.parametrize("K", range(3))
def test_kappa_next_derivative_nonzero(K):
    # matching stops at order K, so the (K+1)-th derivative survives
    sk = split(inverse_s(), K)
    assert abs(one_sided_derivative(sk.kappa, 1.0, K + 1)) > 1e-2


@given(st.floats(min_value=1e-6, max_value=0.999999), st.integers(min_value=0, max_value=3))
def test_split_reassembles_gamma(s, K):
    sk = split(inverse_s(), K)
    g = 1.0 / s
    assert abs(sk.kappa(s) + sk.truncated(s) - g) <= 8 * np.finfo(float).eps * max(g, 1.0)


def test_regularized_profile_is_kappa():
    s = np.linspace(0.01, 0.99, 50)
    np.testing.assert_array_equal(eval_profile(regularized(2), s), split(inverse_s(), 2).kappa(s))


# --- second moment ----------------------------------------------------------


@pytest.mark.parametrize("profile, expected", [
    (inverse_s(), 1.0),
    (conical_inverse_s(), 1.0 / 3.0),
    (polynomial_truncated(0), 2.0 / 3.0),
])
def test_second_moment(profile, expected):
    assert second_moment(profile) == pytest.approx(expected, rel=1e-10)


def test_second_moment_regularized_against_sympy():
    c = sympy_matching(1 / S, 2)
    kappa = 1 / S - sum(cj * S ** (2 * j) for j, cj in enumerate(c))
    exact = float(2 * sp.integrate(S ** 2 * kappa, (S, 0, 1)))
    assert second_moment(regularized(2)) == pytest.approx(exact, rel=1e-10)


# --- horizon and omega ------------------------------------------------------


def test_horizon_bump():
    h = HorizonField(HorizonKind.GAUSSIAN_BUMP, 1.0)
    assert h(np.array([0.5])) == pytest.approx(2.0)
    x = np.random.default_rng(0).random((200, 2))
    v = h(x)
    assert np.all((v >= 1.0) & (v <= 2.0))
    assert not h.is_constant
    assert HorizonField(delta0=0.3).is_constant


def test_horizon_rejects_nonpositive():
    with pytest.raises(ValueError):
        HorizonField(delta0=0.0)


def test_omega_examples():
    spec = KernelSpec(1, inverse_s(), HorizonField(delta0=1.0))
    assert eval_omega(spec, 0.0, 0.5) == 2.0
    spec = KernelSpec(1, inverse_s(), HorizonField(delta0=0.25))
    assert eval_omega(spec, 0.0, 0.5) == 0.0
    with pytest.raises(KernelDomainError):
        eval_omega(spec, 0.2, 0.2)


def test_omega_scaling_2d():
    spec = KernelSpec(2, conical_inverse_s(), HorizonField(delta0=0.5), coefficient=3.0)
    x, y = np.array([0.2, 0.2]), np.array([0.2, 0.45])
    assert eval_omega(spec, x, y) == pytest.approx(3.0 / 0.5 ** 4 * (2.0 * 0.5))


points = st.lists(st.floats(0, 1), min_size=2, max_size=2)


@settings(max_examples=60)
@given(points, points, st.sampled_from([inverse_s(), conical_inverse_s(), regularized(1),
                                        polynomial_truncated(2)]))
def test_omega_compact_support(x, y, profile):
    spec = KernelSpec(2, profile, HorizonField(HorizonKind.GAUSSIAN_BUMP, 0.1))
    x, y = np.array(x), np.array(y)
    if np.linalg.norm(y - x) >= spec.delta(x, y):
        assert eval_omega(spec, x, y) == 0.0


@settings(max_examples=60)
@given(points, points)
def test_omega_divergence_symmetric(x, y):
    x, y = np.array(x), np.array(y)
    if np.array_equal(x, y):
        return
    spec = KernelSpec(2, inverse_s(), HorizonField(HorizonKind.GAUSSIAN_BUMP, 0.3),
                      coefficient=lambda a, b: 1.0 + a[..., 0] * b[..., 0],
                      symmetry_class=SymmetryClass.DIVERGENCE)
    assert eval_omega(spec, x, y) == eval_omega(spec, y, x)


def test_config_round_trip():
    spec = KernelSpec(2, polynomial_truncated(0), HorizonField(HorizonKind.GAUSSIAN_BUMP, 0.125),
                      coefficient=2.0)
    text = kernel_spec_to_config(spec)
    assert "split_K=0" in text and "horizon_kind=gaussian_bump" in text
    assert kernel_spec_from_config(text) == spec
    reg = KernelSpec(1, regularized(3), HorizonField(delta0=0.25))
    assert kernel_spec_from_config("# kernel\n" + kernel_spec_to_config(reg)) == reg


def test_config_rejects_garbage():
    with pytest.raises(ValueError):
        kernel_spec_from_config("dimension 2\n")
