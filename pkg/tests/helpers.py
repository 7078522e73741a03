"""Shared test oracles."""

import math

import numpy as np


def backward_weights(order: int, npoints: int) -> np.ndarray:
    """Weights for ``f^(order)(x) ~ sum_j w_j f(x - j h) / h**order``."""
    offsets = -np.arange(npoints, dtype=float)
    V = np.array([offsets ** q / math.factorial(q) for q in range(npoints)])
    rhs = np.zeros(npoints)
    rhs[order] = 1.0
    return np.linalg.solve(V, rhs)


def one_sided_derivative(f, x: float, order: int, h: float = 1e-4, extra: int = 3) -> float:
    n = order + extra
    w = backward_weights(order, n)
    vals = np.asarray(f(x - h * np.arange(n)), dtype=float)
    return float(w @ vals) / h ** order


def rel_inf(a, b) -> float:
    """``||a - b||_inf / ||b||_inf``."""
    a, b = np.asarray(a), np.asarray(b)
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / scale) if scale else float(np.max(np.abs(a)))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
