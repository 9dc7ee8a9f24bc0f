"""Smoothing kernels, cutoff profile, and the exact covariance quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson


def heat_kernel(t, x, y):
    """Planar heat kernel p_t at time t: (2*pi*t)^-1 exp(-|x|^2 / (2t)).

    x, y are coordinate arrays (broadcast together).
    """
    t = float(t)
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.exp(-(x * x + y * y) / (2.0 * t)) / (2.0 * math.pi * t)


def _g(s):
    out = np.zeros_like(s, dtype=float)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def bump(u):
    """Smooth cutoff profile: 1 on [0, 1], 0 on [2, inf), strictly between on (1, 2).

    bump(u) = g(2-u) / (g(2-u) + g(u-1)) with g(s) = exp(-1/s) for s > 0, else 0.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("bump is defined for u >= 0")
    a = _g(2.0 - u)
    b = _g(u - 1.0)
    return a / (a + b)


@dataclass(frozen=True)
class TruncationParams:
    """Cutoff radius profile sigma_t = r0 * sqrt(t) * |log t|^eps0.

    eps0 must stay below 1/2 for the cutoff radius to shrink fast enough
    relative to the block size in the coarse decomposition.
    """

    r0: float = 0.05
    eps0: float = 0.2

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")
        if not 0 < self.eps0 < 0.5:
            raise ValueError("eps0 must lie in (0, 1/2)")


def sigma_t(t, trunc: TruncationParams):
    """Cutoff radius at kernel time t in (0, 1]. Vanishes at t = 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t > 1):
        raise ValueError("t must lie in (0, 1]")
    return trunc.r0 * np.sqrt(t) * np.abs(np.log(t)) ** trunc.eps0


def finite_range(trunc: TruncationParams, t_max: float = 1.0) -> float:
    """Dependence range of the cutoff field: 8 * r0 * sup_t sqrt(t) |log t|^eps0.

    The sup over t in (0, t_max] is at t* = min(exp(-2*eps0), t_max).
    """
    t_star = min(math.exp(-2.0 * trunc.eps0), t_max)
    return 8.0 * trunc.r0 * math.sqrt(t_star) * abs(math.log(t_star)) ** trunc.eps0


def cov_phi(a: float, b: float, r, npts: int = 4001):
    """Covariance of the smoothed field over kernel times [a^2, b^2] at lag r.

    cov(r) = int_{a^2}^{b^2} (1/(2t)) exp(-r^2 / (2t)) dt, computed by composite
    Simpson on a log-t grid. At r=0 this is log(b/a) exactly.
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    r = np.asarray(r, dtype=float)
    u = np.linspace(math.log(a * a), math.log(b * b), npts)
    t = np.exp(u)
    f = 0.5 * np.exp(-np.multiply.outer(r * r, 1.0 / (2.0 * t)))
    out = simpson(f, x=u, axis=-1)
    return float(out) if out.ndim == 0 else out
