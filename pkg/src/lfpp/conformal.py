"""Deterministic quadrature checks of approximate conformal invariance.

The three variance surrogates compare the smoothing kernel with its pushforward
under a conformal map F with |F'| >= 1 on a box U. Everything here is pure
quadrature: midpoint rule on a global y-lattice of step t/q restricted to the
kernels' support (radius R*t), trapezoid in log t, with a mesh-halving error
estimate and Richardson extrapolation. Gaussian profile p(z) = e^{-|z|^2/2}
throughout; bounds hold up to constants, so the profile normalization drops out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimators import mc_crossings, quantile
from .fields import sample_phi
from .grids import GridSpec
from .kernels import cov_phi
from .seeding import derive_seed


class QuadratureError(RuntimeError):
    """Mesh refinement did not settle to the requested precision."""


@dataclass(frozen=True)
class MapSpec:
    """A conformal map with analytically known derivative bounds on its box U.

    U = (x0, y0, width, height); min_re_dF > 0 makes |F(x)-F(y)| >= min_re_dF
    * |x-y| on the convex U, which the third-term constant uses.
    """

    name: str
    U: tuple
    F: Callable
    dF: Callable
    sup_dF: float
    inf_dF: float
    min_re_dF: float
    sup_d2F: float

    def __post_init__(self):
        if self.inf_dF < 1.0 - 1e-12:
            raise ValueError("need |F'| >= 1 on U")

    @property
    def eps_regularity(self) -> float:
        """Scale below which the map is affine to first order: 1 / ||F''||_U."""
        return math.inf if self.sup_d2F == 0 else 1.0 / self.sup_d2F


_BOX = (1.0, -0.5, 1.0, 1.0)   # right-half box, away from critical points


def builtin_map(name: str, **params) -> MapSpec:
    """Built-in families: affine(s, tr), quadratic(c): z + c z^2, square: z^2.

    All live on U = (1, 2) x (-1/2, 1/2) where their derivatives are bounded
    and bounded away from 0.
    """
    if name == "affine":
        s = float(params.pop("s", 1.5))
        tr = complex(params.pop("tr", 0.3 + 0.2j))
        if params:
            raise ValueError(f"unknown parameters {sorted(params)}")
        if s < 1.0:
            raise ValueError("affine scale must be >= 1 so that |F'| >= 1")
        return MapSpec("affine", _BOX,
                       lambda z, s=s, tr=tr: s * z + tr,
                       lambda z, s=s: np.full_like(np.asarray(z, complex), s),
                       s, s, s, 0.0)
    if name == "quadratic":
        c = float(params.pop("c", 0.2))
        if params:
            raise ValueError(f"unknown parameters {sorted(params)}")
        if not 0.0 < c < 0.25:
            raise ValueError("quadratic coefficient must lie in (0, 1/4)")
        # F' = 1 + 2cz on (1,2)x(-1/2,1/2): Re F' = 1 + 2c x >= 1 + 2c,
        # |F'| max at the corner z = 2 + i/2.
        sup = abs(1.0 + 2.0 * c * (2.0 + 0.5j))
        return MapSpec("quadratic", _BOX,
                       lambda z, c=c: z + c * z * z,
                       lambda z, c=c: 1.0 + 2.0 * c * np.asarray(z, complex),
                       sup, 1.0 + 2.0 * c, 1.0 + 2.0 * c, 2.0 * c)
    if name == "square":
        if params:
            raise ValueError(f"unknown parameters {sorted(params)}")
        sup = 2.0 * abs(2.0 + 0.5j)
        return MapSpec("square", _BOX,
                       lambda z: z * z,
                       lambda z: 2.0 * np.asarray(z, complex),
                       sup, 2.0, 2.0, 2.0)
    raise ValueError(f"unknown map {name!r}")


def _p(z):
    return np.exp(-0.5 * (z.real * z.real + z.imag * z.imag))


def _index_box(center: complex, radius: float, step: float):
    i0 = math.floor((center.real - radius) / step)
    i1 = math.ceil((center.real + radius) / step)
    j0 = math.floor((center.imag - radius) / step)
    j1 = math.ceil((center.imag + radius) / step)
    return (i0, i1, j0, j1)


def _intersect(a, b):
    box = (max(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), min(a[3], b[3]))
    if box[0] >= box[1] or box[2] >= box[3]:
        return None
    return box


def _box_sum(box, step, U, region, integrand):
    """Sum of integrand over midpoints of an index box, masked to U or U^c."""
    i0, i1, j0, j1 = box
    xs = (np.arange(i0, i1) + 0.5) * step
    ys = (np.arange(j0, j1) + 0.5) * step
    y = xs[None, :] + 1j * ys[:, None]
    ux0, uy0, uw, uh = U
    in_u = ((y.real >= ux0) & (y.real <= ux0 + uw)
            & (y.imag >= uy0) & (y.imag <= uy0 + uh))
    mask = in_u if region == "U" else ~in_u
    if not mask.any():
        return 0.0
    vals = integrand(y[mask])
    return float(np.sum(vals))


def _two_disk_integral(centers, t, q, radius_factor, U, region, integrand):
    """Midpoint-rule integral over the union of two kernel-support boxes.

    Boxes live on one global lattice of step t/q, so the overlap is an exact
    index rectangle and inclusion-exclusion introduces no double counting.
    """
    step = t / q
    b1 = _index_box(centers[0], radius_factor * t, step)
    b2 = _index_box(centers[1], radius_factor * t, step)
    total = _box_sum(b1, step, U, region, integrand)
    if b2 != b1:
        total += _box_sum(b2, step, U, region, integrand)
        inter = _intersect(b1, b2)
        if inter is not None:
            total -= _box_sum(inter, step, U, region, integrand)
    return total * step * step


def _gap_value(F: MapSpec, x, xp, region, nt, q, t_min, radius_factor):
    """One mesh's value of int dt/t^3 int_region B(y)^2 dy."""
    x = complex(x[0], x[1]) if not isinstance(x, complex) else x
    xp = complex(xp[0], xp[1]) if not isinstance(xp, complex) else xp
    Fx, Fxp = F.F(x), F.F(xp)
    us = np.linspace(math.log(t_min), 0.0, nt)
    g = np.empty(nt)
    for i, u in enumerate(us):
        t = math.exp(u)

        if region == "U":
            def B2(y, t=t):
                Fy = F.F(y)
                dFy = F.dF(y)
                b = (_p((x - y) / t) - _p((Fx - Fy) / (t * dFy))
                     - _p((xp - y) / t) + _p((Fxp - Fy) / (t * dFy)))
                return b * b
        else:
            def B2(y, t=t):
                b = _p((x - y) / t) - _p((xp - y) / t)
                return b * b

        val = _two_disk_integral((x, xp), t, q, radius_factor, F.U, region, B2)
        g[i] = val / t ** 3 * t    # * t: du-measure, dt = t du
    return float(np.trapezoid(g, us))


def _richardson(coarse: float, fine: float, tol: float, what: str,
                floor: float = 1e-14) -> float:
    """Extrapolate two O(h^2) values; error-check to the stated tolerance."""
    ext = fine + (fine - coarse) / 3.0
    err = abs(fine - coarse) / 3.0
    if err > tol * max(abs(ext), floor):
        raise QuadratureError(
            f"{what}: mesh halving changed the value by {err:.3g} "
            f"(value {ext:.6g}, tolerance {tol:g} relative); refine nt/q"
        )
    return ext


def kernel_gap_integral(F: MapSpec, x, xp, nt: int = 96, q: int = 12,
                        t_min: float = 2.0 ** -12, tol: float = 1e-3,
                        radius_factor: float = 6.5, verify: bool = True) -> float:
    """Squared pushforward kernel-gap integral over U for a point pair.

    Vanishes identically for affine maps (the kernel arguments coincide).
    With verify (default), the mesh is halved once and the Richardson
    extrapolation is returned, certified to `tol` relative error.
    """
    _check_points(F, x, xp)
    v1 = _gap_value(F, x, xp, "U", nt, q, t_min, radius_factor)
    if not verify:
        return v1
    v2 = _gap_value(F, x, xp, "U", 2 * nt, 2 * q, t_min, radius_factor)
    return _richardson(v1, v2, tol, "kernel_gap_integral")


def boundary_term_integral(F: MapSpec, x, xp, nt: int = 96, q: int = 12,
                           t_min: float = 2.0 ** -12, tol: float = 1e-3,
                           radius_factor: float = 6.5, verify: bool = True) -> float:
    """Same measure restricted to U^c with the two-kernel difference.

    Decays with the distance of x, x' to the boundary of U.
    """
    _check_points(F, x, xp)
    v1 = _gap_value(F, x, xp, "Uc", nt, q, t_min, radius_factor)
    if not verify:
        return v1
    v2 = _gap_value(F, x, xp, "Uc", 2 * nt, 2 * q, t_min, radius_factor)
    return _richardson(v1, v2, tol, "boundary_term_integral")


def _check_points(F: MapSpec, x, xp):
    ux0, uy0, uw, uh = F.U
    for pt in (x, xp):
        px, py = (pt.real, pt.imag) if isinstance(pt, complex) else pt
        if not (ux0 < px < ux0 + uw and uy0 < py < uy0 + uh):
            raise ValueError("points must lie strictly inside U")


def third_term_variance(F: MapSpec, x, delta: float, nt: int = 64, q: int = 8,
                        radius_factor: float = 6.5) -> float:
    """Variance surrogate of the cutoff-mismatch band t in [c delta^2, delta^2].

    c = inf|F'|^-2; the integrand is t^-1 e^{-|x-y|^2/(C t)} with C =
    2 (sup|F'| / min Re F')^2, integrated dy dt/t. Exactly 0 when |F'| = 1
    (empty band) and independent of delta by scale invariance of dt/t.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    c = F.inf_dF ** -2
    if c >= 1.0:
        return 0.0
    x = complex(x[0], x[1]) if not isinstance(x, complex) else x
    C = 2.0 * (F.sup_dF / F.min_re_dF) ** 2
    t_lo, t_hi = c * delta * delta, delta * delta
    us = np.linspace(math.log(t_lo), math.log(t_hi), nt)
    g = np.empty(nt)
    for i, u in enumerate(us):
        t = math.exp(u)
        w = math.sqrt(C * t)
        step = w / q
        box = _index_box(x, radius_factor * w, step)
        i0, i1, j0, j1 = box
        xs = (np.arange(i0, i1) + 0.5) * step
        ys = (np.arange(j0, j1) + 0.5) * step
        y = xs[None, :] + 1j * ys[:, None]
        r2 = (y.real - x.real) ** 2 + (y.imag - x.imag) ** 2
        inner = float(np.sum(np.exp(-r2 / (C * t)))) * step * step / t
        g[i] = inner        # the outer measure dt/t makes this du-integrand
    return float(np.trapezoid(g, us))


@dataclass
class ScalingReport:
    r: float
    a: float
    b: float
    lags: np.ndarray
    cov_small: np.ndarray      # Cov of phi_{a,b}(r .) at the lags
    cov_unit: np.ndarray       # Cov of phi_{a/r,b/r}(.) at the lags
    se_small: np.ndarray
    se_unit: np.ndarray
    oracle: np.ndarray         # cov_phi(a/r, b/r, lag)
    max_z: float               # max |cov_small - cov_unit| / joint SE
    ok: bool


def coupled_scaling_check(r: float, a: float, b: float, m: int, seed: int,
                          replicas: int, lags=None) -> ScalingReport:
    """Scaling property check: phi_{a,b}(r .) has the law of phi_{a/r,b/r}(.).

    Samples both sides on matched lattices over [0,1]^2 and compares empirical
    covariances at common lags (position-averaged, SE over replicas) within
    3 joint SE, next to the exact quadrature covariance.
    """
    if not (0 < a < b <= 1.0):
        raise ValueError("need 0 < a < b <= 1")
    k = math.log2(r)
    if abs(k - round(k)) > 1e-9 or r < 1.0:
        raise ValueError("r must be a dyadic ratio >= 1")
    s_hi = -math.log2(a)
    s_lo = -math.log2(b)
    if m % int(r) != 0:
        raise ValueError("m must be divisible by r")
    m_small = m // int(r)
    grid_small = GridSpec.for_scales(max(s_hi, 0.001), scale_lo=s_lo,
                                     width=float(r), height=float(r))
    grid_small = GridSpec(m=m_small, width=float(r), height=float(r),
                          padding=grid_small.padding)
    grid_small.check_scale(s_hi)
    grid_unit = GridSpec(m=m, padding=GridSpec.for_scales(
        s_hi + k, scale_lo=s_lo + k).padding)
    grid_unit.check_scale(s_hi + k)
    if lags is None:
        lags = [1, 2, 4, 8, 16]
    lags = [int(l) for l in lags if l < m // 2]

    def cov_curve(values, lag_nodes):
        out = []
        for l in lag_nodes:
            out.append(float(np.mean(values[:, :-l] * values[:, l:])))
        return out

    cs = np.empty((replicas, len(lags)))
    cu = np.empty((replicas, len(lags)))
    for rep in range(replicas):
        f1 = sample_phi(grid_small, s_hi, scale_lo=s_lo,
                        seed=derive_seed(seed, "scale-s", rep))
        f2 = sample_phi(grid_unit, s_hi + k, scale_lo=s_lo + k,
                        seed=derive_seed(seed, "scale-u", rep))
        cs[rep] = cov_curve(f1.values, lags)
        cu[rep] = cov_curve(f2.values, lags)
    mean_s, mean_u = cs.mean(axis=0), cu.mean(axis=0)
    se_s = cs.std(axis=0, ddof=1) / math.sqrt(replicas)
    se_u = cu.std(axis=0, ddof=1) / math.sqrt(replicas)
    # node lag l on the small grid is distance l/m_small * r ... both lattices
    # place node i at i/m of the (rescaled) unit square, so lags match 1:1.
    oracle = np.array([cov_phi(a / r, b / r, l / m) for l in lags])
    joint = np.sqrt(se_s ** 2 + se_u ** 2)
    z = np.abs(mean_s - mean_u) / np.maximum(joint, 1e-300)
    return ScalingReport(r, a, b, np.array(lags, float) / m, mean_s, mean_u,
                         se_s, se_u, oracle, float(z.max()), bool(z.max() <= 3.0))


@dataclass
class CrossingScalingReport:
    m_shift: int
    n: int
    rect: tuple
    median_small: float        # median of L over rect under phi_{m, n}
    median_big: float          # 2^-m * median of L over 2^m rect under phi_{0, n-m}
    se_small: float
    se_big: float
    z: float
    ok: bool


def crossing_scaling_check(m_shift: int, n: int, rect=(3.0, 1.0),
                           replicas: int = 200, seed: int = 0,
                           oversample: int = 4) -> CrossingScalingReport:
    """Median comparison of the crossing-length scaling identity
    L_rect^{(m,n)} = 2^-m L_{2^m rect}^{(0, n-m)} in law."""
    if not 0 < m_shift < n:
        raise ValueError("need 0 < m_shift < n")
    cfg_small = {"xi": 1.0, "scales": [float(n)], "scale_lo": float(m_shift),
                 "rects": [tuple(rect)], "replicas": replicas,
                 "oversample": oversample}
    big_rect = (rect[0] * 2 ** m_shift, rect[1] * 2 ** m_shift)
    cfg_big = {"xi": 1.0, "scales": [float(n - m_shift)], "rects": [big_rect],
               "replicas": replicas, "oversample": oversample}
    small = next(iter(mc_crossings(cfg_small, derive_seed(seed, "cross-s")).values()))
    big = next(iter(mc_crossings(cfg_big, derive_seed(seed, "cross-b")).values()))
    med_s = quantile(small.values, 0.5)
    med_b = quantile(big.values, 0.5) * 2.0 ** -m_shift

    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, "cross-boot")))
    bs = np.empty((500, 2))
    for i in range(500):
        vs = small.values[rng.integers(0, replicas, replicas)]
        vb = big.values[rng.integers(0, replicas, replicas)]
        bs[i, 0] = quantile(vs, 0.5)
        bs[i, 1] = quantile(vb, 0.5) * 2.0 ** -m_shift
    se_s, se_b = bs.std(axis=0, ddof=1)
    z = abs(med_s - med_b) / max(math.hypot(se_s, se_b), 1e-300)
    return CrossingScalingReport(m_shift, n, tuple(rect), med_s, med_b,
                                 float(se_s), float(se_b), float(z), z <= 3.0)
