"""Dirichlet free field on the unit square, mollification, and the killed
heat-kernel comparison.

The field is synthesized spectrally: h = sum g_jk sqrt(2 pi / lambda_jk) e_jk
with e_jk(x) = 2 sin(j pi x1) sin(k pi x2), lambda_jk = pi^2 (j^2 + k^2) and
i.i.d. standard normals g_jk, so Cov h = 2 pi G_D and h(x) ~ -log|x-y| + O(1)
near the diagonal. Evaluation on the lattice folds modes onto the DST-I grid
(exact; sin aliasing), so the sample is the full truncated series, not a
band-limited approximation. Mollification by p_{t/2} acts diagonally on the
eigenbasis (factor e^{-lambda t / 4}), which is exactly the convolution of the
odd periodic extension with the plane Gaussian kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.integrate import simpson

from .fields import FieldSample
from .grids import GridSpec, required_padding
from .seeding import derive_seed

S_MIN = 1e-3            # below this the kernel-gap series is refused
_TAIL_EXP = 36.0        # series truncated when e^{-lambda tau / 2} < e^-36

U_BOX = (0.25, 0.25, 0.5, 0.5)   # the compact subdomain used for comparisons


@dataclass
class GffSample:
    """Spectral coefficients and lattice values of one Dirichlet field."""

    coeffs: np.ndarray      # (M, M); entry [j-1, k-1] multiplies e_jk
    grid: GridSpec
    M: int
    seed: int
    values: np.ndarray      # (m+1, m+1) nodes, exactly 0 on the boundary


def _fold_matrix(M: int, m: int) -> np.ndarray:
    """Sin-aliasing on the lattice x = i/m: mode j equals mode r = j mod 2m
    (sign +) for r < m, vanishes for r in {0, m}, and equals -(2m - r) else."""
    F = np.zeros((m - 1, M))
    for a in range(1, M + 1):
        r = a % (2 * m)
        if r == 0 or r == m:
            continue
        if r < m:
            F[r - 1, a - 1] = 1.0
        else:
            F[2 * m - r - 1, a - 1] = -1.0
    return F


def _synthesize(coeffs: np.ndarray, m: int) -> np.ndarray:
    """Lattice values of sum C_jk e_jk via folded DST-I (machine exact)."""
    M = coeffs.shape[0]
    F = _fold_matrix(M, m)
    folded = F @ coeffs @ F.T
    # scipy DST-I carries a factor 2 per axis; e_jk carries a single factor 2.
    interior = sfft.dstn(folded, type=1) / 2.0
    h = np.zeros((m + 1, m + 1))
    h[1:m, 1:m] = interior
    return h


def sample_gff(M: int, grid: GridSpec, seed: int) -> GffSample:
    """Sample the field with modes j, k <= M on the grid over [0,1]^2."""
    if grid.x0 != 0.0 or grid.y0 != 0.0 or grid.width != 1.0 or grid.height != 1.0:
        raise ValueError("the field lives on the unit square [0,1]^2")
    if M < 4 * grid.m:
        raise ValueError(f"mode cutoff M={M} must be >= 4*m={4 * grid.m}")
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, "gff")))
    j = np.arange(1, M + 1)
    lam = math.pi ** 2 * (j[:, None] ** 2 + j[None, :] ** 2)
    coeffs = rng.standard_normal((M, M)) * np.sqrt(2.0 * math.pi / lam)
    # values[iy, ix] with x1 = ix/m, x2 = iy/m; coeffs are (j, k) = (x1, x2)
    # modes, and the synthesis is symmetric in the two axes up to transpose.
    vals = _synthesize(coeffs, grid.m).T
    return GffSample(coeffs, grid, M, seed, vals)


def mollify(h: GffSample, t: float) -> FieldSample:
    """Convolve with p_{t/2}: damp mode (j,k) by e^{-lambda_jk t / 4}.

    Equals the spatial convolution of the odd periodic extension of h, which
    is the extension consistent with the sine basis. t must resolve the grid:
    t >= (2/m)^2, otherwise the damping is too weak for the lattice to carry
    the result without aliasing.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    hg = 1.0 / h.grid.m
    if t < (2.0 * hg) ** 2:
        raise ValueError(f"t={t:g} below the aliasing guard {(2 * hg) ** 2:g}")
    M = h.M
    j = np.arange(1, M + 1)
    lam = math.pi ** 2 * (j[:, None] ** 2 + j[None, :] ** 2)
    damped = h.coeffs * np.exp(-lam * t / 4.0)
    vals = _synthesize(damped, h.grid.m).T
    scale_hi = -0.5 * math.log2(t)
    return FieldSample(vals, h.grid, "gff-mollified", 0.0, scale_hi, h.seed)


def _jmax(tau: float) -> int:
    return int(math.sqrt(2.0 * _TAIL_EXP / (math.pi ** 2 * tau))) + 2


def _killed_1d(tau: float, a, b, jmax: int | None = None):
    """1-D killed kernel on [0,1]: q_tau(a,b) = sum 2 sin(j pi a) sin(j pi b)
    e^{-j^2 pi^2 tau / 2}. The square's kernel is the product of two of these."""
    if jmax is None:
        jmax = _jmax(tau)
    j = np.arange(1, jmax + 1)
    decay = np.exp(-(j * math.pi) ** 2 * tau / 2.0)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sa = np.sin(math.pi * np.multiply.outer(a, j))
    sb = np.sin(math.pi * np.multiply.outer(b, j))
    return 2.0 * np.einsum("...j,...j,j->...", sa, sb, decay)


def killed_kernel(tau: float, x, y, jmax: int | None = None):
    """Transition density at time tau of Brownian motion killed on leaving
    the unit square (eigen-series, separable across the two axes)."""
    if tau < S_MIN / 2.0:
        raise ValueError(f"series refused below tau={S_MIN / 2}")
    return (_killed_1d(tau, x[0], y[0], jmax)
            * _killed_1d(tau, x[1], y[1], jmax))


def killed_kernel_gap(t: float, s: float, x, y, nquad: int = 400) -> float:
    """|p_{t/2} * p^D_{s/2}(x, y) - p_{(t+s)/2}(x - y)| for x, y in U.

    The convolution is separable: per axis, int p^{1d}_{t/2}(x - u)
    q_{s/2}(u, y) du with the u-integral done by Simpson on [0, 1].
    """
    if s < S_MIN:
        raise ValueError(f"s={s:g} below the series floor {S_MIN:g}")
    if t <= 0:
        raise ValueError("t must be positive")
    for pt in (x, y):
        if not (U_BOX[0] <= pt[0] <= U_BOX[0] + U_BOX[2]
                and U_BOX[1] <= pt[1] <= U_BOX[1] + U_BOX[3]):
            raise ValueError("points must lie in U = [1/4, 3/4]^2")
    jmax = _jmax(s / 2.0)
    u = np.linspace(0.0, 1.0, nquad + 1)
    j = np.arange(1, jmax + 1)
    S = np.sin(math.pi * np.outer(j, u))
    decay = np.exp(-(j * math.pi) ** 2 * s / 4.0)
    v = t / 2.0

    def axis_factor(xc, yc):
        g = np.exp(-((xc - u) ** 2) / (2.0 * v)) / math.sqrt(2.0 * math.pi * v)
        A = simpson(g[None, :] * S, x=u, axis=1)
        return float(np.sum(2.0 * A * decay * np.sin(math.pi * j * yc)))

    conv = axis_factor(x[0], y[0]) * axis_factor(x[1], y[1])
    w = (t + s) / 2.0
    d2 = (x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2
    free = math.exp(-d2 / (2.0 * w)) / (2.0 * math.pi * w)
    return abs(conv - free)


@dataclass
class KilledGapReport:
    t: float
    x: tuple
    y: tuple
    s: np.ndarray
    gap: np.ndarray
    c_hat: float              # fitted decay rate of log gap against 1/s
    ok: bool                  # gaps decreasing in 1/s and c_hat > 0


def killed_gap_curve(t: float, s_list, x, y, nquad: int = 400) -> KilledGapReport:
    s = np.asarray(sorted(s_list, reverse=True), dtype=float)
    gap = np.array([killed_kernel_gap(t, si, x, y, nquad) for si in s])
    pos = gap > 0
    if pos.sum() >= 2:
        slope = np.polyfit(1.0 / s[pos], np.log(gap[pos]), 1)[0]
    else:
        slope = 0.0
    c_hat = -float(slope)
    decreasing = bool(np.all(np.diff(gap[pos]) < 0)) if pos.sum() >= 2 else False
    return KilledGapReport(t, tuple(x), tuple(y), s, gap, c_hat,
                           decreasing and c_hat > 0)


@dataclass
class GffCompareReport:
    """Normalized crossing-quantile comparison of the two field programs."""

    xi: float
    deltas: list
    quantile_levels: tuple
    rows: list                 # (delta, source, q, value, normalized)
    max_ratio: float           # max over delta, q of normalized-quantile ratio
    tail_slopes: dict          # (delta, source) -> lower-tail slope vs s^2
    replicas: int


def compare_crossing_laws(delta_list, xi: float, replicas: int, seed: int,
                          m: int = 64,
                          quantile_levels=(0.1, 0.5, 0.9)) -> GffCompareReport:
    """Left-right crossing of U under the mollified field at t = delta against
    the program field with kernel times [delta, 1], each normalized by its own
    median."""
    from .estimators import quantile, tail_curve
    from .fields import sample_phi
    from .metric import build_weights, crossing

    rows = []
    ratios = []
    slopes = {}
    for delta in delta_list:
        scale_hi = -0.5 * math.log2(delta)
        grid = GridSpec(m=m, padding=required_padding(1.0))
        grid.check_scale(scale_hi)
        L = {"gff": np.empty(replicas), "phi": np.empty(replicas)}
        for r in range(replicas):
            h = sample_gff(4 * m, grid, derive_seed(seed, "cmp-gff", delta, r))
            fg = mollify(h, delta)
            L["gff"][r] = crossing(build_weights(fg, xi), U_BOX).length
            fp = sample_phi(grid, scale_hi,
                            seed=derive_seed(seed, "cmp-phi", delta, r))
            L["phi"][r] = crossing(build_weights(fp, xi), U_BOX).length
        med = {k: quantile(v, 0.5) for k, v in L.items()}
        normed = {}
        for src in ("gff", "phi"):
            for q in quantile_levels:
                val = quantile(L[src], q)
                normed[(src, q)] = val / med[src]
                rows.append((delta, src, q, val, val / med[src]))
            if replicas >= 200:
                tc = tail_curve(L[src], med[src], "lower")
                slopes[(delta, src)] = tc.slope
            else:
                slopes[(delta, src)] = float("nan")
        for q in quantile_levels:
            a, b = normed[("gff", q)], normed[("phi", q)]
            ratios.append(max(a / b, b / a))
    return GffCompareReport(xi, list(delta_list), tuple(quantile_levels), rows,
                            float(max(ratios)), slopes, replicas)
