"""Monte-Carlo engine and statistics of crossing lengths.

Replicas are pure functions of (master_seed, scale, rect, replica index), so
every estimator is reproducible bit-for-bit. Aggregations go through
replica-indexed arrays and numpy's pairwise summation, which makes them
independent of completion order when a worker pool is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import FieldSample, resample_component, sample_phi, sample_psi
from .grids import GridSpec
from .kernels import TruncationParams
from .metric import build_weights, condition_t_ratio, crossing
from .seeding import config_digest, derive_seed

NODE_VISIT_BUDGET = 5e10   # projected settled nodes per run before refusing
MIN_REPLICAS = 16


class BudgetError(RuntimeError):
    """Raised instead of starting a run whose projected cost is absurd."""

    def __init__(self, projected: float, budget: float):
        super().__init__(
            f"projected {projected:.3g} node visits exceed the budget {budget:.3g}; "
            "reduce replicas, scales, or rectangle sizes"
        )
        self.projected = projected
        self.budget = budget


@dataclass
class SampleSet:
    """Replicate crossing lengths for one (scale, rectangle) cell."""

    tag: str
    scale: float
    rect: tuple          # (a, b) rectangle side lengths
    xi: float
    kind: str
    values: np.ndarray   # replica-indexed
    master_seed: int
    digest: str

    @property
    def replicas(self) -> int:
        return len(self.values)


def grid_for(scale_hi: float, rect=(1.0, 1.0), scale_lo: float = 0.0,
             oversample: int = 4) -> GridSpec:
    a, b = rect
    return GridSpec.for_scales(scale_hi, scale_lo=scale_lo, width=float(a),
                               height=float(b), oversample=oversample)


def _mc_one(task):
    (kind, scale, scale_lo, rect, xi, lam, seed, trunc_t, oversample,
     orientation) = task
    grid = grid_for(scale, rect, scale_lo, oversample)
    if kind == "phi":
        f = sample_phi(grid, scale, scale_lo=scale_lo, seed=seed)
    elif kind == "psi":
        trunc = TruncationParams(*trunc_t) if trunc_t else TruncationParams()
        f = sample_psi(grid, int(scale), K=0, trunc=trunc, seed=seed)
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    wg = build_weights(f, xi, lam)
    return crossing(wg, orientation=orientation).length


_MC_DEFAULTS = {
    "rects": [(1.0, 1.0)],
    "kind": "phi",
    "scale_lo": 0.0,
    "lam": 1.0,
    "oversample": 4,
    "orientation": "left-right",
    "trunc": None,
    "threads": 1,
}


def mc_crossings(config: dict, master_seed: int) -> dict:
    """Independent crossing-length replicas for every (scale, rect) pair.

    config requires xi, scales, replicas; see _MC_DEFAULTS for the rest.
    Returns {(scale, rect): SampleSet}.
    """
    cfg = dict(_MC_DEFAULTS)
    cfg.update(config)
    xi = float(cfg["xi"])
    scales = [float(s) for s in cfg["scales"]]
    replicas = int(cfg["replicas"])
    if replicas < MIN_REPLICAS:
        raise ValueError(f"replicas must be >= {MIN_REPLICAS}")
    rects = [tuple(float(v) for v in r) for r in cfg["rects"]]
    kind = cfg["kind"]
    trunc_t = None
    if cfg["trunc"] is not None:
        t = cfg["trunc"]
        trunc_t = (t.r0, t.eps0) if isinstance(t, TruncationParams) else tuple(t)

    projected = 0.0
    for s in scales:
        m = cfg["oversample"] * 2 ** math.ceil(s)
        for a, b in rects:
            projected += replicas * (a * m + 1) * (b * m + 1)
    if projected > NODE_VISIT_BUDGET:
        raise BudgetError(projected, NODE_VISIT_BUDGET)

    digest = config_digest({**{k: repr(v) for k, v in sorted(cfg.items())},
                            "master_seed": master_seed})
    out = {}
    for s in scales:
        for rect in rects:
            tasks = [
                (kind, s, cfg["scale_lo"], rect, xi, cfg["lam"],
                 derive_seed(master_seed, "mc", kind, s, rect[0], rect[1], r),
                 trunc_t, cfg["oversample"], cfg["orientation"])
                for r in range(replicas)
            ]
            values = np.array(_replica_map(_mc_one, tasks, cfg["threads"]))
            tag = f"L_{rect[0]:g},{rect[1]:g}"
            out[(s, rect)] = SampleSet(tag, s, rect, xi, kind, values,
                                       master_seed, digest)
    return out


def _replica_map(fn, tasks, threads):
    if threads and int(threads) > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(int(threads)) as pool:
            return pool.map(fn, tasks, chunksize=1)
    return [fn(t) for t in tasks]


def _values(samples):
    if isinstance(samples, SampleSet):
        return samples.values
    return np.asarray(samples, dtype=float)


def quantile(samples, p: float) -> float:
    """Order statistic at index ceil(p*N): a deterministic sample quantile."""
    v = np.sort(_values(samples))
    n = len(v)
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if n < 1.0 / min(p, 1.0 - p):
        raise ValueError(f"too few samples ({n}) for p={p}")
    k = math.ceil(p * n)
    return float(v[k - 1])


@dataclass
class QuantileTable:
    """Per-scale quantiles of the crossing length and the running ratio max.

    ell = low quantile at p, bar_ell = quantile at 1-p, lam = median,
    Lambda_n = max over k <= n of bar_ell_k / ell_k. se_* are bootstrap
    standard errors (Lambda resampled jointly across scales).
    """

    p: float
    scales: np.ndarray
    ell: np.ndarray
    bar_ell: np.ndarray
    lam: np.ndarray
    Lambda: np.ndarray
    se_ell: np.ndarray
    se_bar: np.ndarray
    se_lam: np.ndarray
    se_Lambda: np.ndarray
    replicas: np.ndarray
    bootstrap: int

    def row(self, scale: float) -> int:
        i = int(np.argmin(np.abs(self.scales - scale)))
        if abs(self.scales[i] - scale) > 1e-9:
            raise KeyError(f"scale {scale} not in table")
        return i


def quantile_table(samples_by_scale: dict, p: float = 0.1, bootstrap: int = 500,
                   seed: int = 0) -> QuantileTable:
    """Build the quantile table from {scale: SampleSet or array}."""
    if not 0.0 < p < 0.5:
        raise ValueError("p must lie in (0, 1/2)")
    scales = np.array(sorted(samples_by_scale), dtype=float)
    vals = [_values(samples_by_scale[s]) for s in sorted(samples_by_scale)]
    ell = np.array([quantile(v, p) for v in vals])
    bar = np.array([quantile(v, 1.0 - p) for v in vals])
    lam = np.array([quantile(v, 0.5) for v in vals])
    Lambda = np.maximum.accumulate(bar / ell)

    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, "qt-boot")))
    B = bootstrap
    b_ell = np.empty((B, len(vals)))
    b_bar = np.empty((B, len(vals)))
    b_lam = np.empty((B, len(vals)))
    for bidx in range(B):
        for i, v in enumerate(vals):
            rv = v[rng.integers(0, len(v), len(v))]
            b_ell[bidx, i] = quantile(rv, p)
            b_bar[bidx, i] = quantile(rv, 1.0 - p)
            b_lam[bidx, i] = quantile(rv, 0.5)
    b_Lambda = np.maximum.accumulate(b_bar / b_ell, axis=1)
    return QuantileTable(
        p, scales, ell, bar, lam, Lambda,
        b_ell.std(axis=0, ddof=1), b_bar.std(axis=0, ddof=1),
        b_lam.std(axis=0, ddof=1), b_Lambda.std(axis=0, ddof=1),
        np.array([len(v) for v in vals]), B,
    )


@dataclass
class TailCurve:
    side: str
    lambda_ref: float
    s: np.ndarray
    log_p: np.ndarray          # NaN where the bucket was empty
    hits: np.ndarray
    abscissa: np.ndarray       # s^2 (lower) or s^2/log s (upper)
    slope: float
    intercept: float
    r2: float
    flagged: list              # s values omitted for empty buckets
    n: int


def tail_curve(samples, lambda_ref: float, side: str = "lower",
               s_grid=None, min_hits: int = 1) -> TailCurve:
    """Empirical tail of L against the shape the theory predicts.

    Lower side: log P(L <= lambda_ref e^-s) against s^2. Upper side:
    log P(L >= lambda_ref e^s) against s^2/log s (decaying form), fitted over
    s > 1 only. Weighted least squares with hit counts as weights.
    """
    v = _values(samples)
    n = len(v)
    if n < 200:
        raise ValueError("tail_curve needs at least 200 samples")
    if side not in ("lower", "upper"):
        raise ValueError("side must be lower or upper")
    if lambda_ref <= 0:
        raise ValueError("lambda_ref must be positive")
    if s_grid is None:
        if side == "lower":
            smax = math.log(lambda_ref / np.min(v)) if np.min(v) < lambda_ref else 0.0
            smax = max(smax * 0.98, 0.3)
            s_grid = np.linspace(0.05, smax, 14)
        else:
            smax = math.log(np.max(v) / lambda_ref) if np.max(v) > lambda_ref else 0.0
            smax = max(smax * 0.98, 1.6)
            s_grid = np.linspace(1.05, smax, 12)
    s = np.asarray(s_grid, dtype=float)
    if np.any(s <= 0):
        raise ValueError("s grid must be positive")
    if side == "lower":
        hits = np.array([(v <= lambda_ref * math.exp(-si)).sum() for si in s])
        absc = s * s
    else:
        hits = np.array([(v >= lambda_ref * math.exp(si)).sum() for si in s])
        absc = np.where(s > 1.0, s * s / np.log(np.maximum(s, 1.0 + 1e-12)), np.nan)
    log_p = np.where(hits > 0, np.log(np.maximum(hits, 1) / n), np.nan)
    flagged = [float(si) for si, h in zip(s, hits) if h == 0]

    use = (hits >= max(1, min_hits)) & np.isfinite(absc)
    slope = intercept = r2 = float("nan")
    if use.sum() >= 2:
        x, y, w = absc[use], log_p[use], hits[use].astype(float)
        W = np.diag(w)
        A = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(np.sqrt(W) @ A, np.sqrt(w) * y, rcond=None)
        intercept, slope = float(coef[0]), float(coef[1])
        yhat = A @ coef
        ss_res = float(np.sum(w * (y - yhat) ** 2))
        ss_tot = float(np.sum(w * (y - np.average(y, weights=w)) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return TailCurve(side, float(lambda_ref), s, log_p, hits, absc,
                     slope, intercept, r2, flagged, n)


@dataclass
class VarLogReport:
    variance: float
    se: float
    bound: float | None
    ok: bool | None
    n: int


def var_log_crossing(samples, xi: float | None = None,
                     n: int | None = None) -> VarLogReport:
    """Unbiased variance of log L against the a priori bound xi^2 (n+1) log 2."""
    v = _values(samples)
    N = len(v)
    if N < 100:
        raise ValueError("need at least 100 samples")
    x = np.log(v)
    var = float(np.var(x, ddof=1))
    c = x - x.mean()
    m2 = float(np.mean(c ** 2))
    m4 = float(np.mean(c ** 4))
    se = math.sqrt(max(m4 - (N - 3) / (N - 1) * m2 * m2, 0.0) / N)
    bound = ok = None
    if xi is not None and n is not None:
        bound = xi * xi * (n + 1) * math.log(2.0)
        ok = var <= bound + 3.0 * se
    return VarLogReport(var, se, bound, ok, N)


@dataclass
class QuantileShiftReport:
    eps: float
    sigma2: float
    factor: float              # e^{sqrt(2 sigma^2 log 1/eps)}
    ell_shifted: float         # low quantile of L(Phi+Psi) at eps
    ell_base: float            # low quantile of L(Phi) at 2 eps
    bar_shifted: float         # high quantile of L(Phi+Psi) at 2 eps
    bar_base: float            # high quantile of L(Phi) at eps
    margin1: float             # log slack of inequality 1 (>= -3 se expected)
    margin2: float
    se1: float
    se2: float
    ok1: bool
    ok2: bool


def quantile_shift_check(samples, sigma2: float, eps: float, seed: int = 0,
                         bootstrap: int = 500) -> QuantileShiftReport:
    """Shift the exponent by an independent spatially constant Gaussian.

    A constant field shift Psi multiplies every crossing length by e^Psi (the
    geodesic is unchanged), which is the worst case allowed for a field with
    pointwise variance sigma^2. Checks
        ell(Phi+Psi, eps)      <= factor * ell(Phi, 2 eps)
        bar_ell(Phi+Psi, 2eps) <= factor * bar_ell(Phi, eps)
    with factor = e^{sqrt(2 sigma^2 log(1/eps))}, at 3 bootstrap SE slack.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    v = _values(samples)
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, "qshift")))
    psi = rng.standard_normal(len(v)) * math.sqrt(sigma2)
    shifted = v * np.exp(psi)
    factor = math.exp(math.sqrt(2.0 * sigma2 * math.log(1.0 / eps)))

    def stats(idx):
        b = v[idx]
        sh = shifted[idx]
        return (quantile(sh, eps), quantile(b, 2 * eps),
                quantile(sh, 1 - 2 * eps), quantile(b, 1 - eps))

    full = stats(np.arange(len(v)))
    m1 = math.log(full[0]) - math.log(full[1]) - math.log(factor)
    m2 = math.log(full[2]) - math.log(full[3]) - math.log(factor)
    boots = np.empty((bootstrap, 2))
    for bidx in range(bootstrap):
        idx = rng.integers(0, len(v), len(v))
        st = stats(idx)
        boots[bidx, 0] = math.log(st[0]) - math.log(st[1])
        boots[bidx, 1] = math.log(st[2]) - math.log(st[3])
    se1, se2 = boots.std(axis=0, ddof=1)
    return QuantileShiftReport(
        eps, sigma2, factor, full[0], full[1], full[2], full[3],
        m1, m2, float(se1), float(se2),
        m1 <= 3.0 * se1, m2 <= 3.0 * se2,
    )


@dataclass
class RswReport:
    """Hard/easy quantile ratios r_n = ell_hard(p/4) / ell_easy(p) per scale."""

    p: float
    scales: np.ndarray
    ratio_low: np.ndarray
    ratio_high: np.ndarray     # bar version at matching levels
    se_low: np.ndarray
    max_ratio: float
    max_over_min: float
    trend_slope: float


def rsw_compare(samples_easy: dict, samples_hard: dict, p: float = 0.1,
                bootstrap: int = 500, seed: int = 0) -> RswReport:
    """Compare low quantiles of the hard crossing against the easy one."""
    scales = sorted(samples_easy)
    if sorted(samples_hard) != scales:
        raise ValueError("easy and hard tables need the same scale grid")
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, "rsw")))
    r_low, r_high, se_low = [], [], []
    for s in scales:
        ve, vh = _values(samples_easy[s]), _values(samples_hard[s])
        r_low.append(quantile(vh, p / 4) / quantile(ve, p))
        r_high.append(quantile(vh, 1 - p / 4) / quantile(ve, 1 - p))
        b = np.empty(bootstrap)
        for i in range(bootstrap):
            b[i] = (quantile(vh[rng.integers(0, len(vh), len(vh))], p / 4)
                    / quantile(ve[rng.integers(0, len(ve), len(ve))], p))
        se_low.append(b.std(ddof=1))
    r_low = np.array(r_low)
    x = np.array(scales, dtype=float)
    slope = float(np.polyfit(x, r_low, 1)[0]) if len(x) > 1 else 0.0
    return RswReport(p, x, r_low, np.array(r_high), np.array(se_low),
                     float(r_low.max()), float(r_low.max() / r_low.min()), slope)


@dataclass
class FkgReport:
    thresholds: tuple
    p_joint: float
    p_product: float
    se_diff: float
    ok: bool                   # joint >= product - 3 se
    replicas: int


def mc_paired(n: int, rects, xi: float, replicas: int, master_seed: int,
              kind: str = "psi", trunc: TruncationParams | None = None,
              oversample: int = 4, scale_lo: float = 0.0):
    """Crossing lengths of two rectangles under one shared field per replica.

    rects are absolute rectangles (x0, y0, w, h); the field is sampled once on
    their bounding box.
    """
    (ax, ay, aw, ah), (bx, by, bw, bh) = rects
    x0, y0 = min(ax, bx), min(ay, by)
    x1, y1 = max(ax + aw, bx + bw), max(ay + ah, by + bh)
    m = oversample * 2 ** math.ceil(n)
    grid = GridSpec(m=m, x0=x0, y0=y0, width=x1 - x0, height=y1 - y0,
                    padding=GridSpec.for_scales(n, scale_lo=scale_lo).padding)
    if replicas < MIN_REPLICAS:
        raise ValueError(f"replicas must be >= {MIN_REPLICAS}")
    L1 = np.empty(replicas)
    L2 = np.empty(replicas)
    for r in range(replicas):
        seed = derive_seed(master_seed, "paired", r)
        if kind == "psi":
            f = sample_psi(grid, int(n), K=0, trunc=trunc, seed=seed)
        else:
            f = sample_phi(grid, float(n), scale_lo=scale_lo, seed=seed)
        wg = build_weights(f, xi)
        L1[r] = crossing(wg, rects[0]).length
        L2[r] = crossing(wg, rects[1]).length
    return L1, L2


def fkg_check(L1, L2, thresholds=None, bootstrap: int = 500,
              seed: int = 0) -> FkgReport:
    """Positive association of two crossing lengths from a shared field:
    P(L1 > x1, L2 > x2) >= P(L1 > x1) P(L2 > x2) within 3 bootstrap SE."""
    L1, L2 = _values(L1), _values(L2)
    if len(L1) != len(L2):
        raise ValueError("paired samples must have equal length")
    if thresholds is None:
        thresholds = (quantile(L1, 0.5), quantile(L2, 0.5))
    x1, x2 = thresholds
    a = L1 > x1
    b = L2 > x2
    p_joint = float(np.mean(a & b))
    p_prod = float(np.mean(a) * np.mean(b))
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, "fkg")))
    boots = np.empty(bootstrap)
    n = len(L1)
    for i in range(bootstrap):
        idx = rng.integers(0, n, n)
        ai, bi = a[idx], b[idx]
        boots[i] = np.mean(ai & bi) - np.mean(ai) * np.mean(bi)
    se = float(boots.std(ddof=1))
    return FkgReport((float(x1), float(x2)), p_joint, p_prod, se,
                     p_joint >= p_prod - 3.0 * se, n)


@dataclass
class EfronSteinReport:
    n: int
    K: int
    xi: float
    var_log: float
    coarse_term: float
    block_sum_term: float
    se_slack: float
    ok: bool
    replicas: int
    blocks_considered: int
    mean_visited: float


def efron_stein_decompose(n: int, K: int, xi: float, replicas: int,
                          master_seed: int,
                          resamples_per_replica: int = 1,
                          subsample: float = 1.0,
                          trunc: TruncationParams | None = None,
                          oversample: int = 4,
                          bootstrap: int = 500) -> EfronSteinReport:
    """Monte-Carlo check of the variance decomposition of log L.

    Per replica: sample a ledgered field, then redraw (a) the coarse part and
    (b) each candidate block's fine noise, accumulating E[(log L' - log L)_+^2].
    Candidate blocks are those whose closed square lies within the cutoff
    kernel's dependence radius of the domain; blocks farther out cannot change
    the field on the domain at all. Unvisited candidates may be subsampled at
    rate `subsample` with Horvitz-Thompson reweighting (visited blocks are
    always evaluated).
    """
    if not 0 < K < n:
        raise ValueError("need 0 < K < n")
    if not 0.0 < subsample <= 1.0:
        raise ValueError("subsample must lie in (0, 1]")
    if trunc is None:
        trunc = TruncationParams()
    grid = grid_for(n, oversample=oversample)
    logL = np.empty(replicas)
    coarse_terms = np.empty(replicas)
    block_terms = np.empty(replicas)
    visited_counts = np.empty(replicas)
    n_candidates = 0
    for r in range(replicas):
        seed = derive_seed(master_seed, "es", r)
        f = sample_psi(grid, n, K=K, trunc=trunc, seed=seed, keep_ledger=True)
        wg = build_weights(f, xi)
        cr = crossing(wg)
        base = math.log(cr.length)
        logL[r] = base
        visited = cr.visited_blocks(K)
        visited_counts[r] = len(visited)

        acc = 0.0
        for t in range(resamples_per_replica):
            f2 = resample_component(f, "coarse",
                                    seed=derive_seed(master_seed, "es-rc", r, t))
            L2 = crossing(build_weights(f2, xi)).length
            acc += max(math.log(L2) - base, 0.0) ** 2
        coarse_terms[r] = acc / resamples_per_replica

        R = f.ledger.dependence_radius(trunc)
        nb = 1 << K
        lo = math.floor(-R * nb)
        hi = nb + math.ceil(R * nb)
        candidates = [(bi, bj) for bi in range(lo, hi) for bj in range(lo, hi)]
        n_candidates = len(candidates)
        sub_rng = np.random.default_rng(np.random.SeedSequence(
            derive_seed(master_seed, "es-sub", r)))
        total = 0.0
        for blk in candidates:
            if blk in visited:
                weight = 1.0
            elif subsample >= 1.0:
                weight = 1.0
            elif sub_rng.uniform() < subsample:
                weight = 1.0 / subsample
            else:
                continue
            acc = 0.0
            for t in range(resamples_per_replica):
                f2 = resample_component(
                    f, blk, seed=derive_seed(master_seed, "es-rb", r, blk[0], blk[1], t))
                L2 = crossing(build_weights(f2, xi)).length
                acc += max(math.log(L2) - base, 0.0) ** 2
            total += weight * acc / resamples_per_replica
        block_terms[r] = total

    var_log = float(np.var(logL, ddof=1))
    coarse = float(np.mean(coarse_terms))
    blocks = float(np.mean(block_terms))
    rng = np.random.default_rng(np.random.SeedSequence(
        derive_seed(master_seed, "es-boot")))
    boots = np.empty(bootstrap)
    for i in range(bootstrap):
        idx = rng.integers(0, replicas, replicas)
        boots[i] = (np.mean(coarse_terms[idx]) + np.mean(block_terms[idx])
                    - np.var(logL[idx], ddof=1))
    se = float(boots.std(ddof=1))
    slack = coarse + blocks - var_log
    return EfronSteinReport(n, K, xi, var_log, coarse, blocks, se,
                            slack >= -3.0 * se, replicas, n_candidates,
                            float(np.mean(visited_counts)))


@dataclass
class CondTReport:
    alpha: float
    K_list: list
    norms: np.ndarray          # E[ratio^alpha]^{1/alpha} per K
    se_log_norm: np.ndarray
    c_hat: float               # fitted decay rate of log norm in K
    ci99: tuple
    ok: bool                   # ci99 low > 0
    replicas: list


def condition_t_norm(K_list, n_for, xi: float, replicas, master_seed: int,
                     alpha: float = 1.25,
                     trunc: TruncationParams | None = None,
                     oversample: int = 4, reverse_order: bool = False,
                     bootstrap: int = 500) -> CondTReport:
    """Decay in K of the alpha-norm of the geodesic block-concentration ratio.

    n_for maps K to the fine scale n (an int offset applied to K, a callable,
    or an explicit list). Fits log norm_K against K by least squares weighted
    with bootstrap SEs; c_hat = -slope.
    """
    if not 1.0 < alpha <= 2.0:
        raise ValueError("alpha must lie in (1, 2]")
    K_list = list(K_list)
    if callable(n_for):
        n_list = [n_for(K) for K in K_list]
    elif isinstance(n_for, int):
        n_list = [K + n_for for K in K_list]
    else:
        n_list = list(n_for)
    if isinstance(replicas, int):
        replicas = [replicas] * len(K_list)
    if trunc is None:
        trunc = TruncationParams()
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(master_seed, "ct-boot")))
    norms, se_log = [], []
    for K, n, reps in zip(K_list, n_list, replicas):
        grid = grid_for(n, oversample=oversample)
        ratios = np.empty(reps)
        for r in range(reps):
            seed = derive_seed(master_seed, "ct", K, r)
            f = sample_psi(grid, n, K=K, trunc=trunc, seed=seed)
            wg = build_weights(f, xi)
            cr = crossing(wg, reverse_order=reverse_order)
            coarse = FieldSample(f.coarse_values, grid, "psi-coarse", 0.0,
                                 float(K), seed)
            ratios[r] = condition_t_ratio(cr, coarse, xi, K)
        norm = float(np.mean(ratios ** alpha) ** (1.0 / alpha))
        norms.append(norm)
        b = np.empty(bootstrap)
        for i in range(bootstrap):
            rv = ratios[rng.integers(0, reps, reps)]
            b[i] = math.log(np.mean(rv ** alpha) ** (1.0 / alpha))
        se_log.append(b.std(ddof=1))
    norms = np.array(norms)
    se_log = np.maximum(np.array(se_log), 1e-12)
    x = np.array(K_list, dtype=float)
    y = np.log(norms)
    w = 1.0 / se_log ** 2
    A = np.column_stack([np.ones_like(x), x])
    Aw = A * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(Aw, y * np.sqrt(w), rcond=None)
    cov = np.linalg.inv(Aw.T @ Aw)
    slope = float(coef[1])
    se_slope = math.sqrt(cov[1, 1])
    c_hat = -slope
    ci = (c_hat - 2.576 * se_slope, c_hat + 2.576 * se_slope)
    return CondTReport(alpha, K_list, norms, se_log, c_hat, ci, ci[0] > 0.0,
                       list(replicas))


@dataclass
class ExponentFit:
    slope: float               # of -log2 lambda_n against n
    intercept: float
    scales: np.ndarray
    residuals: np.ndarray
    band_constant: float       # max |residual| / sqrt(n)
    se_slope: float
    target: float | None       # 1 - xi Q when gamma, d_gamma are supplied
    discrepancy: float | None


def exponent_fit(qt: QuantileTable, gamma: float | None = None,
                 d_gamma: float | None = None) -> ExponentFit:
    if len(qt.scales) < 4:
        raise ValueError("need at least 4 scales")
    x = qt.scales.astype(float)
    y = -np.log2(qt.lam)
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    dof = max(len(x) - 2, 1)
    sigma2 = float(res @ res) / dof
    cov = sigma2 * np.linalg.inv(A.T @ A)
    pos = x > 0
    band = float(np.max(np.abs(res[pos]) / np.sqrt(x[pos]))) if pos.any() else 0.0
    target = disc = None
    if gamma is not None:
        if d_gamma is None:
            raise ValueError("d_gamma must be supplied with gamma")
        xi = gamma / d_gamma
        Q = 2.0 / gamma + gamma / 2.0
        target = 1.0 - xi * Q
        disc = float(coef[1]) - target
    return ExponentFit(float(coef[1]), float(coef[0]), x, res, band,
                       math.sqrt(cov[1, 1]), target, disc)


@dataclass
class WeakMultReport:
    pairs: list                # (n, k, deviation)
    max_deviation: float
    fractional: list           # (n, r, |log lam_{n+r} - log lam_n|)
    max_fractional: float | None


def weak_mult_check(qt: QuantileTable, frac_qt: QuantileTable | None = None) -> WeakMultReport:
    """Deviations |log lam_{n+k} - log lam_n - log lam_k| / sqrt(k), plus the
    fractional-scale increments |log lam_{n+r} - log lam_n| when a fractional
    table is supplied."""
    scales = [float(s) for s in qt.scales]
    idx = {round(s, 9): i for i, s in enumerate(scales)}
    pairs = []
    for n_s in scales:
        for k_s in scales:
            if k_s < 1.0 - 1e-9:
                continue
            tot = round(n_s + k_s, 9)
            if tot in idx:
                d = abs(math.log(qt.lam[idx[round(n_s, 9)]])
                        + math.log(qt.lam[idx[round(k_s, 9)]])
                        - math.log(qt.lam[idx[tot]])) / math.sqrt(k_s)
                pairs.append((n_s, k_s, d))
    if not pairs:
        raise ValueError("scale grid is not closed under any tested sum")
    frac = []
    if frac_qt is not None:
        fidx = {round(float(s), 9): i for i, s in enumerate(frac_qt.scales)}
        for n_s in scales:
            for rr in (0.25, 0.5, 0.75):
                tot = round(n_s + rr, 9)
                if tot in fidx:
                    d = abs(math.log(frac_qt.lam[fidx[tot]])
                            - math.log(qt.lam[idx[round(n_s, 9)]]))
                    frac.append((n_s, rr, d))
    return WeakMultReport(pairs, max(d for *_, d in pairs), frac,
                          (max(d for *_, d in frac) if frac else None))
