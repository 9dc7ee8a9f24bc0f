import math

import numpy as np
import pytest

from lfpp.estimators import (
    MIN_REPLICAS,
    BudgetError,
    QuantileTable,
    condition_t_norm,
    efron_stein_decompose,
    exponent_fit,
    fkg_check,
    mc_crossings,
    mc_paired,
    quantile,
    quantile_shift_check,
    quantile_table,
    rsw_compare,
    tail_curve,
    var_log_crossing,
    weak_mult_check,
)


def _qt_from_lambdas(scales, lams, p=0.1):
    scales = np.asarray(scales, dtype=float)
    lams = np.asarray(lams, dtype=float)
    z = np.zeros_like(lams)
    return QuantileTable(p, scales, lams.copy(), lams.copy(), lams,
                         np.ones_like(lams), z, z, z, z,
                         np.zeros(len(lams), dtype=int), 0)


# ------------------------------------------------------------- quantile rule

def test_quantile_order_statistic():
    v = np.arange(1.0, 11.0)           # 1..10
    assert quantile(v, 0.3) == 3.0     # ceil(3.0) -> 3rd smallest
    assert quantile(v, 0.25) == 3.0    # ceil(2.5) -> 3rd
    assert quantile(v, 0.1) == 1.0


def test_quantile_median_odd():
    assert quantile(np.array([5.0, 1.0, 3.0]), 0.5) == 3.0


def test_quantile_degenerate():
    assert quantile(np.full(20, 2.5), 0.37) == 2.5


def test_quantile_needs_enough_samples():
    with pytest.raises(ValueError):
        quantile(np.arange(5.0), 0.1)


# ------------------------------------------------------------- monte carlo

def test_mc_budget_refusal():
    with pytest.raises(BudgetError):
        mc_crossings({"xi": 0.2, "scales": [9.0], "replicas": 10 ** 9}, 0)


def test_mc_minimum_replicas():
    with pytest.raises(ValueError):
        mc_crossings({"xi": 0.2, "scales": [2.0], "replicas": MIN_REPLICAS - 1}, 0)


def test_mc_deterministic_and_digested():
    cfg = {"xi": 0.3, "scales": [2.0], "replicas": 18}
    a = mc_crossings(cfg, master_seed=5)
    b = mc_crossings(cfg, master_seed=5)
    (ka, sa), = a.items()
    (kb, sb), = b.items()
    assert ka == kb
    assert np.array_equal(sa.values, sb.values)
    assert sa.digest == sb.digest
    c = mc_crossings(cfg, master_seed=6)
    (_, sc), = c.items()
    assert not np.array_equal(sa.values, sc.values)
    assert sc.digest != sa.digest


def test_mc_psi_kind_runs():
    out = mc_crossings({"xi": 0.3, "scales": [2.0], "replicas": 16,
                        "kind": "psi"}, 1)
    (_, ss), = out.items()
    assert ss.kind == "psi"
    assert np.all(ss.values > 0)


def test_mc_paired_shares_field():
    rects = [(0.0, 0.0, 1.0, 1.0), (0.0, 0.0, 1.0, 1.0)]
    L1, L2 = mc_paired(2, rects, xi=0.3, replicas=16, master_seed=3)
    assert np.array_equal(L1, L2)      # identical rect, identical field


# ------------------------------------------------------------- tables, fits

def test_quantile_table_from_arrays():
    rng = np.random.default_rng(0)
    samples = {1.0: np.exp(rng.normal(size=400)),
               2.0: np.exp(rng.normal(size=400) - 0.5)}
    qt = quantile_table(samples, p=0.1, bootstrap=50, seed=1)
    assert list(qt.scales) == [1.0, 2.0]
    assert np.all(qt.ell < qt.lam)
    assert np.all(qt.lam < qt.bar_ell)
    assert np.all(qt.Lambda >= 1.0)
    assert np.all(qt.se_lam > 0)


def test_exponent_fit_geometric_is_exact():
    scales = np.arange(3.0, 9.0)
    lams = 2.0 ** (-scales / 6.0)
    fit = exponent_fit(_qt_from_lambdas(scales, lams))
    assert fit.slope == pytest.approx(1.0 / 6.0, abs=1e-12)
    assert np.max(np.abs(fit.residuals)) < 1e-12
    assert fit.band_constant < 1e-12


def test_exponent_fit_band_matches_reference():
    scales = np.arange(1.0, 9.0)
    lams = 2.0 ** (-scales / 6.0) * np.exp(np.sqrt(scales))
    fit = exponent_fit(_qt_from_lambdas(scales, lams))
    y = -np.log2(lams)
    coef = np.polyfit(scales, y, 1)
    res = y - np.polyval(coef, scales)
    assert fit.slope == pytest.approx(coef[0], rel=1e-9)
    assert fit.band_constant == pytest.approx(
        np.max(np.abs(res) / np.sqrt(scales)), rel=1e-9)


def test_exponent_fit_target():
    scales = np.arange(3.0, 9.0)
    lams = 2.0 ** (-scales / 6.0)
    g = math.sqrt(8.0 / 3.0)
    fit = exponent_fit(_qt_from_lambdas(scales, lams), gamma=g, d_gamma=4.0)
    xi = g / 4.0
    assert fit.target == pytest.approx(1.0 - xi * (2.0 / g + g / 2.0))
    assert fit.target == pytest.approx(1.0 / 6.0, abs=1e-12)
    assert fit.discrepancy == pytest.approx(0.0, abs=1e-12)


def test_exponent_fit_needs_four_scales():
    with pytest.raises(ValueError):
        exponent_fit(_qt_from_lambdas([1.0, 2.0, 3.0], [0.5, 0.4, 0.3]))


# ------------------------------------------------------------- tails

def test_tail_curve_gaussian_slope():
    rng = np.random.default_rng(2)
    samples = np.exp(rng.normal(size=20000))
    tc = tail_curve(samples, float(np.median(samples)), side="lower")
    # P(log L <= -s) = Phi(-s): log p ~ -s^2/2 asymptotically
    assert tc.slope < -0.25
    assert tc.r2 > 0.9


def test_tail_curve_shift_invariance():
    rng = np.random.default_rng(3)
    samples = np.exp(rng.normal(size=2000))
    s = np.linspace(0.2, 1.0, 6)
    a = tail_curve(samples, 1.0, side="lower", s_grid=s)
    b = tail_curve(samples * 2.0, 2.0, side="lower", s_grid=s)
    assert np.allclose(a.log_p, b.log_p, equal_nan=True)
    assert np.array_equal(a.hits, b.hits)


def test_tail_curve_upper_abscissa():
    rng = np.random.default_rng(4)
    samples = np.exp(rng.normal(size=5000))
    tc = tail_curve(samples, float(np.median(samples)), side="upper")
    assert tc.side == "upper"
    assert np.all(tc.s > 1.0)          # s <= 1 has no valid abscissa
    assert np.allclose(tc.abscissa, tc.s ** 2 / np.log(tc.s))


def test_tail_curve_needs_samples():
    with pytest.raises(ValueError):
        tail_curve(np.ones(100), 1.0)


# ------------------------------------------------------------- shift check

def test_quantile_shift_zero_sigma():
    rng = np.random.default_rng(5)
    samples = np.exp(rng.normal(size=1000))
    rep = quantile_shift_check(samples, sigma2=0.0, eps=0.05, seed=0,
                               bootstrap=100)
    assert rep.factor == 1.0
    # with Psi = 0, ell(eps) <= ell(2 eps) holds deterministically
    assert rep.margin1 <= 0
    assert rep.margin2 <= 0
    assert rep.ok1 and rep.ok2


def test_quantile_shift_constant_base():
    # L = 1: the shifted quantile is the Gaussian quantile of e^Psi, which
    # the factor e^{sqrt(2 sigma^2 log 1/eps)} dominates
    samples = np.ones(2000)
    rep = quantile_shift_check(samples, sigma2=0.3, eps=0.05, seed=1,
                               bootstrap=200)
    z = math.sqrt(2.0 * math.log(1.0 / 0.05))
    assert rep.factor == pytest.approx(math.exp(math.sqrt(0.3) * z))
    assert rep.ok1 and rep.ok2
    assert rep.ell_base == 1.0 and rep.bar_base == 1.0


def test_quantile_shift_validation():
    with pytest.raises(ValueError):
        quantile_shift_check(np.ones(100), sigma2=-1.0, eps=0.1)
    with pytest.raises(ValueError):
        quantile_shift_check(np.ones(100), sigma2=0.1, eps=0.6)


# ------------------------------------------------------------- rsw, fkg

def test_rsw_identical_laws():
    rng = np.random.default_rng(6)
    easy = {n: np.exp(rng.normal(size=400)) for n in (2.0, 3.0)}
    hard = {n: v.copy() for n, v in easy.items()}
    rep = rsw_compare(easy, hard, p=0.2, bootstrap=50, seed=0)
    # hard quantile at p/4 of the same sample is below the easy one at p
    assert np.all(rep.ratio_low <= 1.0)
    assert np.all(rep.ratio_low > 0.0)
    assert rep.max_over_min >= 1.0


def test_rsw_scale_mismatch():
    with pytest.raises(ValueError):
        rsw_compare({1.0: np.ones(300)}, {2.0: np.ones(300)})


def test_fkg_identical_samples_pass():
    rng = np.random.default_rng(7)
    L = np.exp(rng.normal(size=600))
    rep = fkg_check(L, L, bootstrap=100, seed=0)
    # P(A cap A) = P(A) >= P(A)^2 with room to spare
    assert rep.ok
    assert rep.p_joint >= rep.p_product


def test_fkg_thresholds_default_to_medians():
    rng = np.random.default_rng(8)
    L1 = np.exp(rng.normal(size=500))
    L2 = np.exp(rng.normal(size=500))
    rep = fkg_check(L1, L2, bootstrap=50, seed=0)
    assert rep.thresholds[0] == pytest.approx(quantile(L1, 0.5))
    assert rep.thresholds[1] == pytest.approx(quantile(L2, 0.5))


# ------------------------------------------------------------- variance

def test_var_log_degenerate():
    rep = var_log_crossing(np.full(200, 3.0), xi=0.2, n=4)
    assert rep.variance == pytest.approx(0.0, abs=1e-30)
    assert rep.bound == pytest.approx(0.2 ** 2 * 5 * math.log(2.0))
    assert rep.ok


def test_var_log_bound_flag():
    rng = np.random.default_rng(9)
    samples = np.exp(rng.normal(size=3000) * 0.05)
    rep = var_log_crossing(samples, xi=0.4, n=6)
    assert rep.variance == pytest.approx(0.05 ** 2, rel=0.2)
    assert rep.ok                       # 0.0025 << xi^2 (n+1) log 2


# ------------------------------------------------------------- weak mult

def test_weak_mult_additive_medians():
    scales = np.arange(1.0, 9.0)
    a = 0.35
    lams = np.exp(-a * scales)
    rep = weak_mult_check(_qt_from_lambdas(scales, lams))
    assert rep.max_deviation < 1e-12


def test_weak_mult_bounded_by_noise():
    rng = np.random.default_rng(10)
    scales = np.arange(1.0, 9.0)
    a = 0.35
    u = rng.uniform(-a, a, size=len(scales))
    lams = np.exp(-a * scales + u)
    rep = weak_mult_check(_qt_from_lambdas(scales, lams))
    assert rep.max_deviation <= 3 * a + 1e-12
    assert rep.fractional == [] and rep.max_fractional is None


def test_weak_mult_fractional():
    scales = np.arange(1.0, 5.0)
    lams = np.exp(-0.4 * scales)
    fr_scales = np.array([1.25, 1.5, 1.75])
    fr = np.exp(-0.4 * fr_scales)
    rep = weak_mult_check(_qt_from_lambdas(scales, lams),
                          _qt_from_lambdas(fr_scales, fr))
    assert rep.max_fractional == pytest.approx(0.4 * 0.75, rel=1e-9)


# ------------------------------------------------------------- heavy smokes

def test_condition_t_norm_smoke():
    rep = condition_t_norm([1, 2], 2, xi=0.3, replicas=16, master_seed=2,
                           bootstrap=60)
    assert len(rep.norms) == 2
    assert np.all(rep.norms > 0)
    assert rep.replicas == [16, 16]
    assert isinstance(rep.ok, bool)


def test_efron_stein_smoke():
    rep = efron_stein_decompose(3, 1, xi=0.3, replicas=18, master_seed=4,
                                bootstrap=100)
    assert rep.var_log >= 0
    assert rep.coarse_term >= 0 and rep.block_sum_term >= 0
    assert rep.blocks_considered >= 4
    assert 1.0 <= rep.mean_visited <= rep.blocks_considered
    assert rep.ok


def test_efron_stein_validation():
    with pytest.raises(ValueError):
        efron_stein_decompose(3, 0, xi=0.3, replicas=18, master_seed=0)
    with pytest.raises(ValueError):
        efron_stein_decompose(3, 3, xi=0.3, replicas=18, master_seed=0)
