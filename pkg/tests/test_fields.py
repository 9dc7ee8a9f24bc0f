import math

import numpy as np
import pytest

from lfpp.fields import (
    FieldSample,
    block_field,
    dump_field,
    field_stats,
    load_field,
    resample_component,
    sample_phi,
    sample_psi,
    sup_difference,
)
from lfpp.grids import GridSpec
from lfpp.kernels import TruncationParams, cov_phi, finite_range, sigma_t
from lfpp.synthesis import band_plan, scheme_variance


@pytest.fixture(scope="module")
def grid3():
    return GridSpec.for_scales(3.0)


def test_scheme_variance_matches_log(grid3):
    # the discrete synthesis scheme must reproduce Var = n log 2 closely
    v = scheme_variance(grid3, 0.0, 3.0)
    assert abs(v - 3 * math.log(2.0)) < 0.02


def test_scheme_variance_fractional_scale(grid3):
    v = scheme_variance(grid3, 0.0, 2.5)
    assert abs(v - 2.5 * math.log(2.0)) < 0.02


def test_sample_phi_deterministic(grid3):
    a = sample_phi(grid3, 3.0, seed=42)
    b = sample_phi(grid3, 3.0, seed=42)
    assert np.array_equal(a.values, b.values)
    c = sample_phi(grid3, 3.0, seed=43)
    assert not np.array_equal(a.values, c.values)


def test_sample_phi_shape_and_kind(grid3):
    f = sample_phi(grid3, 3.0, seed=1)
    assert f.values.shape == grid3.shape
    assert f.kind == "phi"
    assert np.all(np.isfinite(f.values))


def test_phi_psi_coupling_without_cutoff(grid3):
    """The cutoff=False hook runs the psi pipeline with plain kernels; the
    shared noise streams then reproduce phi bit for bit."""
    phi = sample_phi(grid3, 3.0, seed=7)
    psi = sample_psi(grid3, 3, K=0, seed=7, cutoff=False)
    assert np.array_equal(phi.values, psi.values)


def test_psi_kernel_truncation_is_hard(grid3):
    # beyond the bump support the synthesis kernel vanishes identically
    from lfpp.synthesis import _kernel

    tr = TruncationParams()
    t_mid, dt, h = 0.25, 0.1, grid3.h
    sig = sigma_t(t_mid, tr)
    r = 2.0 * sig * 1.01
    val = _kernel(np.array([r ** 2]), t_mid, dt, h, "psi", tr)
    assert val[0] == 0.0
    val_in = _kernel(np.array([(0.5 * sig) ** 2]), t_mid, dt, h, "psi", tr)
    assert val_in[0] > 0.0


def test_finite_range_covers_all_bands(grid3):
    tr = TruncationParams()
    R = finite_range(tr, 1.0)
    for band in band_plan(grid3, 0.0, 3.0):
        for t_mid, _ in band.t_slices():
            assert 2.0 * sigma_t(min(t_mid * 2, 1.0), tr) <= R + 1e-12


def test_ledger_decomposition_exact():
    grid = GridSpec.for_scales(3.0)
    f = sample_psi(grid, 3, K=1, seed=11, keep_ledger=True)
    assert f.ledger is not None
    assert np.allclose(f.values, f.coarse_values + f.ledger.fine_values,
                       rtol=0, atol=0)


def test_resample_coarse_keeps_fine_bits():
    grid = GridSpec.for_scales(3.0)
    f = sample_psi(grid, 3, K=1, seed=11, keep_ledger=True)
    g = resample_component(f, "coarse", seed=99)
    assert not np.array_equal(f.coarse_values, g.coarse_values)
    assert np.array_equal(f.ledger.fine_values, g.ledger.fine_values)
    assert np.allclose(g.values, g.coarse_values + g.ledger.fine_values,
                       rtol=0, atol=0)


def test_resample_block_restore_is_bit_exact():
    grid = GridSpec.for_scales(3.0)
    f = sample_psi(grid, 3, K=1, seed=11, keep_ledger=True)
    target = (0, 0)
    slabs = f.ledger.block_slabs(target)
    g = resample_component(f, target, seed=5)
    assert not np.array_equal(f.values, g.values)
    assert np.array_equal(f.coarse_values, g.coarse_values)
    h = resample_component(g, target, slabs=slabs)
    assert np.array_equal(h.values, f.values)


def test_resample_block_locality():
    """Changing one block's noise moves the field only within the cutoff
    dependence radius of that block (up to FFT roundoff)."""
    grid = GridSpec.for_scales(3.0)
    f = sample_psi(grid, 3, K=2, seed=3, keep_ledger=True)
    g = resample_component(f, (0, 0), seed=77)
    R = f.ledger.dependence_radius(TruncationParams())
    diff = np.abs(g.values - f.values)
    xs = grid.x0 + np.arange(grid.nx + 1) * grid.h
    ys = grid.y0 + np.arange(grid.ny + 1) * grid.h
    # block (0,0) covers [0, 1/4]^2; distance from its closed box
    dx = np.maximum(xs[None, :] - 0.25, 0.0)
    dy = np.maximum(ys[:, None] - 0.25, 0.0)
    far = np.hypot(dx + 0 * dy, dy + 0 * dx) > R
    assert diff[far].max() < 1e-10
    assert diff[~far].max() > 1e-6


def test_block_completeness():
    grid = GridSpec.for_scales(3.0)
    f = sample_psi(grid, 3, K=1, seed=13, keep_ledger=True)
    total = np.array(f.coarse_values, copy=True)
    bi_lo, bi_hi, bj_lo, bj_hi = f.ledger.block_index_range()
    for bi in range(bi_lo, bi_hi):
        for bj in range(bj_lo, bj_hi):
            total = total + block_field(f, (bi, bj))
    assert np.max(np.abs(total - f.values)) < 1e-10


def test_sample_psi_validation(grid3):
    with pytest.raises(ValueError):
        sample_psi(grid3, 0)
    with pytest.raises(ValueError):
        sample_psi(grid3, 3, K=3)
    with pytest.raises(ValueError):
        sample_psi(grid3, 3, K=-1)


def test_field_stats_on_linear_field():
    grid = GridSpec(m=16)
    xs = grid.x0 + np.arange(grid.nx + 1) * grid.h
    vals = np.tile(xs, (grid.ny + 1, 1))
    f = FieldSample(vals, grid, "raw", 0.0, 2.0, 0)
    st = field_stats(f, coarse_scale=1)
    assert st.sup_abs == pytest.approx(1.0)
    assert st.grad_sup == pytest.approx(2.0 ** -2 * 1.0, rel=1e-12)
    assert st.osc_per_block.shape == (2, 2)
    assert np.allclose(st.osc_per_block, math.sqrt(2.0) * 0.5, rtol=1e-12)


def test_sup_difference(grid3):
    a = sample_phi(grid3, 3.0, seed=1)
    b = sample_phi(grid3, 3.0, seed=2)
    d = sup_difference(a, b)
    assert d == pytest.approx(np.max(np.abs(a.values - b.values)))
    assert sup_difference(a, a) == 0.0


def test_dump_load_round_trip(tmp_path, grid3):
    f = sample_psi(grid3, 3, K=1, seed=5, trunc=TruncationParams(0.08, 0.3))
    path = str(tmp_path / "f.bin")
    dump_field(f, path)
    g = load_field(path)
    assert np.array_equal(f.values, g.values)
    assert g.grid == f.grid
    assert g.kind == f.kind
    assert g.trunc == f.trunc
    assert g.scale_hi == f.scale_hi


def test_value_at(grid3):
    f = sample_phi(grid3, 3.0, seed=9)
    assert f.value_at(0.5, 0.25) == f.values[
        round(0.25 * grid3.m), round(0.5 * grid3.m)]


def test_empirical_cov_against_quadrature():
    """Monte Carlo covariance at one lag vs the cov_phi oracle, 3 SE."""
    grid = GridSpec.for_scales(2.0)
    lag_nodes = 2
    r = lag_nodes * grid.h
    n_rep = 1500
    prods = np.empty(n_rep)
    iy = grid.ny // 2
    ix = grid.nx // 2
    for k in range(n_rep):
        f = sample_phi(grid, 2.0, seed=10_000 + k)
        prods[k] = f.values[iy, ix] * f.values[iy, ix + lag_nodes]
    want = cov_phi(2.0 ** -2, 1.0, r)
    se = prods.std(ddof=1) / math.sqrt(n_rep)
    assert abs(prods.mean() - want) < 3 * se + 0.02
