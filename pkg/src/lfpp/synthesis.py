"""FFT synthesis of smoothed white-noise fields, one scale band at a time.

The field over kernel times t in [4^-scale_hi, 4^-scale_lo] is split into unit
scale bands (t-octaves) and each band into `slices_per_octave` log-uniform time
slices. A slice contributes the periodic convolution of an independent
cell-normalized white-noise lattice with sqrt(pi * dt_slice) * p_{t_mid/2},
t_mid the geometric slice midpoint. Each band lives on its own lattice with
the same oversampling ratio relative to the band's finest kernel width that
the final grid has relative to the finest scale, so the noise discretization
error is self-similar across octaves; band lattices are node-aligned with the
final grid and coarse bands are evaluated at final nodes by periodic cubic
spline. Kernel spectra are real (even kernels) and cached across replicas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .grids import GridSpec, required_padding
from .kernels import TruncationParams, bump, sigma_t
from .seeding import derive_seed

SLICES_PER_OCTAVE = 8


@dataclass(frozen=True)
class BandGeometry:
    """One scale band's torus lattice and time slices."""

    j: int                 # octave index: kernel times in [4^-(j+1), 4^-j] (clipped)
    m_b: int               # lattice nodes per unit length
    pad_cells: int
    ny: int                # torus rows (domain rows + 2*pad + 1)
    nx: int
    s_edges: tuple[float, ...]   # slice boundaries in scale units, increasing

    @property
    def h(self) -> float:
        return 1.0 / self.m_b

    def t_slices(self):
        """(t_mid, dt) per slice, slices ordered by increasing scale."""
        out = []
        for s0, s1 in zip(self.s_edges[:-1], self.s_edges[1:]):
            t_hi, t_lo = 4.0 ** -s0, 4.0 ** -s1
            out.append((math.sqrt(t_hi * t_lo), t_hi - t_lo))
        return out


def slice_edges(scale_lo: float, scale_hi: float, slices_per_octave: int):
    """Global slice lattice j + i/S clipped to [scale_lo, scale_hi]."""
    S = slices_per_octave
    first = math.floor(scale_lo * S + 1e-9) + 1
    last = math.ceil(scale_hi * S - 1e-9) - 1
    inner = [k / S for k in range(first, last + 1) if scale_lo + 1e-12 < k / S < scale_hi - 1e-12]
    return [scale_lo] + inner + [scale_hi]


def band_plan(
    grid: GridSpec,
    scale_lo: float,
    scale_hi: float,
    slices_per_octave: int = SLICES_PER_OCTAVE,
    single_lattice: bool = False,
) -> list[BandGeometry]:
    """Partition [scale_lo, scale_hi] into unit bands with per-band lattices."""
    if scale_hi <= scale_lo:
        raise ValueError("need scale_hi > scale_lo")
    ceil_hi = math.ceil(scale_hi)
    if grid.m % (1 << ceil_hi) != 0 and not single_lattice:
        raise ValueError(
            f"m={grid.m} must be divisible by 2^{ceil_hi} for banded synthesis"
        )
    edges = slice_edges(scale_lo, scale_hi, slices_per_octave)
    bands: list[BandGeometry] = []
    j0, j1 = math.floor(scale_lo), math.ceil(scale_hi)
    for j in range(j0, j1):
        b_lo, b_hi = max(scale_lo, float(j)), min(scale_hi, float(j + 1))
        b_edges = [s for s in edges if b_lo - 1e-12 <= s <= b_hi + 1e-12]
        if len(b_edges) < 2:
            continue
        if single_lattice or j >= ceil_hi - 1:
            m_b = grid.m
        else:
            m_b = grid.m >> (ceil_hi - j - 1)
        t_max_band = 4.0 ** -b_lo
        pad = min(required_padding(t_max_band), grid.padding)
        pad_cells = int(math.ceil(pad * m_b - 1e-9))
        ny = int(round(grid.height * m_b)) + 2 * pad_cells + 1
        nx = int(round(grid.width * m_b)) + 2 * pad_cells + 1
        bands.append(BandGeometry(j, m_b, pad_cells, ny, nx, tuple(b_edges)))
    return bands


def _torus_r2(band: BandGeometry):
    h = band.h
    dx = np.arange(band.nx) * h
    dx = np.minimum(dx, band.nx * h - dx)
    dy = np.arange(band.ny) * h
    dy = np.minimum(dy, band.ny * h - dy)
    return dy[:, None] ** 2 + dx[None, :] ** 2


def _kernel(r2, t_mid, dt, h, kind, trunc: TruncationParams | None):
    """Slice kernel sampled on the torus, including sqrt(pi*dt) and the cell
    measure/noise normalization (net factor h)."""
    ker = np.exp(-r2 / t_mid) * (math.sqrt(math.pi * dt) * h / (math.pi * t_mid))
    if kind == "psi":
        sig = float(sigma_t(t_mid, trunc))
        if sig <= 0.0:
            return np.zeros_like(ker)
        ker *= bump(np.sqrt(r2) / sig)
    elif kind != "phi":
        raise ValueError(f"unknown kernel kind {kind!r}")
    return ker


# Cache of per-slice kernel spectra, keyed by band geometry + slice + kind.
# Spectra of even kernels are real, stored as float64.
_KSPEC_CACHE: dict = {}
_KSPEC_BYTES = [0]
_KSPEC_BUDGET = 512 * 1024 * 1024


def _kernel_spectrum(band: BandGeometry, t_mid, dt, kind, trunc):
    key = (band.m_b, band.ny, band.nx, round(math.log(t_mid), 12), round(dt, 15), kind,
           None if trunc is None else (trunc.r0, trunc.eps0))
    spec = _KSPEC_CACHE.get(key)
    if spec is None:
        ker = _kernel(_torus_r2(band), t_mid, dt, band.h, kind, trunc)
        spec = np.real(sfft.rfft2(ker))
        if _KSPEC_BYTES[0] + spec.nbytes <= _KSPEC_BUDGET:
            _KSPEC_CACHE[key] = spec
            _KSPEC_BYTES[0] += spec.nbytes
    return spec


def clear_kernel_cache():
    _KSPEC_CACHE.clear()
    _KSPEC_BYTES[0] = 0


def band_noise(seed: int, band: BandGeometry, slice_index: int):
    """White-noise lattice for one slice; depends only on (seed, band, slice).

    Slice indices live on the global lattice scale*S so overlapping scale
    ranges with equal seeds share noise (this is what couples phi and psi).
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(derive_seed(seed, "noise", band.j, slice_index))
    )
    return rng.standard_normal((band.ny, band.nx))


def _global_slice_index(s_lo: float, slices_per_octave: int) -> int:
    return int(round(s_lo * slices_per_octave))


def synth_band(
    band: BandGeometry,
    seed: int,
    kind: str,
    trunc: TruncationParams | None,
    slices_per_octave: int,
    noise_slabs: dict | None = None,
):
    """Synthesize one band on its torus. Returns the torus field array.

    noise_slabs, if given, maps global slice index -> noise array and overrides
    the seeded draw (used by ledger resampling).
    """
    acc = None
    for (s0, _s1), (t_mid, dt) in zip(
        zip(band.s_edges[:-1], band.s_edges[1:]), band.t_slices()
    ):
        gsi = _global_slice_index(s0, slices_per_octave)
        if noise_slabs is not None and (band.j, gsi) in noise_slabs:
            noise = noise_slabs[(band.j, gsi)]
        else:
            noise = band_noise(seed, band, gsi)
        spec = _kernel_spectrum(band, t_mid, dt, kind, trunc)
        f = sfft.rfft2(noise)
        f *= spec
        acc = f if acc is None else acc + f
    if acc is None:
        return np.zeros((band.ny, band.nx))
    return sfft.irfft2(acc, s=(band.ny, band.nx))


def eval_at_nodes(band: BandGeometry, torus: np.ndarray, grid: GridSpec):
    """Evaluate a band torus field at the final node lattice."""
    step = band.m_b / grid.m
    if band.m_b == grid.m:
        p = band.pad_cells
        return torus[p : p + grid.ny + 1, p : p + grid.nx + 1].copy()
    ys = np.arange(grid.ny + 1) * step + band.pad_cells
    xs = np.arange(grid.nx + 1) * step + band.pad_cells
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    vals = ndimage.map_coordinates(
        torus, [cy.ravel(), cx.ravel()], order=3, mode="grid-wrap"
    )
    return vals.reshape(grid.ny + 1, grid.nx + 1)


def synthesize(
    grid: GridSpec,
    scale_lo: float,
    scale_hi: float,
    seed: int,
    kind: str,
    trunc: TruncationParams | None = None,
    slices_per_octave: int = SLICES_PER_OCTAVE,
    single_lattice: bool = False,
    coarse_below: float | None = None,
    collect_noise: bool = False,
):
    """Sum all bands at the final nodes.

    Returns (values, coarse_values, slabs): coarse_values is the partial sum of
    bands with j < coarse_below (None if coarse_below is None); slabs maps
    (band_j, global_slice_index) -> noise array when collect_noise is set.
    """
    grid.check_padding(4.0 ** -scale_lo)
    bands = band_plan(grid, scale_lo, scale_hi, slices_per_octave, single_lattice)
    total = np.zeros(grid.shape)
    coarse = np.zeros(grid.shape) if coarse_below is not None else None
    slabs: dict = {}
    for band in bands:
        if collect_noise:
            for s0 in band.s_edges[:-1]:
                gsi = _global_slice_index(s0, slices_per_octave)
                slabs[(band.j, gsi)] = band_noise(seed, band, gsi)
            torus = synth_band(band, seed, kind, trunc, slices_per_octave, slabs)
        else:
            torus = synth_band(band, seed, kind, trunc, slices_per_octave)
        vals = eval_at_nodes(band, torus, grid)
        total += vals
        if coarse is not None and band.j < coarse_below:
            coarse += vals
    return total, coarse, (slabs if collect_noise else None)


def scheme_variance(
    grid: GridSpec,
    scale_lo: float,
    scale_hi: float,
    kind: str = "phi",
    trunc: TruncationParams | None = None,
    slices_per_octave: int = SLICES_PER_OCTAVE,
) -> float:
    """Exact pointwise variance of the synthesized law (no Monte Carlo).

    Sum over bands/slices of sum_cells kernel^2; spline evaluation of coarse
    bands perturbs this only below the slice-rule error.
    """
    bands = band_plan(grid, scale_lo, scale_hi, slices_per_octave)
    var = 0.0
    for band in bands:
        r2 = _torus_r2(band)
        for t_mid, dt in band.t_slices():
            ker = _kernel(r2, t_mid, dt, band.h, kind, trunc)
            var += float(np.sum(ker * ker))
    return var
