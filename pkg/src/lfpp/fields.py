"""Field samples: plain and cutoff kernels, block noise ledger, statistics."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .grids import GridSpec
from .kernels import TruncationParams
from .seeding import derive_seed
from . import synthesis
from .synthesis import SLICES_PER_OCTAVE, BandGeometry, band_plan, eval_at_nodes, synth_band


@dataclass
class NoiseLedger:
    """Per-(band, slice) noise slabs with the block partition at coarse scale K.

    Blocks are the closed dyadic squares of side 2^-K tiling the plane, indexed
    by (bi, bj) with block = [bi, bi+1] x [bj, bj+1] * 2^-K in absolute
    coordinates. Band lattices are aligned so each block is a whole rectangle
    of cells at every stored band.
    """

    K: int
    slices_per_octave: int
    bands: list[BandGeometry]          # all bands, coarse then fine
    slabs: dict                         # (band_j, global_slice_index) -> array
    fine_values: np.ndarray             # fine part (bands j >= K) at final nodes
    grid: GridSpec

    def fine_bands(self):
        return [b for b in self.bands if b.j >= self.K]

    def coarse_bands(self):
        return [b for b in self.bands if b.j < self.K]

    def _block_cells(self, band: BandGeometry, bi: int, bj: int):
        """Cell index rectangle of block (bi, bj) on a band lattice, clipped."""
        cpb = band.m_b >> self.K           # cells per block side
        ax0 = int(round(self.grid.x0 * band.m_b)) - band.pad_cells
        ay0 = int(round(self.grid.y0 * band.m_b)) - band.pad_cells
        x0 = bi * cpb - ax0
        y0 = bj * cpb - ay0
        x1, y1 = x0 + cpb, y0 + cpb
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, band.nx), min(y1, band.ny)
        if x0 >= x1 or y0 >= y1:
            return None
        return (y0, y1, x0, x1)

    def block_index_range(self):
        """(bi_lo, bi_hi, bj_lo, bj_hi) covering every stored fine-band cell."""
        scale = 1 << self.K
        lo_x = math.floor((self.grid.x0 - self.grid.padding) * scale)
        hi_x = math.ceil((self.grid.x0 + self.grid.width + self.grid.padding) * scale)
        lo_y = math.floor((self.grid.y0 - self.grid.padding) * scale)
        hi_y = math.ceil((self.grid.y0 + self.grid.height + self.grid.padding) * scale)
        return lo_x, hi_x, lo_y, hi_y

    def block_slabs(self, target) -> dict:
        """Copy of the stored noise for one component ("coarse" or (bi, bj))."""
        out = {}
        if target == "coarse":
            for band in self.coarse_bands():
                for s0 in band.s_edges[:-1]:
                    key = (band.j, synthesis._global_slice_index(s0, self.slices_per_octave))
                    out[key] = self.slabs[key].copy()
            return out
        bi, bj = target
        for band in self.fine_bands():
            rect = self._block_cells(band, bi, bj)
            if rect is None:
                continue
            y0, y1, x0, x1 = rect
            for s0 in band.s_edges[:-1]:
                key = (band.j, synthesis._global_slice_index(s0, self.slices_per_octave))
                out[key] = self.slabs[key][y0:y1, x0:x1].copy()
        return out

    def dependence_radius(self, trunc: TruncationParams) -> float:
        """Reach of one block's field beyond the block: kernel support radius
        2*sigma_t maximized over the fine time range."""
        from .kernels import sigma_t
        t_max = 4.0 ** -self.K if self.K > 0 else 1.0
        t_star = min(math.exp(-2.0 * trunc.eps0), t_max)
        return float(2.0 * sigma_t(t_star, trunc))


@dataclass
class FieldSample:
    """A field realization on a node lattice.

    values is indexed [iy, ix]; node (ix, iy) sits at (x0 + ix*h, y0 + iy*h).
    coarse_values, when present, is the partial field from scale bands below
    the ledger's coarse scale K.
    """

    values: np.ndarray
    grid: GridSpec
    kind: str
    scale_lo: float
    scale_hi: float
    seed: int
    trunc: TruncationParams | None = None
    coarse_scale: int | None = None
    coarse_values: np.ndarray | None = None
    ledger: NoiseLedger | None = None

    def value_at(self, x: float, y: float) -> float:
        """Field value at the nearest node."""
        ix = int(round((x - self.grid.x0) * self.grid.m))
        iy = int(round((y - self.grid.y0) * self.grid.m))
        return float(self.values[iy, ix])


def sample_phi(
    grid: GridSpec,
    scale_hi: float,
    scale_lo: float = 0.0,
    seed: int = 0,
    slices_per_octave: int = SLICES_PER_OCTAVE,
    single_lattice: bool = False,
) -> FieldSample:
    """Sample the smoothed field over kernel times [4^-scale_hi, 4^-scale_lo].

    Pointwise variance is (scale_hi - scale_lo) * log 4 / 2 = log(2^scale_hi /
    2^scale_lo); fractional scales are allowed at both ends.
    """
    grid.check_scale(scale_hi)
    values, _, _ = synthesis.synthesize(
        grid, scale_lo, scale_hi, seed, "phi",
        slices_per_octave=slices_per_octave, single_lattice=single_lattice,
    )
    return FieldSample(values, grid, "phi", scale_lo, scale_hi, seed)


def sample_psi(
    grid: GridSpec,
    n: int,
    K: int = 0,
    trunc: TruncationParams | None = None,
    seed: int = 0,
    keep_ledger: bool = False,
    slices_per_octave: int = SLICES_PER_OCTAVE,
    cutoff: bool = True,
) -> FieldSample:
    """Sample the cutoff-kernel field over scales [0, n], split at coarse scale K.

    The per-(band, slice) noise depends only on (seed, band, slice), never on
    the kernel, so sample_psi(seed) is coupled to sample_phi(seed) on the same
    grid. cutoff=False is the test hook that substitutes a unit cutoff profile
    and must reproduce sample_phi exactly.
    """
    if n != int(n) or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    if not 0 <= K < n:
        raise ValueError("need 0 <= K < n")
    if trunc is None:
        trunc = TruncationParams()
    grid.check_scale(n)
    grid.check_padding(1.0)
    kind = "psi" if cutoff else "phi"
    bands = band_plan(grid, 0.0, float(n), slices_per_octave)
    if keep_ledger:
        for band in bands:
            if band.j >= K and band.m_b % (1 << K) != 0:
                raise ValueError("band lattice does not align with the block partition")
            if abs(grid.x0 * band.m_b - round(grid.x0 * band.m_b)) > 1e-9 or \
               abs(grid.y0 * band.m_b - round(grid.y0 * band.m_b)) > 1e-9:
                raise ValueError("domain origin must sit on every band lattice")
    coarse = np.zeros(grid.shape)
    fine = np.zeros(grid.shape)
    slabs: dict = {}
    for band in bands:
        if keep_ledger:
            for s0 in band.s_edges[:-1]:
                gsi = synthesis._global_slice_index(s0, slices_per_octave)
                slabs[(band.j, gsi)] = synthesis.band_noise(seed, band, gsi)
            torus = synth_band(band, seed, kind, trunc, slices_per_octave, slabs)
        else:
            torus = synth_band(band, seed, kind, trunc, slices_per_octave)
        vals = eval_at_nodes(band, torus, grid)
        if band.j < K:
            coarse += vals
        else:
            fine += vals
    values = coarse + fine
    ledger = None
    if keep_ledger:
        ledger = NoiseLedger(K, slices_per_octave, bands, slabs, fine, grid)
    return FieldSample(
        values, grid, "psi", 0.0, float(n), seed, trunc=trunc,
        coarse_scale=K, coarse_values=(coarse if K > 0 else None), ledger=ledger,
    )


def resample_component(
    sample: FieldSample,
    target,
    seed: int | None = None,
    slabs: dict | None = None,
) -> FieldSample:
    """Redraw one independent noise component of a ledgered sample.

    target is "coarse" (all scale bands below K) or a block index (bi, bj)
    (the block's cells across all fine bands). Either a fresh seed or explicit
    slabs (as returned by ledger.block_slabs) must be given; passing a
    component's original slabs restores the original field bit-for-bit. All
    other components' noise is reused unchanged.
    """
    led = sample.ledger
    if led is None:
        raise ValueError("sample has no noise ledger; sample with keep_ledger=True")
    if (seed is None) == (slabs is None):
        raise ValueError("pass exactly one of seed, slabs")
    kind = "psi"
    new_slabs = {k: v for k, v in led.slabs.items()}

    if target == "coarse":
        for band in led.coarse_bands():
            for s0 in band.s_edges[:-1]:
                key = (band.j, synthesis._global_slice_index(s0, led.slices_per_octave))
                if slabs is not None:
                    new_slabs[key] = np.array(slabs[key], dtype=float)
                else:
                    rng = np.random.default_rng(np.random.SeedSequence(
                        derive_seed(seed, "recoarse", band.j, key[1])))
                    new_slabs[key] = rng.standard_normal((band.ny, band.nx))
        coarse = np.zeros(sample.grid.shape)
        for band in led.coarse_bands():
            torus = synth_band(band, sample.seed, kind, sample.trunc,
                               led.slices_per_octave, new_slabs)
            coarse += eval_at_nodes(band, torus, sample.grid)
        fine = led.fine_values
        values = coarse + fine
        new_led = NoiseLedger(led.K, led.slices_per_octave, led.bands, new_slabs,
                              fine, sample.grid)
        return FieldSample(values, sample.grid, sample.kind, sample.scale_lo,
                           sample.scale_hi, sample.seed, trunc=sample.trunc,
                           coarse_scale=led.K, coarse_values=coarse, ledger=new_led)

    bi, bj = target
    for band in led.fine_bands():
        rect = led._block_cells(band, bi, bj)
        if rect is None:
            continue
        y0, y1, x0, x1 = rect
        for s0 in band.s_edges[:-1]:
            key = (band.j, synthesis._global_slice_index(s0, led.slices_per_octave))
            slab = new_slabs[key].copy()
            if slabs is not None:
                slab[y0:y1, x0:x1] = np.array(slabs[key], dtype=float)
            else:
                rng = np.random.default_rng(np.random.SeedSequence(
                    derive_seed(seed, "reblock", bi, bj, band.j, key[1])))
                slab[y0:y1, x0:x1] = rng.standard_normal((y1 - y0, x1 - x0))
            new_slabs[key] = slab
    fine = np.zeros(sample.grid.shape)
    for band in led.fine_bands():
        torus = synth_band(band, sample.seed, kind, sample.trunc,
                           led.slices_per_octave, new_slabs)
        fine += eval_at_nodes(band, torus, sample.grid)
    coarse = sample.coarse_values if sample.coarse_values is not None else np.zeros(sample.grid.shape)
    values = coarse + fine
    new_led = NoiseLedger(led.K, led.slices_per_octave, led.bands, new_slabs,
                          fine, sample.grid)
    return FieldSample(values, sample.grid, sample.kind, sample.scale_lo,
                       sample.scale_hi, sample.seed, trunc=sample.trunc,
                       coarse_scale=led.K, coarse_values=sample.coarse_values,
                       ledger=new_led)


def block_field(sample: FieldSample, target) -> np.ndarray:
    """Field contribution of one fine-scale block (noise masked to the block).

    Summing block_field over every block in ledger.block_index_range() plus
    the coarse part reproduces values up to FFT roundoff (~1e-13 relative);
    exact additivity holds only in exact arithmetic.
    """
    led = sample.ledger
    if led is None:
        raise ValueError("sample has no noise ledger")
    bi, bj = target
    out = np.zeros(sample.grid.shape)
    for band in led.fine_bands():
        rect = led._block_cells(band, bi, bj)
        if rect is None:
            continue
        y0, y1, x0, x1 = rect
        masked = {}
        for s0 in band.s_edges[:-1]:
            key = (band.j, synthesis._global_slice_index(s0, led.slices_per_octave))
            slab = np.zeros((band.ny, band.nx))
            slab[y0:y1, x0:x1] = led.slabs[key][y0:y1, x0:x1]
            masked[key] = slab
        torus = synth_band(band, sample.seed, "psi", sample.trunc,
                           led.slices_per_octave, masked)
        out += eval_at_nodes(band, torus, sample.grid)
    return out


@dataclass(frozen=True)
class FieldStats:
    """sup_abs over the domain; grad_sup = 2^-scale_hi * sup |grad|;
    osc_per_block[bj, bi] = diam(P) * sup_P |grad| at the requested coarse scale."""

    sup_abs: float
    grad_sup: float
    osc_per_block: np.ndarray | None


def field_stats(sample: FieldSample, coarse_scale: int | None = None) -> FieldStats:
    v = sample.values
    h = sample.grid.h
    gy, gx = np.gradient(v, h)
    gnorm = np.hypot(gx, gy)
    sup_abs = float(np.max(np.abs(v)))
    grad_sup = float(2.0 ** -sample.scale_hi * np.max(gnorm))
    osc = None
    if coarse_scale is not None:
        K = int(coarse_scale)
        npb_x = sample.grid.nx >> K
        npb_y = sample.grid.ny >> K
        if npb_x << K != sample.grid.nx or npb_y << K != sample.grid.ny:
            raise ValueError("grid does not split into 2^K blocks")
        nbx, nby = 1 << K, 1 << K
        if sample.grid.width != 1.0 or sample.grid.height != 1.0:
            nbx = int(round(sample.grid.width * (1 << K)))
            nby = int(round(sample.grid.height * (1 << K)))
            npb_x = sample.grid.nx // nbx
            npb_y = sample.grid.ny // nby
        diam = math.sqrt(2.0) * 2.0 ** -K
        osc = np.empty((nby, nbx))
        for bj in range(nby):
            for bi in range(nbx):
                blk = gnorm[bj * npb_y : (bj + 1) * npb_y + 1,
                            bi * npb_x : (bi + 1) * npb_x + 1]
                osc[bj, bi] = diam * float(np.max(blk))
    return FieldStats(sup_abs, grad_sup, osc)


def sup_difference(a: FieldSample, b: FieldSample) -> float:
    """Sup over nodes of |a - b|; the samples must share a lattice."""
    if a.grid != b.grid:
        raise ValueError("samples live on different grids")
    return float(np.max(np.abs(a.values - b.values)))


def dump_field(sample: FieldSample, path: str) -> None:
    """Write values as raw little-endian float64 (C order) + JSON sidecar."""
    arr = np.ascontiguousarray(sample.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    meta = {
        "shape": list(sample.values.shape),
        "dtype": "<f8",
        "order": "C",
        "m": sample.grid.m,
        "x0": sample.grid.x0,
        "y0": sample.grid.y0,
        "width": sample.grid.width,
        "height": sample.grid.height,
        "padding": sample.grid.padding,
        "kind": sample.kind,
        "scale_lo": sample.scale_lo,
        "scale_hi": sample.scale_hi,
        "seed": sample.seed,
        "trunc": None if sample.trunc is None else
                 {"r0": sample.trunc.r0, "eps0": sample.trunc.eps0},
    }
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_field(path: str) -> FieldSample:
    with open(path + ".json") as fh:
        meta = json.load(fh)
    values = np.frombuffer(open(path, "rb").read(), dtype=meta["dtype"])
    values = values.reshape(meta["shape"]).astype(float)
    grid = GridSpec(m=meta["m"], x0=meta["x0"], y0=meta["y0"], width=meta["width"],
                    height=meta["height"], padding=meta["padding"])
    trunc = None
    if meta["trunc"] is not None:
        trunc = TruncationParams(meta["trunc"]["r0"], meta["trunc"]["eps0"])
    return FieldSample(values, grid, meta["kind"], meta["scale_lo"],
                       meta["scale_hi"], meta["seed"], trunc=trunc)
