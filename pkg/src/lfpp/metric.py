"""Weighted grid graphs and first-passage observables on field samples.

Nodes carry weights w(v) = e^{xi * field(v)} / lambda; an edge between
8-neighbors u, v costs |u - v| * (w(u) + w(v)) / 2 (trapezoid rule, so the
discrete length converges to the line integral of the weight along the path).
Crossing lengths, point distances, diameter bounds and the coarse-block
concentration ratio all run on the same sparse graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .fields import FieldSample
from .grids import GridSpec

EXP_CLAMP = 700.0  # |xi * field| beyond this would overflow e^x


@dataclass
class WeightGrid:
    """Node weights on a lattice window plus graph scratch.

    Immutable by convention; the CSR cache only memoizes derived data.
    """

    weights: np.ndarray
    grid: GridSpec
    xi: float
    lam: float
    clamp_count: int
    _csr_cache: dict = dc_field(default_factory=dict, repr=False)


def build_weights(field: FieldSample, xi: float, lam: float = 1.0) -> WeightGrid:
    if xi <= 0:
        raise ValueError("xi must be positive")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    expo = xi * field.values
    clamped = int(np.count_nonzero(np.abs(expo) > EXP_CLAMP))
    weights = np.exp(np.clip(expo, -EXP_CLAMP, EXP_CLAMP)) / lam
    return WeightGrid(weights, field.grid, xi, lam, clamped)


def weights_from_array(values: np.ndarray, grid: GridSpec, xi: float,
                       lam: float = 1.0) -> WeightGrid:
    """build_weights for a bare array (synthetic fields in tests and checks)."""
    sample = FieldSample(np.asarray(values, dtype=float), grid, "raw", 0.0, 0.0, 0)
    return build_weights(sample, xi, lam)


def _node_window(grid: GridSpec, rect) -> tuple[int, int, int, int]:
    """Node index window [ix0, ix1] x [iy0, iy1] (inclusive) for a rectangle
    (x0, y0, width, height) in absolute coordinates; must align to the lattice."""
    x0, y0, w, h = rect
    if w <= 0 or h <= 0:
        raise ValueError("degenerate rectangle")
    m = grid.m
    ix0 = (x0 - grid.x0) * m
    iy0 = (y0 - grid.y0) * m
    ix1 = ix0 + w * m
    iy1 = iy0 + h * m
    out = []
    for v in (ix0, ix1, iy0, iy1):
        r = round(v)
        if abs(v - r) > 1e-9:
            raise ValueError("rectangle does not align with the node lattice")
        out.append(int(r))
    ix0, ix1, iy0, iy1 = out
    if not (0 <= ix0 < ix1 <= grid.nx) or not (0 <= iy0 < iy1 <= grid.ny):
        raise ValueError("rectangle not contained in the grid domain")
    return ix0, ix1, iy0, iy1


_OFFSETS = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, math.sqrt(2.0)), (1, -1, math.sqrt(2.0)))


def _build_csr(w: np.ndarray, h: float) -> csr_matrix:
    """8-neighbor graph over the window's nodes, both edge directions stored."""
    ny, nx = w.shape
    n = ny * nx
    idx = np.arange(n).reshape(ny, nx)
    wf = w.ravel()
    rows, cols, data = [], [], []
    for dy, dx, fac in _OFFSETS:
        if dx >= 0:
            a = idx[: ny - dy, : nx - dx].ravel()
            b = idx[dy:, dx:].ravel()
        else:
            a = idx[: ny - dy, -dx:].ravel()
            b = idx[dy:, : nx + dx].ravel()
        wgt = (fac * h * 0.5) * (wf[a] + wf[b])
        rows.append(a); cols.append(b); data.append(wgt)
        rows.append(b); cols.append(a); data.append(wgt)
    return csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))


def _window_graph(wg: WeightGrid, window, reverse_order: bool):
    """CSR for a node window; size-1 cache (repeated crossings reuse the graph)."""
    key = (window, reverse_order)
    if key not in wg._csr_cache:
        ix0, ix1, iy0, iy1 = window
        w = wg.weights[iy0 : iy1 + 1, ix0 : ix1 + 1]
        if reverse_order:
            w = w[::-1, ::-1]
        wg._csr_cache.clear()
        wg._csr_cache[key] = _build_csr(np.ascontiguousarray(w), wg.grid.h)
    return wg._csr_cache[key]


@dataclass
class CrossingResult:
    """One side-to-side geodesic: its length, polyline, and block trace."""

    length: float
    polyline: np.ndarray          # (L, 2) absolute (x, y) along the geodesic
    rect: tuple
    orientation: str
    grid: GridSpec
    source: tuple                 # geodesic start point (x, y)

    def visited_blocks(self, K: int) -> set:
        """Blocks of the closed dyadic partition at scale K met by the geodesic.

        A node on a block boundary belongs to every adjacent block, so the
        result is 4-connected as a block set.
        """
        scale = 1 << K
        blocks = set()
        for x, y in self.polyline:
            u, v = x * scale, y * scale
            iu, iv = math.floor(u + 1e-9), math.floor(v + 1e-9)
            on_u = abs(u - round(u)) < 1e-9
            on_v = abs(v - round(v)) < 1e-9
            xs = (iu - 1, iu) if on_u and round(u) == iu else (iu,)
            ys = (iv - 1, iv) if on_v and round(v) == iv else (iv,)
            for bx in xs:
                for by in ys:
                    blocks.add((bx, by))
        return blocks

    def block_field_values(self, coarse_field: FieldSample, K: int) -> dict:
        """Coarse-field value at the center of each visited block.

        A geodesic touching the domain boundary also visits the closed
        block on the far side; blocks whose center falls outside the field's
        node range carry no sampled value and are skipped.
        """
        g = coarse_field.grid
        out = {}
        for bi, bj in self.visited_blocks(K):
            cx = (bi + 0.5) / (1 << K)
            cy = (bj + 0.5) / (1 << K)
            if not (g.x0 <= cx <= g.x0 + g.width and g.y0 <= cy <= g.y0 + g.height):
                continue
            out[(bi, bj)] = coarse_field.value_at(cx, cy)
        return out

    def recompute_length(self, wg: WeightGrid) -> float:
        """Edge-weight sum along the polyline in path order.

        Dijkstra accumulates distances in the same order, so this matches
        length bit-for-bit.
        """
        m, h = wg.grid.m, wg.grid.h
        ixs = np.rint((self.polyline[:, 0] - wg.grid.x0) * m).astype(int)
        iys = np.rint((self.polyline[:, 1] - wg.grid.y0) * m).astype(int)
        w = wg.weights
        total = 0.0
        for k in range(len(ixs) - 1):
            fac = math.sqrt(2.0) if (ixs[k + 1] != ixs[k] and iys[k + 1] != iys[k]) else 1.0
            total = total + (fac * h * 0.5) * (w[iys[k], ixs[k]] + w[iys[k + 1], ixs[k + 1]])
        return total


def _straight_upper_bound(w, h, orientation):
    """Cost of the best of three straight crossings; prunes the Dijkstra sweep."""
    ny, nx = w.shape
    best = math.inf
    if orientation == "left-right":
        for iy in (0, ny // 2, ny - 1):
            row = w[iy, :]
            best = min(best, float(h * 0.5 * np.sum(row[:-1] + row[1:])))
    else:
        for ix in (0, nx // 2, nx - 1):
            col = w[:, ix]
            best = min(best, float(h * 0.5 * np.sum(col[:-1] + col[1:])))
    return best


def crossing(
    wg: WeightGrid,
    rect=None,
    orientation: str = "left-right",
    reverse_order: bool = False,
) -> CrossingResult:
    """Exact shortest side-to-side path in a rectangle.

    All nodes on one closed side are sources, all on the opposite side are
    targets. reverse_order relabels the nodes back-to-front, which changes
    only the tie-breaking among equal-length geodesics.
    """
    if orientation not in ("left-right", "top-bottom"):
        raise ValueError("orientation must be left-right or top-bottom")
    grid = wg.grid
    if rect is None:
        rect = (grid.x0, grid.y0, grid.width, grid.height)
    window = _node_window(grid, rect)
    ix0, ix1, iy0, iy1 = window
    nx = ix1 - ix0 + 1
    ny = iy1 - iy0 + 1
    n = nx * ny
    G = _window_graph(wg, window, reverse_order)
    wsub = wg.weights[iy0 : iy1 + 1, ix0 : ix1 + 1]
    if orientation == "left-right":
        sources = np.arange(0, n, nx)
        targets = np.arange(nx - 1, n, nx)
    else:
        sources = np.arange(nx)
        targets = np.arange(n - nx, n)
    if reverse_order:
        sources, targets = (n - 1 - sources)[::-1], (n - 1 - targets)[::-1]
    limit = _straight_upper_bound(wsub if not reverse_order else wsub[::-1, ::-1],
                                  grid.h, orientation)
    # Dijkstra accumulates edge weights in path order, which can land a few
    # ulps above the vectorized row sum when a straight row is the geodesic;
    # inflate the pruning limit so exact optima are never cut off.
    dist, pred, _ = dijkstra(G, directed=True, indices=sources, min_only=True,
                             return_predecessors=True, limit=limit * (1.0 + 1e-9))
    j = targets[int(np.argmin(dist[targets]))]
    length = float(dist[j])
    nodes = [j]
    while pred[nodes[-1]] >= 0:
        nodes.append(int(pred[nodes[-1]]))
    nodes.reverse()
    nid = np.asarray(nodes)
    if reverse_order:
        nid = n - 1 - nid
    xs = grid.x0 + (ix0 + nid % nx) * grid.h
    ys = grid.y0 + (iy0 + nid // nx) * grid.h
    poly = np.column_stack([xs, ys])
    return CrossingResult(length, poly, tuple(rect), orientation, grid,
                          (float(xs[0]), float(ys[0])))


def point_distance(wg: WeightGrid, p, q, rect=None) -> float:
    """Shortest-path length between the nodes nearest to p and q."""
    grid = wg.grid
    if rect is None:
        rect = (grid.x0, grid.y0, grid.width, grid.height)
    window = _node_window(grid, rect)
    ix0, ix1, iy0, iy1 = window
    nx = ix1 - ix0 + 1

    def node_of(pt):
        ix = int(round((pt[0] - grid.x0) * grid.m)) - ix0
        iy = int(round((pt[1] - grid.y0) * grid.m)) - iy0
        if not (0 <= ix < nx and 0 <= iy <= iy1 - iy0):
            raise ValueError("point outside the rectangle")
        return iy * nx + ix

    a, b = node_of(p), node_of(q)
    if a == b:
        return 0.0
    G = _window_graph(wg, window, False)
    dist = dijkstra(G, directed=True, indices=[a], min_only=True)
    return float(dist[b])


def _distances_from(wg: WeightGrid, window, source: int) -> np.ndarray:
    G = _window_graph(wg, window, False)
    return dijkstra(G, directed=True, indices=[source], min_only=True)


@dataclass(frozen=True)
class DiameterReport:
    lower: float                  # certified: max over landmark trees
    chaining_upper: float         # surrogate, not certified
    landmarks: int
    k_max: int
    note: str


def diameter_estimate(wg: WeightGrid, landmarks: int = 8, seed: int = 0,
                      chain_constant: float = 4.0) -> DiameterReport:
    """Certified diameter lower bound plus a chaining-style upper surrogate.

    Lower: max over single-source trees from corner, boundary and interior
    landmarks. Upper surrogate: chain_constant * (sum over scales k of the max
    crossing length over the 3:1 dyadic rectangle family at scale k, clipped
    to the domain, plus the last-scale cell term h * e^{xi sup field}).
    """
    if landmarks < 4:
        raise ValueError("need at least 4 landmarks")
    grid = wg.grid
    window = _node_window(grid, (grid.x0, grid.y0, grid.width, grid.height))
    ix0, ix1, iy0, iy1 = window
    nx, ny = ix1 - ix0 + 1, iy1 - iy0 + 1
    n = nx * ny
    corners = [0, nx - 1, n - nx, n - 1]
    rng = np.random.default_rng(seed)
    seeds = list(corners)
    per_side = max(0, (landmarks - 4) // 2)
    for k in range(per_side):
        frac = (k + 1) / (per_side + 1)
        seeds.append(int(round(frac * (nx - 1))))                    # bottom side
        seeds.append(n - nx + int(round(frac * (nx - 1))))           # top side
    while len(seeds) < landmarks:
        seeds.append(int(rng.integers(0, n)))
    lower = 0.0
    for s in seeds[:landmarks]:
        d = _distances_from(wg, window, s)
        lower = max(lower, float(np.max(d[np.isfinite(d)])))

    # Chaining surrogate over 3:1 rectangle families; scales the lattice can
    # still resolve (at least 8 cells across the short side).
    k_max = max(0, int(math.floor(math.log2(grid.m * min(grid.width, grid.height)) - 3)))
    total = 0.0
    for k in range(k_max + 1):
        side = 2.0 ** -k
        best = 0.0
        for horizontal in (True, False):
            lw = min(3.0 * side, grid.width) if horizontal else min(side, grid.width)
            lh = min(side, grid.height) if horizontal else min(3.0 * side, grid.height)
            xs = np.arange(grid.x0, grid.x0 + grid.width - lw + 1e-12, side)
            ys = np.arange(grid.y0, grid.y0 + grid.height - lh + 1e-12, side)
            xs = np.append(xs, grid.x0 + grid.width - lw)
            ys = np.append(ys, grid.y0 + grid.height - lh)
            for x in np.unique(np.round(xs * grid.m) / grid.m):
                for y in np.unique(np.round(ys * grid.m) / grid.m):
                    cr = crossing(wg, (x, y, lw, lh),
                                  "left-right" if horizontal else "top-bottom")
                    best = max(best, cr.length)
        total += best
    sup_w = float(np.max(wg.weights))
    upper = chain_constant * (total + grid.h * sup_w)
    note = ("lower is certified (max over %d landmark trees); upper is a "
            "chaining surrogate with constant %.1f over scales k <= %d"
            % (landmarks, chain_constant, k_max))
    return DiameterReport(lower, upper, landmarks, k_max, note)


def condition_t_ratio(cr: CrossingResult, coarse_field: FieldSample, xi: float,
                      K: int | None = None) -> float:
    """Block concentration ratio sum e^{2 xi v_P} / (sum e^{xi v_P})^2 over the
    geodesic's visited blocks, with v_P the coarse field at the block center.

    Equals 1/M for M equal-weight blocks and 1 for a single block.
    """
    if K is None:
        K = coarse_field.coarse_scale
    if K is None:
        raise ValueError("no coarse scale given")
    vals = cr.block_field_values(coarse_field, K)
    if not vals:
        raise ValueError("empty visited-block set")
    v = xi * np.array(sorted(vals.values()), dtype=float)
    v -= v.max()                      # shift-invariant ratio, avoids overflow
    num = float(np.sum(np.exp(2.0 * v)))
    den = float(np.sum(np.exp(v))) ** 2
    return num / den


def holder_ratios(wg: WeightGrid, alpha: float, beta: float,
                  pairs=None, seed: int = 0, pairs_per_stratum: int = 64):
    """Distortion constants over sampled point pairs.

    C_alpha = max |x-x'|^alpha / d(x,x'); C_beta = max d(x,x') / |x-x'|^beta.
    Default sampling stratifies |x-x'| over dyadic separations 2^-k and runs
    one Dijkstra tree per distinct source node.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    grid = wg.grid
    window = _node_window(grid, (grid.x0, grid.y0, grid.width, grid.height))
    ix0, ix1, iy0, iy1 = window
    nx, ny = ix1 - ix0 + 1, iy1 - iy0 + 1

    def to_node(pt):
        ix = int(round((pt[0] - grid.x0) * grid.m)) - ix0
        iy = int(round((pt[1] - grid.y0) * grid.m)) - iy0
        return iy * nx + ix, (grid.x0 + (ix0 + ix) * grid.h,
                              grid.y0 + (iy0 + iy) * grid.h)

    if pairs is None:
        rng = np.random.default_rng(seed)
        n_strata = max(1, int(math.log2(grid.m)) - 1)
        sources_per = 8
        pairs = []
        for k in range(1, n_strata + 1):
            sep = 2.0 ** -k * min(grid.width, grid.height)
            if sep < 2.0 * grid.h:
                break
            for _ in range(pairs_per_stratum // sources_per):
                sx = grid.x0 + rng.uniform(0, grid.width)
                sy = grid.y0 + rng.uniform(0, grid.height)
                for _ in range(sources_per):
                    ang = rng.uniform(0, 2 * math.pi)
                    tx = min(max(sx + sep * math.cos(ang), grid.x0), grid.x0 + grid.width)
                    ty = min(max(sy + sep * math.sin(ang), grid.y0), grid.y0 + grid.height)
                    pairs.append(((sx, sy), (tx, ty)))

    by_source: dict = {}
    for p, q in pairs:
        a, pa = to_node(p)
        b, pb = to_node(q)
        sepv = math.hypot(pb[0] - pa[0], pb[1] - pa[1])
        if sepv < 2.0 * grid.h - 1e-12:
            continue
        by_source.setdefault(a, []).append((b, sepv))
    c_alpha = 0.0
    c_beta = 0.0
    for a, targets in by_source.items():
        d = _distances_from(wg, window, a)
        for b, sepv in targets:
            dv = float(d[b])
            if dv <= 0 or not math.isfinite(dv):
                continue
            c_alpha = max(c_alpha, sepv ** alpha / dv)
            c_beta = max(c_beta, dv / sepv ** beta)
    if c_alpha == 0.0:
        raise ValueError("no valid pairs (all separations below 2h?)")
    return c_alpha, c_beta
