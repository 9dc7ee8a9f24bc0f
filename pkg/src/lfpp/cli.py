"""Command-line orchestrator: every experiment as a subcommand.

Usage:
    lfpp <subcommand> [--config FILE] [--key=value ...]
    lfpp verify MANIFEST [--rerun]
    lfpp --help | lfpp <subcommand> --help

Config files are flat key=value text with one section per subcommand plus a
[common] section (seed, out, threads); command-line --key=value flags override
the file. Unknown keys and malformed values are configuration errors.

Every run writes its artifacts and a manifest.json into a directory named by
the subcommand and a digest of the resolved config, so rerunning the same
config overwrites the same directory with byte-identical outputs.

Exit codes: 0 success, 1 configuration error, 2 assertion failure inside an
experiment's own checks, 3 digest or byte mismatch during verify, 4 budget
refusal.
"""

from __future__ import annotations

import math
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .conformal import (
    QuadratureError,
    boundary_term_integral,
    builtin_map,
    kernel_gap_integral,
    third_term_variance,
)
from .estimators import (
    MIN_REPLICAS,
    NODE_VISIT_BUDGET,
    BudgetError,
    QuantileTable,
    condition_t_norm,
    efron_stein_decompose,
    exponent_fit,
    fkg_check,
    mc_crossings,
    mc_paired,
    quantile_shift_check,
    quantile_table,
    rsw_compare,
    tail_curve,
    weak_mult_check,
)
from .fields import dump_field, field_stats, sample_phi, sample_psi
from .gff import compare_crossing_laws, killed_gap_curve
from .grids import GridSpec
from .kernels import TruncationParams
from .manifest import RunManifest, check_digests, load_manifest, write_csv, write_json
from .metric import build_weights, diameter_estimate, holder_ratios
from .seeding import config_digest, derive_seed


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- key specs

def _int(s):
    return int(s)


def _float(s):
    return float(s)


def _str(s):
    return str(s)


def _bool(s):
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(v) for v in str(s).split(",") if v.strip() != ""]


def _ints(s):
    return [int(v) for v in str(s).split(",") if v.strip() != ""]


def _pairs(s):
    """Rectangle side-length list: "1,1;3,1" -> [(1.0, 1.0), (3.0, 1.0)]."""
    out = []
    for part in str(s).split(";"):
        a, b = part.split(",")
        out.append((float(a), float(b)))
    return out


def _quad(s):
    vals = [float(v) for v in str(s).split(",")]
    if len(vals) != 4:
        raise ValueError(f"expected x0,y0,w,h, got {s!r}")
    return tuple(vals)


def _point(s):
    vals = [float(v) for v in str(s).split(",")]
    if len(vals) != 2:
        raise ValueError(f"expected x,y, got {s!r}")
    return tuple(vals)


@dataclass(frozen=True)
class Key:
    name: str
    parse: callable
    default: object
    help: str


COMMON_KEYS = [
    Key("seed", _int, 0, "master seed; every random stream derives from it"),
    Key("out", _str, "", "output root (default: $LFPP_OUT or ./runs)"),
    Key("threads", _int, 1, "worker processes for replica maps"),
]

_SAMPLING = [
    Key("xi", _float, 0.2, "weight exponent; weights are e^(xi field)"),
    Key("kind", _str, "phi", "field program: phi (plain) or psi (finite range)"),
    Key("oversample", _int, 4, "lattice nodes per finest kernel scale"),
    Key("r0", _float, None, "truncation bump radius (with eps0; psi only)"),
    Key("eps0", _float, None, "truncation log exponent in (0, 1/2)"),
]


def _keys(*groups):
    out = {}
    for g in groups:
        for k in g:
            out[k.name] = k
    return out


SUBCOMMANDS = {}


def _register(name, desc, keys):
    def wrap(fn):
        SUBCOMMANDS[name] = (desc, _keys(COMMON_KEYS, keys), fn)
        return fn
    return wrap


def _trunc_from(cfg):
    r0, eps0 = cfg.get("r0"), cfg.get("eps0")
    if (r0 is None) != (eps0 is None):
        raise ConfigError("r0 and eps0 must be given together")
    return None if r0 is None else TruncationParams(r0, eps0)


def _xi_from(cfg):
    """xi directly, or gamma with d_gamma (xi = gamma / d_gamma)."""
    gamma, d_gamma = cfg.get("gamma"), cfg.get("d_gamma")
    if gamma is not None:
        if d_gamma is None:
            raise ConfigError("gamma requires d_gamma")
        return float(gamma) / float(d_gamma)
    return float(cfg["xi"])


def _check_budget(cfg, projected):
    budget = float(cfg.get("budget") or NODE_VISIT_BUDGET)
    if projected > budget:
        raise BudgetError(projected, budget)


def _grid_nodes(scale, rect=(1.0, 1.0), oversample=4):
    m = oversample * 2 ** math.ceil(scale)
    return (rect[0] * m + 1) * (rect[1] * m + 1)


def _mc_config(cfg, scales, rects=((1.0, 1.0),), orientation="left-right"):
    return {
        "xi": _xi_from(cfg),
        "scales": list(scales),
        "replicas": cfg["replicas"],
        "rects": [tuple(r) for r in rects],
        "kind": cfg["kind"],
        "lam": cfg.get("lam", 1.0),
        "oversample": cfg["oversample"],
        "orientation": orientation,
        "trunc": _trunc_from(cfg),
        "threads": cfg["threads"],
    }


# ---------------------------------------------------------------- runners

@_register("sample-field", "sample one field and dump values plus stats", [
    Key("kind", _str, "phi", "phi or psi"),
    Key("scale_hi", _float, 3.0, "finest kernel scale (phi)"),
    Key("scale_lo", _float, 0.0, "coarsest kernel scale (phi)"),
    Key("n", _int, 3, "dyadic scale (psi)"),
    Key("K", _int, 0, "coarse split scale for psi (0 <= K < n)"),
    Key("oversample", _int, 4, "lattice nodes per finest kernel scale"),
    Key("r0", _float, None, "truncation bump radius (psi)"),
    Key("eps0", _float, None, "truncation log exponent in (0, 1/2)"),
])
def _run_sample_field(cfg, outdir, man):
    kind = cfg["kind"]
    seed = derive_seed(cfg["seed"], "field")
    man.note_seed("field", seed)
    if kind == "phi":
        grid = GridSpec.for_scales(cfg["scale_hi"], cfg["scale_lo"],
                                   oversample=cfg["oversample"])
        f = sample_phi(grid, cfg["scale_hi"], cfg["scale_lo"], seed=seed)
        K = None
    elif kind == "psi":
        n, K = cfg["n"], cfg["K"]
        grid = GridSpec.for_scales(n, oversample=cfg["oversample"])
        f = sample_psi(grid, n, K=K, trunc=_trunc_from(cfg), seed=seed)
        K = K if K > 0 else None
    else:
        raise ConfigError(f"unknown field kind {kind!r}")
    dump_field(f, str(outdir / "field.bin"))
    st = field_stats(f, coarse_scale=K)
    write_json(outdir / "stats.json", {
        "sup_abs": st.sup_abs,
        "grad_sup": st.grad_sup,
        "osc_max": None if st.osc_per_block is None else float(st.osc_per_block.max()),
    })
    for name in ("field.bin", "field.bin.json", "stats.json"):
        man.outputs[name] = ""
    return 0


@_register("crossing-mc", "raw crossing-length replicas per (scale, rect)", [
    *_SAMPLING,
    Key("scales", _floats, [3.0], "kernel scales, comma separated"),
    Key("replicas", _int, 200, f"independent replicas (>= {MIN_REPLICAS})"),
    Key("rects", _pairs, [(1.0, 1.0)], "rectangle side lengths, e.g. 1,1;3,1"),
    Key("lam", _float, 1.0, "weight normalization divisor"),
    Key("orientation", _str, "left-right", "crossing direction"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_crossing_mc(cfg, outdir, man):
    config = _mc_config(cfg, cfg["scales"], cfg["rects"], cfg["orientation"])
    projected = sum(cfg["replicas"] * _grid_nodes(s, r, cfg["oversample"])
                    for s in cfg["scales"] for r in cfg["rects"])
    _check_budget(cfg, projected)
    samples = mc_crossings(config, cfg["seed"])
    rows = []
    for (s, rect), ss in sorted(samples.items()):
        for r, v in enumerate(ss.values):
            rows.append((s, rect[0], rect[1], r, v))
    write_csv(outdir / "crossings.csv",
              ("scale", "rect_a", "rect_b", "replica", "length"), rows)
    man.outputs["crossings.csv"] = ""
    return 0


@_register("quantiles", "crossing-length quantile table over scales", [
    *_SAMPLING,
    Key("scales", _floats, [2.0, 3.0, 4.0], "kernel scales"),
    Key("replicas", _int, 200, f"replicas per scale (>= {MIN_REPLICAS})"),
    Key("p", _float, 0.1, "quantile level in (0, 1/2)"),
    Key("bootstrap", _int, 500, "bootstrap resamples for standard errors"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_quantiles(cfg, outdir, man):
    projected = sum(cfg["replicas"] * _grid_nodes(s, oversample=cfg["oversample"])
                    for s in cfg["scales"])
    _check_budget(cfg, projected)
    samples = mc_crossings(_mc_config(cfg, cfg["scales"]), cfg["seed"])
    qt = quantile_table({s: ss for (s, _), ss in samples.items()},
                        p=cfg["p"], bootstrap=cfg["bootstrap"], seed=cfg["seed"])
    _write_quantiles_csv(outdir / "quantiles.csv", qt)
    man.outputs["quantiles.csv"] = ""
    return 0


def _write_quantiles_csv(path, qt):
    rows = [
        (qt.scales[i], qt.p, qt.ell[i], qt.bar_ell[i], qt.lam[i], qt.Lambda[i],
         qt.se_ell[i], qt.se_bar[i], qt.se_lam[i], qt.se_Lambda[i],
         int(qt.replicas[i]))
        for i in range(len(qt.scales))
    ]
    write_csv(path, ("n", "p", "ell", "bar_ell", "lambda", "Lambda", "se_ell",
                     "se_bar", "se_lambda", "se_Lambda", "replicas"), rows)


@_register("tails", "log tail probabilities of the crossing length", [
    *_SAMPLING,
    Key("n", _float, 4.0, "kernel scale"),
    Key("replicas", _int, 2000, "replicas (>= 200 for tail resolution)"),
    Key("side", _str, "both", "lower, upper, or both"),
    Key("s_grid", _floats, None, "offsets s (default: automatic)"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_tails(cfg, outdir, man):
    sides = ("lower", "upper") if cfg["side"] == "both" else (cfg["side"],)
    for side in sides:
        if side not in ("lower", "upper"):
            raise ConfigError(f"unknown side {side!r}")
    _check_budget(cfg, cfg["replicas"] * _grid_nodes(cfg["n"], oversample=cfg["oversample"]))
    samples = mc_crossings(_mc_config(cfg, [cfg["n"]]), cfg["seed"])
    (_, ss), = samples.items()
    lam_ref = float(np.median(ss.values))
    rows, summary = [], {}
    s_grid = None if cfg["s_grid"] is None else np.asarray(cfg["s_grid"])
    for side in sides:
        tc = tail_curve(ss.values, lam_ref, side, s_grid=s_grid)
        for i in range(len(tc.s)):
            rows.append((side, cfg["n"], tc.s[i], tc.log_p[i], int(tc.hits[i])))
        summary[side] = {"slope": tc.slope, "intercept": tc.intercept,
                         "r2": tc.r2, "lambda_ref": lam_ref,
                         "flagged": list(tc.flagged)}
    write_csv(outdir / "tails.csv", ("side", "n", "s", "log_p", "hits"), rows)
    write_json(outdir / "tails.json", summary)
    man.outputs["tails.csv"] = ""
    man.outputs["tails.json"] = ""
    return 0


@_register("rsw", "hard vs easy crossing quantile ratios on a 3:1 rectangle", [
    *_SAMPLING,
    Key("scales", _floats, [3.0, 4.0, 5.0], "kernel scales"),
    Key("replicas", _int, 400, "replicas per scale and orientation"),
    Key("p", _float, 0.1, "easy-side quantile level (hard side uses p/4)"),
    Key("bootstrap", _int, 500, "bootstrap resamples"),
    Key("rect", _pairs, [(3.0, 1.0)], "rectangle side lengths"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_rsw(cfg, outdir, man):
    rect = tuple(cfg["rect"][0])
    projected = 2 * sum(cfg["replicas"] * _grid_nodes(s, rect, cfg["oversample"])
                        for s in cfg["scales"])
    _check_budget(cfg, projected)
    hard = mc_crossings(_mc_config(cfg, cfg["scales"], [rect], "left-right"),
                        cfg["seed"])
    easy = mc_crossings(_mc_config(cfg, cfg["scales"], [rect], "top-bottom"),
                        cfg["seed"])
    rep = rsw_compare({s: ss for (s, _), ss in easy.items()},
                      {s: ss for (s, _), ss in hard.items()},
                      p=cfg["p"], bootstrap=cfg["bootstrap"], seed=cfg["seed"])
    rows = [(rep.scales[i], rep.ratio_low[i], rep.ratio_high[i], rep.se_low[i])
            for i in range(len(rep.scales))]
    write_csv(outdir / "rsw.csv", ("n", "ratio_low", "ratio_high", "se_low"), rows)
    write_json(outdir / "rsw.json", {
        "p": rep.p, "max_ratio": rep.max_ratio,
        "max_over_min": rep.max_over_min, "trend_slope": rep.trend_slope,
    })
    man.outputs["rsw.csv"] = ""
    man.outputs["rsw.json"] = ""
    return 0


@_register("quantile-shift", "low/high quantile drift under an added field", [
    *_SAMPLING,
    Key("n", _float, 4.0, "kernel scale"),
    Key("replicas", _int, 400, "replicas"),
    Key("sigma2", _float, 0.25, "variance of the added constant field"),
    Key("eps", _float, 0.05, "quantile level in (0, 1/2)"),
    Key("bootstrap", _int, 500, "bootstrap resamples"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_quantile_shift(cfg, outdir, man):
    _check_budget(cfg, cfg["replicas"] * _grid_nodes(cfg["n"], oversample=cfg["oversample"]))
    samples = mc_crossings(_mc_config(cfg, [cfg["n"]]), cfg["seed"])
    (_, ss), = samples.items()
    rep = quantile_shift_check(ss, cfg["sigma2"], cfg["eps"],
                               seed=cfg["seed"], bootstrap=cfg["bootstrap"])
    write_json(outdir / "quantile_shift.json", {
        "eps": rep.eps, "sigma2": rep.sigma2, "factor": rep.factor,
        "ell_shifted": rep.ell_shifted, "ell_base": rep.ell_base,
        "bar_shifted": rep.bar_shifted, "bar_base": rep.bar_base,
        "margin_low": rep.margin1, "margin_high": rep.margin2,
        "se_low": rep.se1, "se_high": rep.se2,
        "ok_low": rep.ok1, "ok_high": rep.ok2,
    })
    man.outputs["quantile_shift.json"] = ""
    return 0 if (rep.ok1 and rep.ok2) else 2


@_register("fkg", "positive association of two crossing lengths", [
    *_SAMPLING,
    Key("n", _int, 4, "dyadic scale"),
    Key("replicas", _int, 400, "replicas"),
    Key("rect1", _quad, (0.0, 0.0, 1.0, 1.0), "first rectangle x0,y0,w,h"),
    Key("rect2", _quad, (0.5, 0.0, 1.0, 1.0), "second rectangle x0,y0,w,h"),
    Key("thresholds", _floats, None, "event thresholds (default: medians)"),
    Key("bootstrap", _int, 500, "bootstrap resamples"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_fkg(cfg, outdir, man):
    rects = [tuple(cfg["rect1"]), tuple(cfg["rect2"])]
    _check_budget(cfg, 2 * cfg["replicas"]
                  * _grid_nodes(cfg["n"], oversample=cfg["oversample"]))
    L1, L2 = mc_paired(cfg["n"], rects, _xi_from(cfg), cfg["replicas"],
                       cfg["seed"], kind=cfg["kind"], trunc=_trunc_from(cfg),
                       oversample=cfg["oversample"])
    thr = None if cfg["thresholds"] is None else tuple(cfg["thresholds"])
    rep = fkg_check(L1, L2, thresholds=thr, bootstrap=cfg["bootstrap"],
                    seed=cfg["seed"])
    write_json(outdir / "fkg.json", {
        "thresholds": list(rep.thresholds), "p_joint": rep.p_joint,
        "p_product": rep.p_product, "se_diff": rep.se_diff,
        "ok": rep.ok, "replicas": rep.replicas,
    })
    man.outputs["fkg.json"] = ""
    return 0 if rep.ok else 2


@_register("condition-t", "coarse-block concentration norm decay in K", [
    *_SAMPLING,
    Key("K_list", _ints, [2, 3, 4, 5], "coarse scales K"),
    Key("n_offset", _int, 3, "field scale n = K + n_offset"),
    Key("replicas", _ints, [48], "replicas (one value, or one per K)"),
    Key("alpha", _float, 1.25, "norm exponent in (1, 2]"),
    Key("bootstrap", _int, 500, "bootstrap resamples"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_condition_t(cfg, outdir, man):
    reps = cfg["replicas"]
    reps = reps[0] if len(reps) == 1 else list(reps)
    rlist = [reps] * len(cfg["K_list"]) if isinstance(reps, int) else reps
    projected = sum(r * _grid_nodes(K + cfg["n_offset"], oversample=cfg["oversample"])
                    for K, r in zip(cfg["K_list"], rlist))
    _check_budget(cfg, projected)
    rep = condition_t_norm(cfg["K_list"], cfg["n_offset"], _xi_from(cfg),
                           reps, cfg["seed"], alpha=cfg["alpha"],
                           trunc=_trunc_from(cfg), oversample=cfg["oversample"],
                           bootstrap=cfg["bootstrap"])
    rows = [(K, K + cfg["n_offset"], rep.norms[i], rep.se_log_norm[i],
             rep.replicas[i]) for i, K in enumerate(cfg["K_list"])]
    write_csv(outdir / "condition_t.csv",
              ("K", "n", "norm", "se_log_norm", "replicas"), rows)
    write_json(outdir / "condition_t.json", {
        "alpha": rep.alpha, "c_hat": rep.c_hat,
        "ci99": list(rep.ci99), "ok": rep.ok,
    })
    man.outputs["condition_t.csv"] = ""
    man.outputs["condition_t.json"] = ""
    return 0 if rep.ok else 2


@_register("efron-stein", "variance vs resampling decomposition bound", [
    *_SAMPLING,
    Key("n", _int, 6, "field scale"),
    Key("K", _int, 2, "coarse split scale (0 < K < n)"),
    Key("replicas", _int, 24, "replicas"),
    Key("resamples", _int, 1, "independent resamples per component"),
    Key("subsample", _float, 1.0, "inclusion rate for unvisited blocks"),
    Key("bootstrap", _int, 500, "bootstrap resamples"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_efron_stein(cfg, outdir, man):
    nodes = _grid_nodes(cfg["n"], oversample=cfg["oversample"])
    blocks = (2 ** cfg["K"] + 2) ** 2
    _check_budget(cfg, cfg["replicas"] * nodes
                  * (1 + cfg["resamples"] * (1 + cfg["subsample"] * blocks)))
    rep = efron_stein_decompose(
        cfg["n"], cfg["K"], _xi_from(cfg), cfg["replicas"], cfg["seed"],
        resamples_per_replica=cfg["resamples"], subsample=cfg["subsample"],
        trunc=_trunc_from(cfg), oversample=cfg["oversample"],
        bootstrap=cfg["bootstrap"])
    write_json(outdir / "efron_stein.json", {
        "n": rep.n, "K": rep.K, "xi": rep.xi, "var_log": rep.var_log,
        "coarse_term": rep.coarse_term, "block_sum_term": rep.block_sum_term,
        "se_slack": rep.se_slack, "ok": rep.ok, "replicas": rep.replicas,
        "blocks_considered": rep.blocks_considered,
        "mean_visited": rep.mean_visited,
    })
    man.outputs["efron_stein.json"] = ""
    return 0 if rep.ok else 2


@_register("exponent", "distance exponent from the median decay", [
    *_SAMPLING,
    Key("gamma", _float, None, "LQG parameter (xi = gamma / d_gamma)"),
    Key("d_gamma", _float, None, "fractal dimension for gamma"),
    Key("scales", _floats, [3.0, 4.0, 5.0, 6.0], "kernel scales (>= 4 values)"),
    Key("replicas", _int, 300, "replicas per scale"),
    Key("p", _float, 0.1, "quantile level"),
    Key("bootstrap", _int, 500, "bootstrap resamples"),
    Key("fixture_scales", _floats, None, "synthetic scales (skips sampling)"),
    Key("fixture_lambdas", _floats, None, "synthetic medians for the fixture"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_exponent(cfg, outdir, man):
    if (cfg["fixture_scales"] is None) != (cfg["fixture_lambdas"] is None):
        raise ConfigError("fixture_scales and fixture_lambdas go together")
    if cfg["fixture_scales"] is not None:
        scales = np.asarray(cfg["fixture_scales"], dtype=float)
        lam = np.asarray(cfg["fixture_lambdas"], dtype=float)
        if len(scales) != len(lam):
            raise ConfigError("fixture lists must have equal length")
        z = np.zeros_like(lam)
        qt = QuantileTable(cfg["p"], scales, lam.copy(), lam.copy(), lam,
                           np.ones_like(lam), z, z, z, z,
                           np.zeros(len(lam), dtype=int), 0)
    else:
        projected = sum(cfg["replicas"] * _grid_nodes(s, oversample=cfg["oversample"])
                        for s in cfg["scales"])
        _check_budget(cfg, projected)
        samples = mc_crossings(_mc_config(cfg, cfg["scales"]), cfg["seed"])
        qt = quantile_table({s: ss for (s, _), ss in samples.items()},
                            p=cfg["p"], bootstrap=cfg["bootstrap"],
                            seed=cfg["seed"])
        _write_quantiles_csv(outdir / "quantiles.csv", qt)
        man.outputs["quantiles.csv"] = ""
    fit = exponent_fit(qt, gamma=cfg["gamma"], d_gamma=cfg["d_gamma"])
    write_json(outdir / "exponent.json", {
        "slope": fit.slope, "intercept": fit.intercept,
        "se_slope": fit.se_slope, "band_constant": fit.band_constant,
        "target": fit.target, "discrepancy": fit.discrepancy,
        "scales": list(fit.scales), "residuals": list(fit.residuals),
        "lambdas": list(qt.lam),
    })
    man.outputs["exponent.json"] = ""
    return 0


@_register("weak-mult", "additivity of log medians across scale sums", [
    *_SAMPLING,
    Key("n_max", _int, 4, "test all n, k <= n_max (table spans 1..2 n_max)"),
    Key("replicas", _int, 300, "replicas per scale"),
    Key("frac_base", _float, 3.0, "base scale for fractional increments"),
    Key("fractional", _floats, [0.25, 0.5, 0.75], "fractional increments r"),
    Key("p", _float, 0.1, "quantile level"),
    Key("bootstrap", _int, 500, "bootstrap resamples"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_weak_mult(cfg, outdir, man):
    scales = [float(s) for s in range(1, 2 * cfg["n_max"] + 1)]
    frac_scales = [cfg["frac_base"] + r for r in cfg["fractional"]]
    projected = sum(cfg["replicas"] * _grid_nodes(s, oversample=cfg["oversample"])
                    for s in scales + frac_scales)
    _check_budget(cfg, projected)
    samples = mc_crossings(_mc_config(cfg, scales), cfg["seed"])
    qt = quantile_table({s: ss for (s, _), ss in samples.items()},
                        p=cfg["p"], bootstrap=cfg["bootstrap"], seed=cfg["seed"])
    fsamples = mc_crossings(_mc_config(cfg, frac_scales), cfg["seed"])
    fqt = quantile_table({s: ss for (s, _), ss in fsamples.items()},
                         p=cfg["p"], bootstrap=cfg["bootstrap"], seed=cfg["seed"])
    rep = weak_mult_check(qt, fqt)
    se_log = qt.se_lam / qt.lam
    idx = {float(s): i for i, s in enumerate(qt.scales)}
    pairs = []
    for n_s, k_s, d in rep.pairs:
        se = math.sqrt(se_log[idx[n_s]] ** 2 + se_log[idx[k_s]] ** 2
                       + se_log[idx[n_s + k_s]] ** 2) / math.sqrt(k_s)
        pairs.append({"n": n_s, "k": k_s, "deviation": d, "se": se})
    unit_inc = [abs(math.log(qt.lam[idx[s + 1.0]]) - math.log(qt.lam[idx[s]]))
                for s in idx if s + 1.0 in idx]
    write_json(outdir / "weak_mult.json", {
        "pairs": pairs, "max_deviation": rep.max_deviation,
        "fractional": [{"n": n, "r": r, "increment": d}
                       for n, r, d in rep.fractional],
        "max_fractional": rep.max_fractional,
        "max_unit_increment": max(unit_inc) if unit_inc else None,
    })
    _write_quantiles_csv(outdir / "quantiles.csv", qt)
    man.outputs["weak_mult.json"] = ""
    man.outputs["quantiles.csv"] = ""
    return 0


@_register("conformal", "deterministic quadrature terms for a map", [
    Key("map", _str, "quadratic", "affine, quadratic, or square"),
    Key("map_s", _float, None, "affine scale (>= 1)"),
    Key("map_tr_re", _float, None, "affine translation, real part"),
    Key("map_tr_im", _float, None, "affine translation, imaginary part"),
    Key("map_c", _float, None, "quadratic coefficient in (0, 1/4)"),
    Key("x_re", _float, 1.4, "base point, real part (inside the map domain)"),
    Key("x_im", _float, 0.1, "base point, imaginary part"),
    Key("direction", _point, (1.0, 0.0), "offset direction for x'"),
    Key("lags", _floats, [2.0 ** -k for k in range(7, 1, -1)],
        "offsets |x - x'| for the first and second terms"),
    Key("deltas", _floats, [0.05], "scales for the small-time variance term"),
    Key("terms", _str, "first,second,third", "which terms to evaluate"),
    Key("nt", _int, 96, "time-integral nodes (doubled for verification)"),
    Key("q", _int, 12, "space nodes per kernel radius"),
    Key("t_min", _float, 2.0 ** -12, "lower time cutoff"),
    Key("tol", _float, 1e-3, "relative Richardson tolerance"),
])
def _run_conformal(cfg, outdir, man):
    params = {}
    if cfg["map"] == "affine":
        if cfg["map_s"] is not None:
            params["s"] = cfg["map_s"]
        if cfg["map_tr_re"] is not None or cfg["map_tr_im"] is not None:
            params["tr"] = complex(cfg["map_tr_re"] or 0.0, cfg["map_tr_im"] or 0.0)
    elif cfg["map"] == "quadratic" and cfg["map_c"] is not None:
        params["c"] = cfg["map_c"]
    F = builtin_map(cfg["map"], **params)
    terms = [t.strip() for t in cfg["terms"].split(",") if t.strip()]
    for t in terms:
        if t not in ("first", "second", "third"):
            raise ConfigError(f"unknown term {t!r}")
    x = complex(cfg["x_re"], cfg["x_im"])
    d = complex(*cfg["direction"])
    d /= abs(d)
    rows = []
    for term in terms:
        if term == "third":
            for delta in cfg["deltas"]:
                v = third_term_variance(F, x, delta, nt=cfg["nt"], q=cfg["q"])
                rows.append((F.name, "third", delta, v, v / delta))
            continue
        fn = kernel_gap_integral if term == "first" else boundary_term_integral
        for lag in cfg["lags"]:
            xp = x + lag * d
            v = fn(F, x, xp, nt=cfg["nt"], q=cfg["q"], t_min=cfg["t_min"],
                   tol=cfg["tol"])
            rows.append((F.name, term, lag, v, v / lag))
    write_csv(outdir / "conformal.csv",
              ("map", "term", "lag", "value", "value_per_lag"), rows)
    write_json(outdir / "conformal.json", {
        "map": F.name, "sup_dF": F.sup_dF, "inf_dF": F.inf_dF,
        "min_re_dF": F.min_re_dF, "sup_d2F": F.sup_d2F,
        "eps_regularity": (None if math.isinf(F.eps_regularity)
                           else F.eps_regularity),
    })
    man.outputs["conformal.csv"] = ""
    man.outputs["conformal.json"] = ""
    return 0


@_register("gff-compare", "Dirichlet-field bridge: kernel gap and crossing laws", [
    Key("xi", _float, 0.2, "weight exponent"),
    Key("deltas", _floats, [2.0 ** -4, 2.0 ** -6], "smoothing scales"),
    Key("replicas", _int, 220, "replicas per scale and program"),
    Key("m", _int, 64, "lattice resolution for both programs"),
    Key("quantiles", _floats, [0.1, 0.5, 0.9], "levels to compare"),
    Key("kk_t", _float, 0.01, "free-kernel time for the gap curve"),
    Key("kk_s", _floats, [0.05, 0.02, 0.01, 0.005, 0.002],
        "killed-kernel times (all >= 1e-3)"),
    Key("kk_x", _point, (0.45, 0.3), "gap probe x in U"),
    Key("kk_y", _point, (0.55, 0.3), "gap probe y in U"),
    Key("nquad", _int, 400, "quadrature nodes for the gap convolution"),
])
def _run_gff_compare(cfg, outdir, man):
    gap = killed_gap_curve(cfg["kk_t"], cfg["kk_s"], cfg["kk_x"], cfg["kk_y"],
                           nquad=cfg["nquad"])
    write_csv(outdir / "killed_kernel.csv", ("t", "s", "x", "y", "gap"),
              [(gap.t, s, f"{gap.x[0]:g},{gap.x[1]:g}",
                f"{gap.y[0]:g},{gap.y[1]:g}", g)
               for s, g in zip(gap.s, gap.gap)])
    rep = compare_crossing_laws(cfg["deltas"], cfg["xi"], cfg["replicas"],
                                cfg["seed"], m=cfg["m"],
                                quantile_levels=tuple(cfg["quantiles"]))
    write_csv(outdir / "gff_compare.csv",
              ("delta", "source", "quantile", "value", "normalized"), rep.rows)
    write_json(outdir / "gff_compare.json", {
        "xi": rep.xi, "max_ratio": rep.max_ratio, "replicas": rep.replicas,
        "gap_c_hat": gap.c_hat, "gap_ok": gap.ok,
        "tail_slopes": {f"{d:g}/{src}": v
                        for (d, src), v in rep.tail_slopes.items()},
    })
    for name in ("killed_kernel.csv", "gff_compare.csv", "gff_compare.json"):
        man.outputs[name] = ""
    return 0 if gap.ok else 2


@_register("holder", "bi-Hoelder distortion constants over scales", [
    *_SAMPLING,
    Key("gamma", _float, None, "LQG parameter (xi = gamma / d_gamma)"),
    Key("d_gamma", _float, None, "fractal dimension for gamma"),
    Key("alpha", _float, None, "upper exponent (default 1.02 xi (Q + 2))"),
    Key("beta", _float, None, "lower exponent (default 0.5 xi (Q - 2))"),
    Key("scales", _floats, [4.0, 5.0, 6.0], "kernel scales"),
    Key("replicas", _int, 8, "fields per scale"),
    Key("pairs_per_stratum", _int, 64, "sampled pairs per dyadic separation"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_holder(cfg, outdir, man):
    xi = _xi_from(cfg)
    alpha, beta = cfg["alpha"], cfg["beta"]
    if alpha is None or beta is None:
        if cfg["gamma"] is None:
            raise ConfigError("alpha and beta are required unless gamma, "
                              "d_gamma fix the thresholds")
        g = cfg["gamma"]
        Q = 2.0 / g + g / 2.0
        alpha = 1.02 * xi * (Q + 2.0) if alpha is None else alpha
        beta = 0.5 * xi * (Q - 2.0) if beta is None else beta
    projected = sum(cfg["replicas"] * _grid_nodes(s, oversample=cfg["oversample"]) * 40
                    for s in cfg["scales"])
    _check_budget(cfg, projected)
    rows = []
    med = {}
    for s in cfg["scales"]:
        grid = GridSpec.for_scales(s, oversample=cfg["oversample"])
        ca, cb = [], []
        for r in range(cfg["replicas"]):
            fseed = derive_seed(cfg["seed"], "holder", s, r)
            f = sample_phi(grid, s, seed=fseed)
            a, b = holder_ratios(build_weights(f, xi), alpha, beta,
                                 seed=derive_seed(cfg["seed"], "holder-p", s, r),
                                 pairs_per_stratum=cfg["pairs_per_stratum"])
            ca.append(a)
            cb.append(b)
            rows.append((s, r, a, b))
        med[s] = (float(np.median(ca)), float(np.median(cb)))
    write_csv(outdir / "holder.csv", ("n", "replica", "c_alpha", "c_beta"), rows)
    meds_a = [v[0] for v in med.values()]
    meds_b = [v[1] for v in med.values()]
    write_json(outdir / "holder.json", {
        "alpha": alpha, "beta": beta, "xi": xi,
        "medians": {f"{s:g}": list(v) for s, v in med.items()},
        "variation_alpha": max(meds_a) / min(meds_a),
        "variation_beta": max(meds_b) / min(meds_b),
    })
    man.outputs["holder.csv"] = ""
    man.outputs["holder.json"] = ""
    return 0


@_register("diameter", "certified lower and chaining upper diameter bounds", [
    *_SAMPLING,
    Key("n", _float, 4.0, "kernel scale"),
    Key("replicas", _int, 8, "fields"),
    Key("landmarks", _int, 8, "landmark tree count (>= 4)"),
    Key("chain_constant", _float, 4.0, "chaining constant"),
    Key("budget", _float, None, "node-visit budget override"),
])
def _run_diameter(cfg, outdir, man):
    _check_budget(cfg, cfg["replicas"] * cfg["landmarks"]
                  * _grid_nodes(cfg["n"], oversample=cfg["oversample"]))
    grid = GridSpec.for_scales(cfg["n"], oversample=cfg["oversample"])
    rows = []
    lows, ups = [], []
    for r in range(cfg["replicas"]):
        f = sample_phi(grid, cfg["n"], seed=derive_seed(cfg["seed"], "diam", r))
        rep = diameter_estimate(build_weights(f, _xi_from(cfg)),
                                landmarks=cfg["landmarks"],
                                seed=derive_seed(cfg["seed"], "diam-l", r),
                                chain_constant=cfg["chain_constant"])
        rows.append((r, rep.lower, rep.chaining_upper, rep.k_max))
        lows.append(rep.lower)
        ups.append(rep.chaining_upper)
    write_csv(outdir / "diameter.csv",
              ("replica", "lower", "chaining_upper", "k_max"), rows)
    write_json(outdir / "diameter.json", {
        "median_lower": float(np.median(lows)),
        "median_upper": float(np.median(ups)),
        "upper_over_lower": float(np.median(ups) / np.median(lows)),
    })
    man.outputs["diameter.csv"] = ""
    man.outputs["diameter.json"] = ""
    return 0


# ---------------------------------------------------------------- plumbing

def _parse_config_file(path):
    import configparser

    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    sections = {}
    for sec in cp.sections():
        if sec != "common" and sec not in SUBCOMMANDS:
            raise ConfigError(f"unknown config section [{sec}]")
        sections[sec] = dict(cp.items(sec))
    return sections


def _resolve(sub, file_sections, overrides):
    _, keyspec, _ = SUBCOMMANDS[sub]
    raw = {}
    raw.update(file_sections.get("common", {}))
    raw.update(file_sections.get(sub, {}))
    raw.update(overrides)
    cfg = {k.name: k.default for k in keyspec.values()}
    for name, value in raw.items():
        if name not in keyspec:
            raise ConfigError(f"unknown key {name!r} for subcommand {sub}")
        try:
            cfg[name] = keyspec[name].parse(value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {name!r}: {e}") from e
    _validate(sub, cfg)
    return cfg


def _validate(sub, cfg):
    if "xi" in cfg and cfg.get("gamma") is None and cfg["xi"] is not None:
        if cfg["xi"] <= 0:
            raise ConfigError("xi must be positive")
    for key in ("p", "eps"):
        if cfg.get(key) is not None and not 0.0 < cfg[key] < 0.5:
            raise ConfigError(f"{key} must lie in (0, 1/2)")
    if "replicas" in cfg and cfg["replicas"] is not None:
        reps = cfg["replicas"] if isinstance(cfg["replicas"], list) else [cfg["replicas"]]
        if sub not in ("holder", "diameter") and any(r < MIN_REPLICAS for r in reps):
            raise ConfigError(f"replicas below the minimum {MIN_REPLICAS}")
        if any(r < 1 for r in reps):
            raise ConfigError("replicas must be positive")
    if cfg.get("threads", 1) < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.get("eps0") is not None and not 0.0 < cfg["eps0"] < 0.5:
        raise ConfigError("eps0 must lie in (0, 1/2)")


def _outdir_for(sub, cfg):
    root = cfg.get("out") or os.environ.get("LFPP_OUT") or "runs"
    digested = {k: repr(v) for k, v in cfg.items() if k not in ("out", "threads")}
    tag = config_digest({"subcommand": sub, **digested})[:12]
    return Path(root) / f"{sub}-{tag}"


def _print_help(sub=None):
    if sub is None:
        print(__doc__.strip())
        print("\nSubcommands:")
        width = max(len(s) for s in SUBCOMMANDS) + 2
        for name in sorted(SUBCOMMANDS):
            desc, _, _ = SUBCOMMANDS[name]
            print(f"  {name:<{width}}{desc}")
        print(f"  {'verify':<{width}}recheck a run's manifest digests")
        return
    desc, keyspec, _ = SUBCOMMANDS[sub]
    print(f"lfpp {sub} [--config FILE] [--key=value ...]\n\n{desc}\n\nKeys:")
    for k in keyspec.values():
        d = "optional" if k.default is None else f"default {k.default!r}"
        print(f"  {k.name:<18}{k.help} ({d})")


def _run_subcommand(sub, cfg, outdir):
    """Execute one subcommand into outdir; returns the runner's exit code."""
    _, _, runner = SUBCOMMANDS[sub]
    outdir.mkdir(parents=True, exist_ok=True)
    man = RunManifest(sub, {k: v for k, v in cfg.items() if k != "out"},
                      cfg["seed"], __version__)
    try:
        code = runner(cfg, outdir, man)
    except BaseException:
        try:
            outdir.rmdir()      # only succeeds if the runner wrote nothing
        except OSError:
            pass
        raise
    man.finalize(outdir)
    return code


def _cmd_verify(args):
    rerun = "--rerun" in args
    paths = [a for a in args if not a.startswith("--")]
    if len(paths) != 1:
        print("usage: lfpp verify MANIFEST [--rerun]", file=sys.stderr)
        return 1
    mpath = Path(paths[0])
    if mpath.is_dir():
        mpath = mpath / "manifest.json"
    if not mpath.exists():
        print(f"missing manifest: {mpath}", file=sys.stderr)
        return 3
    problems = check_digests(mpath)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return 3
    if rerun:
        doc = load_manifest(mpath)
        sub = doc["subcommand"]
        if sub not in SUBCOMMANDS:
            print(f"unknown subcommand in manifest: {sub}", file=sys.stderr)
            return 1
        cfg = dict(doc["config"])
        cfg["out"] = ""
        _, keyspec, _ = SUBCOMMANDS[sub]
        for name in cfg:
            if name not in keyspec:
                print(f"unknown key in manifest config: {name}", file=sys.stderr)
                return 1
        recheck = mpath.parent.parent / (mpath.parent.name + ".recheck")
        try:
            _run_subcommand(sub, cfg, recheck)
            for name in sorted(doc["outputs"]):
                a = (mpath.parent / name).read_bytes()
                b = (recheck / name).read_bytes()
                if a != b:
                    print(f"rerun differs: {name}", file=sys.stderr)
                    return 3
        finally:
            shutil.rmtree(recheck, ignore_errors=True)
    print("verify ok")
    return 0


def main(argv=None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args or args[0] in ("--help", "-h"):
        _print_help()
        return 0
    sub = args.pop(0)
    if sub == "verify":
        return _cmd_verify(args)
    if sub not in SUBCOMMANDS:
        print(f"unknown subcommand {sub!r} (see lfpp --help)", file=sys.stderr)
        return 1
    config_path = None
    overrides = {}
    i = 0
    while i < len(args):
        a = args[i]
        if a in ("--help", "-h"):
            _print_help(sub)
            return 0
        if a == "--config":
            if i + 1 >= len(args):
                print("--config needs a path", file=sys.stderr)
                return 1
            config_path = args[i + 1]
            i += 2
            continue
        if a.startswith("--config="):
            config_path = a.split("=", 1)[1]
            i += 1
            continue
        if a.startswith("--") and "=" in a:
            name, value = a[2:].split("=", 1)
            overrides[name] = value
            i += 1
            continue
        print(f"unrecognized argument {a!r} (flags are --key=value)",
              file=sys.stderr)
        return 1
    try:
        sections = _parse_config_file(config_path) if config_path else {}
        cfg = _resolve(sub, sections, overrides)
        outdir = _outdir_for(sub, cfg)
        code = _run_subcommand(sub, cfg, outdir)
        print(f"{sub}: wrote {outdir} (exit {code})")
        return code
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except BudgetError as e:
        print(f"budget refusal: {e}", file=sys.stderr)
        return 4
    except QuadratureError as e:
        print(f"quadrature failure: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
