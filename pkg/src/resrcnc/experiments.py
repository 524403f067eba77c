"""Monte Carlo orchestration: trial fan-out, trace CSVs, ensemble series,
region sweeps, and variant comparisons.

Per-trial traces are written as CSV with full float precision (%.17g round
trips float64 exactly), so every analysis here is replayable from the stored
files without re-simulation.  Ensemble moments are accumulated streaming in
trial order; ``recompute_ensemble`` repeats the identical accumulation from
the CSVs, which the test suite compares against the streamed result.
"""
from __future__ import annotations

import concurrent.futures
import json
import time
from pathlib import Path

import numpy as np

from . import metrics, svgplot
from .config import ScenarioConfig
from .engine import PolicyParams, Scenario, TrialResult, run_trial
from .model import ConfigError, apply_outage

FLOAT_FMT = "%.17g"

TRACE_UNITS = {
    "slot": "slot index",
    "vcap_link_total": "packets/slot summed over directed links",
    "vcap_cpu_total": "CPU summed over nodes",
    "arrivals": "source packets/slot",
    "delivered": "destination-stage packets/slot",
    "expired": "packets dropped at end of lifetime, all stages",
    "cost": "$ per slot",
    "uq": "total actual queue backlog, packets",
    "vq": "total virtual queue (reliability + causality)",
    "rq": "sum of |request queue| entries",
    "nu_total": "virtual flow granted, packets/slot",
    "x_total": "actual flow executed, packets/slot",
}


def chain_gains(scenario: Scenario) -> list[float]:
    """Full-chain packet scaling per commodity (source -> destination units)."""
    out = []
    for c in scenario.commodities:
        svc = scenario.services[c.service]
        out.append(svc.cumulative_gain(svc.num_stages))
    return out


# ---- CSV I/O ----

def write_csv(path: Path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    mat = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    np.savetxt(path, mat, fmt=FLOAT_FMT, delimiter=",",
               header=",".join(names), comments="")


def read_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        names = fh.readline().strip().split(",")
        if not fh.read(1):
            return {k: np.zeros(0) for k in names}
    mat = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {k: mat[:, i].copy() for i, k in enumerate(names)}


def write_caps_csv(path: Path, result: TrialResult) -> None:
    if not result.frame_caps:
        write_csv(path, {"slot": np.zeros(0)})
        return
    slots = np.array([t for t, _, _ in result.frame_caps], dtype=float)
    links = np.stack([lc for _, lc, _ in result.frame_caps])
    cpus = np.stack([cc for _, _, cc in result.frame_caps])
    cols = {"slot": slots,
            "vlink_total": links.sum(axis=1), "vcpu_total": cpus.sum(axis=1)}
    for j in range(cpus.shape[1]):
        cols[f"vcpu_{j}"] = cpus[:, j]
    write_csv(path, cols)


# ---- per-trial derived series and streaming ensemble ----

def derive_series(trace: dict[str, np.ndarray], xis: list[float],
                  window: int, gamma_short: float) -> dict[str, np.ndarray]:
    """Per-trial series the ensemble aggregates: cumulative and trailing
    reliability levels, the satisfaction indicator, raw deliveries and cost."""
    out = {}
    for ci, xi in enumerate(xis):
        arr = trace[f"arrivals_c{ci}"]
        dlv = trace[f"delivered_c{ci}"]
        out[f"relia_cum_c{ci}"] = metrics.cumulative_level_series(dlv, arr, xi)
        win = metrics.trailing_level_series(dlv, arr, xi, window)
        out[f"relia_win_c{ci}"] = win
        sat = np.full(len(arr), np.nan)
        if len(arr) >= window:
            asum = np.cumsum(arr)
            dsum = np.cumsum(dlv)
            aw = asum[window - 1:].copy()
            aw[1:] -= asum[:-window]
            dw = dsum[window - 1:].copy()
            dw[1:] -= dsum[:-window]
            sat[window - 1:] = (dw >= gamma_short * xi * aw).astype(float)
        out[f"sat_c{ci}"] = sat
        out[f"deliv_c{ci}"] = dlv
        out[f"cost_c{ci}"] = trace[f"cost_c{ci}"]
    return out


class EnsembleAccumulator:
    """Slot-wise running sum/sumsq/count per series, NaN-aware.

    Adding trials in a fixed order makes the result reproducible bit for bit,
    which is what lets a from-CSV recompute match the streamed values.
    """

    def __init__(self, horizon: int):
        self.horizon = horizon
        self.sums: dict[str, np.ndarray] = {}
        self.sumsq: dict[str, np.ndarray] = {}
        self.count: dict[str, np.ndarray] = {}
        self.trials = 0

    def add(self, series: dict[str, np.ndarray]) -> None:
        for k, v in series.items():
            if k not in self.sums:
                self.sums[k] = np.zeros(self.horizon)
                self.sumsq[k] = np.zeros(self.horizon)
                self.count[k] = np.zeros(self.horizon)
            ok = ~np.isnan(v)
            self.sums[k][ok] += v[ok]
            self.sumsq[k][ok] += v[ok] * v[ok]
            self.count[k][ok] += 1.0
        self.trials += 1

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"slot": np.arange(self.horizon, dtype=float)}
        for k in self.sums:
            n = self.count[k]
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = np.where(n > 0, self.sums[k] / np.where(n > 0, n, 1.0),
                                np.nan)
                var = np.where(
                    n > 1,
                    np.maximum(0.0, (self.sumsq[k]
                                     - np.where(n > 0, self.sums[k] ** 2, 0.0)
                                     / np.where(n > 0, n, 1.0))
                               / np.maximum(n - 1.0, 1.0)),
                    0.0)
                std = np.where(n > 0, np.sqrt(var), np.nan)
            if k.startswith("sat_"):
                cols["p_relia_" + k[4:]] = mean
            else:
                cols[k + "_mean"] = mean
                cols[k + "_std"] = std
        return cols


# ---- flow-matching gap (cumulative virtual vs actual) ----

def match_gap(pairs, planes, network, frame_len: int) -> float:
    """Worst relative |cum nu - cum x| over (edge, lifetime) entries, with a
    one-frame capacity grace in the denominator."""
    worst = 0.0
    for (nu, x), plane in zip(pairs, planes):
        g = plane.graph
        proc = g.kind == 1
        raw = np.where(proc,
                       network.cpu_capacity[np.where(proc, g.phys, 0)],
                       network.link_capacity[np.where(proc, 0, g.phys)]
                       if network.num_edges else 0.0)
        eps = frame_len * raw / plane.rho
        rel = np.abs(nu - x) / (nu + eps[:, None])
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst


# ---- experiment driver ----

def _seed_of(master_seed: int, trial: int) -> list[int]:
    return [master_seed, trial]


def run_experiment(cfg: ScenarioConfig, out_dir: str | Path,
                   workers: int = 1, verbose: bool = False,
                   reuse: bool = False, plots: bool = True) -> dict:
    """Run the configured trial ensemble, writing per-trial trace CSVs,
    virtual-capacity CSVs, the ensemble series CSV, SVG plots, and a manifest.
    Returns the manifest dict.  With ``reuse`` an existing output directory
    whose manifest matches the config hash is returned untouched."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man_path = out / "manifest.json"
    if reuse and man_path.exists():
        man = json.loads(man_path.read_text())
        if man.get("config_hash") == cfg.config_hash:
            return man
    scn, pol, exp = cfg.to_runtime()
    xis = chain_gains(scn)
    acc = EnsembleAccumulator(exp.horizon)
    started = time.perf_counter()
    per_trial = []
    v_value = None

    def consume(trial: int, res: TrialResult) -> None:
        nonlocal v_value
        v_value = res.v_value
        write_csv(out / f"trial_{trial:03d}.csv", res.trace)
        write_caps_csv(out / f"caps_{trial:03d}.csv", res)
        acc.add(derive_series(res.trace, xis, exp.window, exp.gamma_short))
        gap_pre = match_gap(res.match_pre, res.planes_pre, scn.network,
                            pol.frame_len)
        gap_post = None
        if res.match_post is not None:
            post_net, _ = apply_outage(scn.network, scn.outage,
                                       scn.commodities)
            gap_post = match_gap(res.match_post, res.planes_post, post_net,
                                 pol.frame_len)
        per_trial.append({
            "trial": trial, "seed": _seed_of(exp.master_seed, trial),
            "wall_seconds": res.wall_seconds,
            "sanitize_worst": res.sanitize_worst,
            "resid_worst": res.resid_worst,
            "conservation_worst": max(
                abs(r["relative_residual"]) for r in res.conservation),
            "match_gap_pre": gap_pre, "match_gap_post": gap_post,
        })

    if workers <= 1:
        for trial in range(exp.trials):
            consume(trial, run_trial(scn, pol, exp.horizon,
                                     exp.master_seed, trial))
    else:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            futs = {t: pool.submit(run_trial, scn, pol, exp.horizon,
                                   exp.master_seed, t)
                    for t in range(exp.trials)}
            for trial in range(exp.trials):  # deterministic order
                consume(trial, futs[trial].result())

    cols = acc.columns()
    write_csv(out / "ensemble.csv", cols)
    manifest = {
        "config_hash": cfg.config_hash,
        "variant": pol.variant,
        "horizon": exp.horizon,
        "trials": exp.trials,
        "master_seed": exp.master_seed,
        "seed_rule": "numpy SeedSequence(master_seed, trial, commodity)",
        "window": exp.window,
        "gamma_short": exp.gamma_short,
        "recover_after": exp.recover_after,
        "p_resil": exp.p_resil,
        "xis": xis,
        "outage_at": scn.outage.at if scn.outage is not None else None,
        "v_value": v_value,
        "wall_seconds": time.perf_counter() - started,
        "trace_units": TRACE_UNITS,
        "per_trial": per_trial,
    }
    man_path.write_text(json.dumps(manifest, indent=1))
    cfg.save(out / "scenario.yaml")
    if plots:
        emit_plots(out, manifest, verbose=verbose)
    return manifest


def recompute_ensemble(out_dir: str | Path) -> dict[str, np.ndarray]:
    """Re-derive the ensemble columns from the stored per-trial CSVs using the
    same accumulation order as the streaming pass."""
    out = Path(out_dir)
    man = json.loads((out / "manifest.json").read_text())
    acc = EnsembleAccumulator(man["horizon"])
    for trial in range(man["trials"]):
        trace = read_csv(out / f"trial_{trial:03d}.csv")
        acc.add(derive_series(trace, man["xis"], man["window"],
                              man["gamma_short"]))
    return acc.columns()


def load_traces(out_dir: str | Path) -> list[dict[str, np.ndarray]]:
    out = Path(out_dir)
    man = json.loads((out / "manifest.json").read_text())
    return [read_csv(out / f"trial_{t:03d}.csv") for t in range(man["trials"])]


# ---- plotting ----

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def emit_plots(out_dir: str | Path, manifest: dict, verbose: bool = False) -> list[Path]:
    out = Path(out_dir)
    cols = read_csv(out / "ensemble.csv")
    slots = cols["slot"]
    nc = len(manifest["xis"])
    written = []

    def series_for(prefix: str) -> list[svgplot.Series]:
        ss = []
        for ci in range(nc):
            ss.append(svgplot.Series(
                name=f"commodity {ci + 1}", x=slots,
                mean=cols[f"{prefix}_c{ci}_mean"],
                std=cols[f"{prefix}_c{ci}_std"],
                color=PALETTE[ci % len(PALETTE)]))
        return ss

    def chart(path: Path, ss: list[svgplot.Series], **kw) -> None:
        if not any(np.isfinite(s.mean).any() for s in ss):
            return  # nothing finite (e.g. window longer than the horizon)
        svgplot.line_chart(path, ss, **kw)
        written.append(path)

    chart(out / "reliability_cum.svg", series_for("relia_cum"),
          title="cumulative reliability level",
          xlabel="slot", ylabel="level", ref_line=0.9)
    chart(out / "reliability_win.svg", series_for("relia_win"),
          title=f"short-term reliability (window {manifest['window']})",
          xlabel="slot", ylabel="level", ref_line=0.9)
    cost = [svgplot.Series(
        name=f"commodity {ci + 1}", x=slots,
        mean=cols[f"cost_c{ci}_mean"], std=cols[f"cost_c{ci}_std"],
        color=PALETTE[ci % len(PALETTE)]) for ci in range(nc)]
    chart(out / "cost.svg", cost, title="per-slot cost", xlabel="slot",
          ylabel="$ per slot")

    caps0 = out / "caps_000.csv"
    if caps0.exists():
        cc = read_csv(caps0)
        if len(cc["slot"]) > 1:
            ss = [svgplot.Series("virtual link total", cc["slot"],
                                 cc["vlink_total"], None, PALETTE[0]),
                  svgplot.Series("virtual cpu total", cc["slot"],
                                 cc["vcpu_total"], None, PALETTE[1])]
            chart(out / "capacity.svg", ss,
                  title="virtual capacity (trial 0)", xlabel="slot",
                  ylabel="capacity", staircase=True, split_axes=True)

    if verbose:
        tr0 = read_csv(out / "trial_000.csv")
        ss = []
        for ci in range(nc):
            ss.append(svgplot.Series(f"virtual c{ci + 1}", slots,
                                     np.cumsum(tr0[f"nu_total_c{ci}"]), None,
                                     PALETTE[ci % len(PALETTE)]))
            ss.append(svgplot.Series(f"actual c{ci + 1}", slots,
                                     np.cumsum(tr0[f"x_total_c{ci}"]), None,
                                     PALETTE[ci % len(PALETTE)], dash=True))
        chart(out / "flow_matching.svg", ss,
              title="cumulative virtual vs actual flow (trial 0)",
              xlabel="slot", ylabel="packets")
    return written


# ---- region sweep ----

def run_region(cfg: ScenarioConfig, scales: list[float], out_dir: str | Path,
               workers: int = 1, reuse: bool = True) -> Path:
    """Membership grid over post-outage arrival scales.  One ensemble per
    scale (cached by config hash), memberships recomputed from the CSVs."""
    if not scales:
        raise ConfigError("region sweep needs at least one scale")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for scale in scales:
        sub = out / f"scale_{scale:g}"
        cfgv = cfg.with_overrides(lambda_scale=scale)
        man = run_experiment(cfgv, sub, workers=workers, reuse=reuse)
        traces = load_traces(sub)
        scn, pol, exp = cfgv.to_runtime()
        xis = chain_gains(scn)
        gl = tuple(c.target_reliability for c in scn.commodities)
        spec = metrics.ReliabilitySpec(
            gamma_long=gl, gamma_short=exp.gamma_short, window=exp.window,
            recover_after=exp.recover_after, p_resil=exp.p_resil,
            num_trials=exp.trials)
        t_o = scn.outage.at if scn.outage is not None else None
        row = {"lambda_scale": scale, "gamma_short": exp.gamma_short,
               "recover_after": exp.recover_after, "p_resil": exp.p_resil}
        pre_m, pre_lv = metrics.reliability_membership(traces, xis, gl, t_o,
                                                       "pre")
        row["member_reliability_pre"] = float(pre_m)
        if t_o is not None:
            post_m, post_lv = metrics.reliability_membership(traces, xis, gl,
                                                             t_o, "post")
            res_m, res_info = metrics.resilience_membership(traces, xis, t_o,
                                                            spec)
            row["member_reliability_post"] = float(post_m)
            row["member_resilience"] = float(res_m)
            for ci in range(len(xis)):
                row[f"level_post_c{ci}"] = post_lv[ci]
                row[f"p_hat_c{ci}"] = res_info["p_at_recover"][ci]
                row[f"worst_p_hat_c{ci}"] = res_info["worst_after_recover"][ci]
        for ci in range(len(xis)):
            row[f"level_pre_c{ci}"] = pre_lv[ci]
        rows.append(row)
    names = list(rows[0])
    path = out / "region.csv"
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(FLOAT_FMT % row[k] for k in names) + "\n")
    return path


# ---- variant comparison ----

def run_compare(cfg: ScenarioConfig, variants: list[str], out_dir: str | Path,
                workers: int = 1, reuse: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ens = {}
    nc = None
    for variant in variants:
        sub = out / f"variant_{variant}"
        man = run_experiment(cfg.with_overrides(variant=variant), sub,
                             workers=workers, reuse=reuse)
        ens[variant] = read_csv(sub / "ensemble.csv")
        nc = len(man["xis"])
    written = []
    dash = {v: i > 0 for i, v in enumerate(variants)}
    for ci in range(nc):
        ss = []
        for vi, variant in enumerate(variants):
            cols = ens[variant]
            ss.append(svgplot.Series(
                name=variant, x=cols["slot"],
                mean=cols[f"relia_cum_c{ci}_mean"],
                std=cols[f"relia_cum_c{ci}_std"],
                color=PALETTE[vi % len(PALETTE)], dash=dash[variant]))
        p = out / f"compare_reliability_c{ci}.svg"
        svgplot.line_chart(p, ss,
                           title=f"cumulative reliability, commodity {ci + 1}",
                           xlabel="slot", ylabel="level", ref_line=0.9)
        written.append(p)
    ss = []
    for vi, variant in enumerate(variants):
        cols = ens[variant]
        total = np.zeros_like(cols["slot"])
        for ci in range(nc):
            total = total + cols[f"cost_c{ci}_mean"]
        ss.append(svgplot.Series(name=variant, x=cols["slot"], mean=total,
                                 std=None, color=PALETTE[vi % len(PALETTE)],
                                 dash=dash[variant]))
    p = out / "compare_cost.svg"
    svgplot.line_chart(p, ss, title="total per-slot cost", xlabel="slot",
                       ylabel="$ per slot")
    written.append(p)
    return written
