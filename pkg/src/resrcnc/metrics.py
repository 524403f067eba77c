"""Trace analytics: timely throughput, reliability levels, satisfaction
events, Monte Carlo reliability estimates, and region membership.

All window quantities are computed from one shared prefix sum per series so
that window additivity holds exactly in floating point.  Zero-arrival windows
make the reliability level undefined (NaN, never 0 or 1) while the
satisfaction event is vacuously true.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConfigError


@dataclass(frozen=True)
class ReliabilitySpec:
    gamma_long: tuple[float, ...]     # per commodity
    gamma_short: float
    window: int                       # T_win
    recover_after: int                # T_recover
    p_resil: float
    num_trials: int

    def __post_init__(self):
        if not all(0.0 <= g <= 1.0 for g in self.gamma_long):
            raise ConfigError("gamma_long outside [0,1]")
        if not 0.0 <= self.gamma_short <= 1.0:
            raise ConfigError("gamma_short outside [0,1]")
        if self.window < 1 or self.num_trials < 1:
            raise ConfigError("window and trial count must be >= 1")
        if not 0.0 <= self.p_resil <= 1.0:
            raise ConfigError("p_resil outside [0,1]")


def _window_sum(series: np.ndarray, start: int, length: int) -> float:
    if start < 0 or length < 1 or start + length > len(series):
        raise ConfigError(f"window [{start}, {start + length}) outside horizon")
    prefix = np.cumsum(series)
    hi = prefix[start + length - 1]
    return float(hi - (prefix[start - 1] if start > 0 else 0.0))


def short_term_throughput(delivered: np.ndarray, t: int, window: int) -> float:
    """Mean per-slot timely deliveries over [t, t+window)."""
    return _window_sum(delivered, t, window) / window


def reliability_level(delivered: np.ndarray, arrivals: np.ndarray, xi: float,
                      t: int, window: int) -> float:
    """Delivered fraction of the gain-scaled offered load; NaN when the window
    saw no arrivals."""
    a = _window_sum(arrivals, t, window)
    if a == 0.0:
        return float("nan")
    return _window_sum(delivered, t, window) / (xi * a)


def cumulative_level_series(delivered: np.ndarray, arrivals: np.ndarray,
                            xi: float) -> np.ndarray:
    """Long-term reliability plot series: cumulative averages from slot 0."""
    num = np.cumsum(delivered)
    den = xi * np.cumsum(arrivals)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return out


def trailing_level_series(delivered: np.ndarray, arrivals: np.ndarray,
                          xi: float, window: int) -> np.ndarray:
    """Short-term reliability level at each t over [t-window+1, t]; NaN until
    enough history exists or when the window saw no arrivals."""
    dsum = np.cumsum(delivered)
    asum = np.cumsum(arrivals)
    out = np.full(len(delivered), np.nan)
    if len(delivered) < window:
        return out
    dw = dsum[window - 1:].copy()
    dw[1:] -= dsum[:-window]
    aw = asum[window - 1:].copy()
    aw[1:] -= asum[:-window]
    with np.errstate(invalid="ignore", divide="ignore"):
        out[window - 1:] = np.where(aw > 0, dw / (xi * np.where(aw > 0, aw, 1.0)),
                                    np.nan)
    return out


def satisfaction_event(delivered: np.ndarray, arrivals: np.ndarray, xi: float,
                       t: int, gamma_short: float, window: int) -> bool:
    """Trailing-window check: deliveries cover gamma_short of the scaled
    offered load.  Empty offered load satisfies vacuously."""
    if t < window - 1:
        raise ConfigError(f"satisfaction event needs {window} slots of history")
    d = _window_sum(delivered, t - window + 1, window)
    a = _window_sum(arrivals, t - window + 1, window)
    return d >= gamma_short * xi * a


def estimate_p_relia(traces: list[dict], commodity: int, t: int, xi: float,
                     spec: ReliabilitySpec) -> tuple[float, float]:
    """Sample proportion of trials whose satisfaction event holds at t, with
    the sample standard deviation of the indicators for the shaded band."""
    flags = np.array([
        satisfaction_event(tr[f"delivered_c{commodity}"],
                           tr[f"arrivals_c{commodity}"], xi, t,
                           spec.gamma_short, spec.window)
        for tr in traces], dtype=float)
    sigma = float(flags.std(ddof=1)) if len(flags) > 1 else 0.0
    return float(flags.mean()), sigma


def resilience_membership(traces: list[dict], xis: list[float], outage_at: int,
                          spec: ReliabilitySpec) -> tuple[bool, dict]:
    """Member iff every commodity's satisfaction proportion at
    t_o + recover_after reaches p_resil.  Also reports the stricter
    worst-proportion-after-recovery diagnostic."""
    t_rec = outage_at + spec.recover_after
    horizon = len(next(iter(traces[0].values())))
    if t_rec >= horizon:
        raise ConfigError("horizon too short for the recovery check")
    at_recover, worst_after = {}, {}
    for ci, xi in enumerate(xis):
        p, _ = estimate_p_relia(traces, ci, t_rec, xi, spec)
        at_recover[ci] = p
        worst = p
        for t in range(t_rec, horizon, max(1, spec.window // 2)):
            q, _ = estimate_p_relia(traces, ci, t, xi, spec)
            worst = min(worst, q)
        worst_after[ci] = worst
    member = min(at_recover.values()) >= spec.p_resil
    return member, {"p_at_recover": at_recover, "worst_after_recover": worst_after}


def reliability_membership(traces: list[dict], xis: list[float],
                           gamma_long: tuple[float, ...], outage_at: int | None,
                           phase: str) -> tuple[bool, dict]:
    """Phase-mean reliability level (sample mean across trials of each trial's
    whole-phase level) against the long-term target, per commodity."""
    horizon = len(next(iter(traces[0].values())))
    if phase == "pre":
        lo, hi = 0, outage_at if outage_at is not None else horizon
    elif phase == "post":
        if outage_at is None:
            raise ConfigError("post phase needs an outage slot")
        lo, hi = outage_at, horizon
    else:
        raise ConfigError(f"unknown phase {phase!r}")
    if hi <= lo:
        raise ConfigError("empty phase window")
    levels = {}
    for ci, xi in enumerate(xis):
        per_trial = [reliability_level(tr[f"delivered_c{ci}"],
                                       tr[f"arrivals_c{ci}"], xi, lo, hi - lo)
                     for tr in traces]
        levels[ci] = float(np.nanmean(per_trial))
    member = all(levels[ci] >= gamma_long[ci] for ci in range(len(xis)))
    return member, levels


def cost_metrics(cost: np.ndarray, t: int, window: int) -> float:
    """Window-mean cost; pair with cumulative_cost_series for long-term plots."""
    return _window_sum(cost, t, window) / window


def cumulative_cost_series(cost: np.ndarray) -> np.ndarray:
    return np.cumsum(cost) / np.arange(1, len(cost) + 1)
