"""Exogenous arrivals (lifetime-tagged Poisson) and the fading-memory average.

Arrival arrays are per commodity, shaped (num physical nodes, max_lifetime+1);
column l holds packets that enter with l slots of life left.  Arrivals are
integer counts while everything downstream is fluid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import ConfigError


@dataclass
class ArrivalProcess:
    """Per-commodity mean rates before/after the outage switch."""
    rates: list[np.ndarray]        # (nodes, L+1) packets/slot
    post_rates: list[np.ndarray]   # same shape; equals rates when no outage
    outage_at: int | None = None

    def __post_init__(self):
        for r, p in zip(self.rates, self.post_rates):
            if (r < 0).any() or (p < 0).any():
                raise ConfigError("arrival rates must be >= 0")
            if (p > r + 1e-12).any():
                warnings.warn("post-outage arrival rate exceeds pre-outage rate")

    def mean_at(self, c: int, t: int) -> np.ndarray:
        if self.outage_at is not None and t >= self.outage_at:
            return self.post_rates[c]
        return self.rates[c]


def commodity_streams(master_seed: int, trial: int, num_commodities: int) -> list[np.random.Generator]:
    """One independent stream per (trial, commodity); adding commodities or
    trials never perturbs existing streams."""
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(trial, c)))
        for c in range(num_commodities)
    ]


def sample_arrivals(process: ArrivalProcess, t: int,
                    streams: list[np.random.Generator]) -> list[np.ndarray]:
    out = []
    for c, rng in enumerate(streams):
        lam = process.mean_at(c, t)
        a = np.zeros_like(lam)
        nz = lam > 0
        if nz.any():
            a[nz] = rng.poisson(lam[nz])
        out.append(a)
    return out


@dataclass
class FadingAverage:
    """Empirical arrival mean that weights roughly the last ``memory_span`` slots."""
    memory_span: int
    value: np.ndarray   # same shape as one commodity's arrival array

    def __post_init__(self):
        if self.memory_span < 1:
            raise ConfigError("memory span must be >= 1")

    def update(self, sample: np.ndarray, t: int) -> None:
        if t < self.memory_span:
            self.value *= t / (t + 1)
            self.value += sample / (t + 1)
        else:
            self.value *= (self.memory_span - 1) / self.memory_span
            self.value += sample / self.memory_span


def update_fading_average(avg: FadingAverage, sample: np.ndarray, t: int) -> FadingAverage:
    avg.update(sample, t)
    return avg
