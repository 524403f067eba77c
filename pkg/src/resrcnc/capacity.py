"""Frame-wise virtual capacity iteration and the outage-time bookkeeping.

Virtual capacities start at the actual capacities and shrink at frame
boundaries wherever granted virtual flow persistently exceeded matchable
actual flow during the frame (thresholded, so random per-slot jitter does not
erode capacity).  The subtracted credit term forgives mismatch that upstream
reductions caused.  At an outage the adaptive variant resets virtual to
actual and re-targets the frame averages onto surviving resources; the
baseline variant instead keeps scaling reductions by a fixed factor every
frame with no outage handling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LayeredGraph, PhysicalNetwork, PROCESS, TRANSMIT
from .virtual import CommodityPlane


@dataclass
class FrameState:
    """Per-trial adaptation state; edge-indexed arrays follow the current era's
    layered graphs."""
    frame_len: int
    r_min_tr: float
    r_min_pr: float
    floor_frac: float
    link_cap: np.ndarray          # virtual, packets/slot per physical link
    cpu_cap: np.ndarray           # virtual, CPU per node
    nu_avg: list[np.ndarray]      # per commodity (edges, L+1)
    x_avg: list[np.ndarray]

    @classmethod
    def fresh(cls, network: PhysicalNetwork, planes: list[CommodityPlane],
              frame_len: int, r_min_tr: float, r_min_pr: float,
              floor_frac: float = 0.01) -> "FrameState":
        return cls(
            frame_len=frame_len, r_min_tr=r_min_tr, r_min_pr=r_min_pr,
            floor_frac=floor_frac,
            link_cap=network.link_capacity.astype(float).copy(),
            cpu_cap=network.cpu_capacity.astype(float).copy(),
            nu_avg=[np.zeros((p.graph.num_edges, p.max_lifetime + 1)) for p in planes],
            x_avg=[np.zeros((p.graph.num_edges, p.max_lifetime + 1)) for p in planes],
        )


def update_frame_averages(state: FrameState, nus: list[np.ndarray],
                          xs: list[np.ndarray], t: int) -> None:
    """Running in-frame mean; the first slot of a frame restarts it."""
    m = t % state.frame_len
    for avg, cur in zip(state.nu_avg + state.x_avg, nus + xs):
        if m == 0:
            avg[...] = cur
        else:
            avg *= m / (m + 1)
            avg += cur / (m + 1)


def compute_reductions(state: FrameState, planes: list[CommodityPlane],
                       num_links: int, num_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-resource reduction: lifetime-clamped flow mismatch, minus the share
    of upstream mismatch that already explains it."""
    eps_link = np.zeros(num_links)
    eps_cpu = np.zeros(num_nodes)
    for plane, nu_avg, x_avg in zip(planes, state.nu_avg, state.x_avg):
        g = plane.graph
        r_edge = np.maximum(0.0, nu_avg - x_avg)[:, 1:].sum(axis=1)
        nu_sum = nu_avg[:, 1:].sum(axis=1)
        r_into = np.zeros(g.num_nodes)
        np.add.at(r_into, g.head, r_edge)
        nu_out = np.zeros(g.num_nodes)
        np.add.at(nu_out, g.tail, nu_sum)
        with np.errstate(invalid="ignore", divide="ignore"):
            share = np.where(nu_out[g.tail] > 0, nu_sum / nu_out[g.tail], 0.0)
        contrib = plane.rho * (r_edge - r_into[g.tail] * share)
        trans = g.kind == TRANSMIT
        np.add.at(eps_link, g.phys[trans], contrib[trans])
        np.add.at(eps_cpu, g.phys[~trans], contrib[~trans])
    return eps_link, eps_cpu


def apply_capacity_update(state: FrameState, network: PhysicalNetwork,
                          eps_link: np.ndarray, eps_cpu: np.ndarray,
                          kappa: float | None = None) -> None:
    """Thresholded update (default) or the baseline's ungated kappa-scaled one.
    Virtual capacities stay within [floor_frac * actual, actual]."""
    if kappa is None:
        state.link_cap -= np.where(eps_link > state.r_min_tr, eps_link, 0.0)
        state.cpu_cap -= np.where(eps_cpu > state.r_min_pr, eps_cpu, 0.0)
    else:
        state.link_cap -= kappa * eps_link
        state.cpu_cap -= kappa * eps_cpu
    np.clip(state.link_cap, state.floor_frac * network.link_capacity,
            network.link_capacity, out=state.link_cap)
    dead = ~network.alive
    np.clip(state.cpu_cap, state.floor_frac * network.cpu_capacity,
            network.cpu_capacity, out=state.cpu_cap)
    state.cpu_cap[dead] = 0.0


def outage_reset(state: FrameState, network: PhysicalNetwork) -> None:
    """Virtual capacities jump back to the (post-outage) actual capacities."""
    state.link_cap = network.link_capacity.astype(float).copy()
    state.cpu_cap = network.cpu_capacity.astype(float).copy()
    state.cpu_cap[~network.alive] = 0.0


def redistribute_frame_averages(state: FrameState, planes: list[CommodityPlane],
                                dead_nodes: set[int],
                                dead_links: set[int]) -> None:
    """Move each failed resource's frame-average flow onto surviving resources
    of the same (commodity, kind, stage, lifetime), proportionally to their
    current averages (uniformly when all surviving averages vanish)."""
    for c, plane in enumerate(planes):
        g = plane.graph
        failed = np.where(
            g.kind == TRANSMIT,
            np.isin(g.phys, list(dead_links) or [-1]),
            np.isin(g.phys, list(dead_nodes) or [-1]))
        for avg in (state.nu_avg[c], state.x_avg[c]):
            for kind in (TRANSMIT, PROCESS):
                for stage in range(1, g.num_stages + 1):
                    sel = (g.kind == kind) & (g.stage == stage)
                    lost = sel & failed
                    kept = sel & ~failed
                    if not lost.any() or not kept.any():
                        continue
                    moved = avg[lost].sum(axis=0)
                    base = avg[kept]
                    denom = base.sum(axis=0)
                    share = np.where(denom > 0, base / np.where(denom > 0, denom, 1.0),
                                     1.0 / kept.sum())
                    avg[kept] += share * moved
                    avg[lost] = 0.0


def remap_edge_values(old: LayeredGraph, new: LayeredGraph, link_map: np.ndarray,
                      values: np.ndarray) -> np.ndarray:
    """Carry per-edge state across an outage rebuild; failed edges drop out."""
    index = {}
    for e in range(new.num_edges):
        index[(int(new.kind[e]), int(new.stage[e]), int(new.phys[e]))] = e
    out = np.zeros((new.num_edges,) + values.shape[1:])
    for e in range(old.num_edges):
        phys = int(old.phys[e])
        if old.kind[e] == TRANSMIT:
            phys = int(link_map[phys])
            if phys < 0:
                continue
        key = (int(old.kind[e]), int(old.stage[e]), phys)
        if key in index:
            out[index[key]] = values[e]
    return out
