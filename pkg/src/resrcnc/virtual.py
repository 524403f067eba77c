"""Relaxed control plane.

Virtual queues turn the reliability target and the lifetime-causality
constraints into rate-stability conditions; a drift-plus-penalty weight is
computed per (commodity, layered edge, lifetime) and each physical resource is
granted in full to its best strictly-positive candidate (max-weight).  Virtual
flows ignore actual backlog on purpose: the flow matcher reconciles them with
reality afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import LayeredGraph, PhysicalNetwork, PROCESS, TRANSMIT
from .queueing import QueueOps


@dataclass
class PenaltyConfig:
    """Cost weight V = v_raw * C_avg / e_avg (capacity and cost averaged over
    every layered edge of every commodity)."""
    v_raw: float
    c_avg: float
    e_avg: float

    @property
    def v(self) -> float:
        return self.v_raw * self.c_avg / self.e_avg


@dataclass
class CommodityPlane:
    """Per-commodity constants shared by the virtual controller and matcher."""
    graph: LayeredGraph
    dest: int
    max_lifetime: int
    arrival_lifetimes: tuple[int, ...]
    gamma_long: float
    scale_incoming: bool = True
    ops: QueueOps = field(init=False)
    in_virtual: sp.csr_matrix = field(init=False)  # always gain-scaled
    rho: np.ndarray = field(init=False)       # resource units per packet sent
    beta: np.ndarray = field(init=False)      # per-node mass weight 1/gain-so-far
    xi_final: float = field(init=False)
    edges_into_dest: np.ndarray = field(init=False)
    source_mask: np.ndarray = field(init=False)   # layered rows receiving arrivals

    def __post_init__(self):
        g = self.graph
        self.ops = QueueOps(g, self.dest, self.scale_incoming)
        if self.scale_incoming:
            self.in_virtual = self.ops.in_mat
        else:
            e = np.arange(g.num_edges)
            self.in_virtual = sp.csr_matrix((g.gain, (g.head, e)),
                                            shape=(g.num_nodes, g.num_edges))
        self.rho = np.where(g.kind == PROCESS, g.work, 1.0)
        self.beta = g.stage_weights()
        self.xi_final = g.service.cumulative_gain(g.num_stages)
        self.edges_into_dest = np.flatnonzero(g.head == self.dest)
        self.source_mask = g.node_stage == 1

    @property
    def in_gain(self) -> np.ndarray:
        return self.ops.in_gain


@dataclass
class VirtualQueueState:
    reliability: float
    causality: np.ndarray     # (nodes, L+1); destination row pinned at 0

    @classmethod
    def zeros(cls, plane: CommodityPlane) -> "VirtualQueueState":
        return cls(0.0, np.zeros((plane.graph.num_nodes, plane.max_lifetime + 1)))

    def total(self) -> float:
        return self.reliability + float(self.causality.sum())


def _suffix_sum(a: np.ndarray) -> np.ndarray:
    """out[:, l] = sum of a[:, l:] along lifetimes."""
    return np.cumsum(a[:, ::-1], axis=1)[:, ::-1]


def update_virtual_queues(plane: CommodityPlane, state: VirtualQueueState,
                          nu: np.ndarray, arrivals_phys: np.ndarray) -> VirtualQueueState:
    """One-slot update from virtual flows ``nu`` (edges, L+1) and this slot's
    sampled arrivals (physical nodes, L+1)."""
    g = plane.graph
    into_dest = float((g.gain[plane.edges_into_dest, None]
                       * nu[plane.edges_into_dest, 1:]).sum())
    offered = float(arrivals_phys[:, list(plane.arrival_lifetimes)].sum())
    reliability = max(0.0, state.reliability - into_dest
                      + plane.xi_final * plane.gamma_long * offered)

    arr = np.zeros_like(state.causality)
    arr[plane.source_mask] = arrivals_phys
    out_suf = _suffix_sum(plane.ops.out_mat @ nu)
    in_by_node = plane.in_virtual @ nu
    in_suf = np.zeros_like(in_by_node)
    in_suf[:, :-1] = _suffix_sum(in_by_node)[:, 1:]
    causality = np.maximum(0.0, state.causality - _suffix_sum(arr) + out_suf - in_suf)
    causality[plane.dest, :] = 0.0
    causality[:, 0] = 0.0
    return VirtualQueueState(reliability, causality)


def causality_prefix(state: VirtualQueueState) -> np.ndarray:
    """prefix[:, l] = sum of causality queues at lifetimes 1..l (column 0 = 0)."""
    out = np.cumsum(state.causality, axis=1)
    out[:, 0] = 0.0
    return out


def compute_weights(plane: CommodityPlane, state: VirtualQueueState,
                    v: float) -> np.ndarray:
    """Drift-plus-penalty weight per (layered edge, lifetime); column 0 unused.
    Edges leaving the destination copy carry -inf (packets are consumed there)."""
    g = plane.graph
    prefix = causality_prefix(state)
    L = plane.max_lifetime
    w = np.full((g.num_edges, L + 1), -np.inf)
    head_term = prefix[g.head, :L] / plane.rho[:, None] * (g.gain * plane.beta[g.head])[:, None]
    to_dest = g.head == plane.dest
    head_term[to_dest] = (g.gain[to_dest] * plane.beta[plane.dest] / plane.rho[to_dest]
                          )[:, None] * state.reliability
    w[:, 1:] = (-v * g.price[:, None]
                - (plane.beta[g.tail] / plane.rho)[:, None] * prefix[g.tail, 1:]
                + head_term)
    w[g.tail == plane.dest, :] = -np.inf
    w[:, 0] = -np.inf
    return w


@dataclass
class ResourceIndex:
    """Flattened candidate lists per physical resource, ordered (commodity,
    lifetime, stage) so a first-maximum argmax realizes the tie-break rule."""
    num_links: int
    num_nodes: int
    link_cands: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    node_cands: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    offsets: np.ndarray

    @classmethod
    def build(cls, network: PhysicalNetwork, planes: list[CommodityPlane]) -> "ResourceIndex":
        widths = [p.graph.num_edges * (p.max_lifetime + 1) for p in planes]
        offsets = np.concatenate([[0], np.cumsum(widths)])

        def gather(kind: int, phys: int):
            flat, cc, ee, ll = [], [], [], []
            for c, p in enumerate(planes):
                g = p.graph
                edges = np.flatnonzero((g.kind == kind) & (g.phys == phys)
                                       & (g.tail != p.dest))
                edges = edges[np.argsort(g.stage[edges], kind="stable")]
                if edges.size == 0:
                    continue
                L = p.max_lifetime
                ls, es = np.meshgrid(np.arange(1, L + 1), edges, indexing="ij")
                flat.append(offsets[c] + es.ravel() * (L + 1) + ls.ravel())
                cc.append(np.full(es.size, c))
                ee.append(es.ravel())
                ll.append(ls.ravel())
            if not flat:
                z = np.zeros(0, dtype=np.int64)
                return z, z, z, z
            return (np.concatenate(flat), np.concatenate(cc),
                    np.concatenate(ee), np.concatenate(ll))

        link_cands = [gather(TRANSMIT, e) for e in range(network.num_edges)]
        node_cands = [gather(PROCESS, v) for v in range(network.num_nodes)]
        return cls(network.num_edges, network.num_nodes, link_cands, node_cands, offsets)


def max_weight_assign(index: ResourceIndex, planes: list[CommodityPlane],
                      weights: list[np.ndarray], link_caps: np.ndarray,
                      cpu_caps: np.ndarray) -> list[np.ndarray]:
    """Grant each physical resource's virtual capacity to its best positive
    candidate; returns per-commodity (edges, L+1) virtual flows."""
    flat = np.concatenate([w.ravel() for w in weights])
    nus = [np.zeros_like(w) for w in weights]
    for groups, caps, per_rho in ((index.link_cands, link_caps, False),
                                  (index.node_cands, cpu_caps, True)):
        for r, (idx, cc, ee, ll) in enumerate(groups):
            if idx.size == 0 or caps[r] <= 0.0:
                continue
            vals = flat[idx]
            k = int(np.argmax(vals))
            if vals[k] <= 0.0:
                continue
            c, e, l = int(cc[k]), int(ee[k]), int(ll[k])
            amount = caps[r] / planes[c].rho[e] if per_rho else caps[r]
            nus[c][e, l] = amount
    return nus


def choose_v(network: PhysicalNetwork, planes: list[CommodityPlane],
             v_raw: float) -> PenaltyConfig:
    """Remark-style scale heuristic: V = v_raw * mean(C/rho) / mean(e*rho/beta)."""
    cap_terms, cost_terms = [], []
    for p in planes:
        g = p.graph
        trans = g.kind == TRANSMIT
        res_cap = np.empty(g.num_edges)
        res_cap[trans] = network.link_capacity[g.phys[trans]]
        res_cap[~trans] = network.cpu_capacity[g.phys[~trans]]
        cap_terms.append(res_cap / p.rho)
        cost_terms.append(g.price * p.rho / p.beta[g.tail])
    c_avg = float(np.concatenate(cap_terms).mean())
    e_avg = float(np.concatenate(cost_terms).mean())
    return PenaltyConfig(v_raw, c_avg, e_avg)
