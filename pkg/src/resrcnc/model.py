"""Physical network, service chains, commodities, and per-service layered graphs.

Layer m of a layered graph holds packets that have completed the first m-1
functions of a service chain.  Intra-layer edges are transmission (one slot,
one packet of link budget per packet), inter-layer edges are processing (one
slot, ``work`` CPU per input packet, ``gain`` output packets per input packet).
All rates are canonical packets/slot (CPU for processing budgets); conversion
from config units happens once at load time via UnitSystem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TRANSMIT = 0
PROCESS = 1


class ConfigError(ValueError):
    """Invalid scenario definition (CLI exit code 2)."""


class SimulationError(RuntimeError):
    """Invariant breach during a run (CLI exit code 3)."""


# ---- units ----

@dataclass(frozen=True)
class UnitSystem:
    packet_bits: float = 1000.0
    slot_seconds: float = 0.014

    def __post_init__(self):
        if self.packet_bits <= 0 or self.slot_seconds <= 0:
            raise ConfigError("packet size and slot duration must be positive")

    def gbps_to_pps(self, gbps: float) -> float:
        return gbps * 1e9 * self.slot_seconds / self.packet_bits

    def pps_to_gbps(self, pps: float) -> float:
        return pps * self.packet_bits / (1e9 * self.slot_seconds)

    def workload_to_cpu_per_pps(self, cpu_per_mbps: float) -> float:
        return cpu_per_mbps * self.packet_bits / (1e6 * self.slot_seconds)

    def price_per_gbps_to_per_packet(self, price: float) -> float:
        return price * self.packet_bits / (1e9 * self.slot_seconds)


_CONVERSIONS = {
    ("gbps", "pps"): UnitSystem.gbps_to_pps,
    ("pps", "gbps"): UnitSystem.pps_to_gbps,
    ("cpu/mbps", "cpu/pps"): UnitSystem.workload_to_cpu_per_pps,
    ("$/gbps", "$/packet"): UnitSystem.price_per_gbps_to_per_packet,
}


def convert_rate(units: UnitSystem, value: float, from_unit: str, to_unit: str) -> float:
    if from_unit == to_unit:
        return value
    try:
        fn = _CONVERSIONS[(from_unit, to_unit)]
    except KeyError:
        raise ConfigError(f"no conversion from {from_unit!r} to {to_unit!r}") from None
    return fn(units, value)


# ---- physical network ----

@dataclass(frozen=True, eq=False)
class PhysicalNetwork:
    """Directed graph with per-link transmission budget and per-node CPU budget.

    Node ids are 0-based and contiguous.  Failed nodes keep their id (so state
    arrays stay aligned across an outage) but lose all capacity and edges.
    """
    num_nodes: int
    edges: np.ndarray            # (E, 2) int, directed (tail, head)
    link_capacity: np.ndarray    # packets/slot
    link_price: np.ndarray       # $ per packet
    cpu_capacity: np.ndarray     # CPU per node
    cpu_price: np.ndarray        # $ per CPU-slot
    alive: np.ndarray = None     # bool per node

    def __post_init__(self):
        if self.alive is None:
            object.__setattr__(self, "alive", np.ones(self.num_nodes, dtype=bool))
        e = self.edges
        if e.ndim != 2 or (len(e) and e.shape[1] != 2):
            raise ConfigError("edges must be (E, 2)")
        if len(e):
            if e.min() < 0 or e.max() >= self.num_nodes:
                raise ConfigError("edge endpoint outside node set")
            if (e[:, 0] == e[:, 1]).any():
                raise ConfigError("self-loops are not allowed")
        if (self.link_capacity <= 0).any() or (self.cpu_capacity[self.alive] < 0).any():
            raise ConfigError("capacities must be positive")
        if (self.link_price < 0).any() or (self.cpu_price < 0).any():
            raise ConfigError("prices must be non-negative")

    @property
    def num_edges(self) -> int:
        return len(self.edges)


# ---- services and commodities ----

@dataclass(frozen=True)
class ServiceChain:
    """Ordered function chain; ``gains[m]``/``work[m]`` describe function m+1."""
    gains: tuple[float, ...]   # output packets per input packet
    work: tuple[float, ...]    # CPU per unit input flow (packets/slot)

    def __post_init__(self):
        if len(self.gains) != len(self.work):
            raise ConfigError("one workload per scaling factor required")
        if any(g <= 0 for g in self.gains) or any(w <= 0 for w in self.work):
            raise ConfigError("scaling factors and workloads must be positive")

    @property
    def num_stages(self) -> int:
        return len(self.gains) + 1

    def cumulative_gain(self, stage: int) -> float:
        """Packets at ``stage`` produced per source packet (empty product = 1)."""
        if not 1 <= stage <= self.num_stages:
            raise ConfigError(f"stage {stage} outside 1..{self.num_stages}")
        return math.prod(self.gains[: stage - 1])


@dataclass(frozen=True)
class Commodity:
    service: int               # index into the scenario's service list
    source: int                # physical node id
    destination: int
    arrival_lifetimes: tuple[int, ...]   # lifetimes carried by fresh packets
    target_reliability: float            # long-term delivered fraction

    def __post_init__(self):
        if self.source == self.destination:
            raise ConfigError("source equals destination")
        if not self.arrival_lifetimes or min(self.arrival_lifetimes) < 1:
            raise ConfigError("arrival lifetimes must be >= 1")
        if not 0.0 <= self.target_reliability <= 1.0:
            raise ConfigError("target reliability must lie in [0, 1]")

    @property
    def max_lifetime(self) -> int:
        return max(self.arrival_lifetimes)


# ---- layered graph ----

@dataclass(frozen=True, eq=False)
class LayeredGraph:
    """Per-service expansion.  Node id = phys * num_stages + (stage - 1), so ids
    order by (physical node asc, stage asc) — downstream tie-breaking relies on
    this.  Edge order: all transmission copies by (stage, physical link), then
    all processing edges by (stage, physical node)."""
    service: ServiceChain
    num_phys_nodes: int
    num_stages: int
    tail: np.ndarray       # (E,) layered node ids
    head: np.ndarray
    kind: np.ndarray       # TRANSMIT | PROCESS
    phys: np.ndarray       # physical link id (transmission) or node id (processing)
    stage: np.ndarray      # stage of the tail node
    gain: np.ndarray       # packets out per packet in
    work: np.ndarray       # resource units per packet (1 for transmission)
    price: np.ndarray      # $ per resource unit
    node_phys: np.ndarray  # (N,) physical node of each layered node
    node_stage: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.num_phys_nodes * self.num_stages

    @property
    def num_edges(self) -> int:
        return len(self.tail)

    def node_id(self, phys: int, stage: int) -> int:
        if not 1 <= stage <= self.num_stages:
            raise ConfigError(f"stage {stage} outside 1..{self.num_stages}")
        return phys * self.num_stages + (stage - 1)

    def out_lists(self) -> list[np.ndarray]:
        out = [[] for _ in range(self.num_nodes)]
        for e, t in enumerate(self.tail):
            out[t].append(e)
        return [np.asarray(v, dtype=np.int64) for v in out]

    def in_lists(self) -> list[np.ndarray]:
        inc = [[] for _ in range(self.num_nodes)]
        for e, h in enumerate(self.head):
            inc[h].append(e)
        return [np.asarray(v, dtype=np.int64) for v in inc]

    def stage_weights(self) -> np.ndarray:
        """Per layered node: 1 / cumulative gain at its stage (source-packet units)."""
        per_stage = np.array([1.0 / self.service.cumulative_gain(m)
                              for m in range(1, self.num_stages + 1)])
        return per_stage[self.node_stage - 1]


def build_layered_graph(network: PhysicalNetwork, service: ServiceChain) -> LayeredGraph:
    m_stages = service.num_stages
    nv, ne = network.num_nodes, network.num_edges
    tails, heads, kinds, phys, stages = [], [], [], [], []
    gains, works, prices = [], [], []

    def nid(p, s):
        return p * m_stages + (s - 1)

    for s in range(1, m_stages + 1):
        for li, (i, j) in enumerate(network.edges):
            tails.append(nid(i, s))
            heads.append(nid(j, s))
            kinds.append(TRANSMIT)
            phys.append(li)
            stages.append(s)
            gains.append(1.0)
            works.append(1.0)
            prices.append(network.link_price[li])
    for s in range(1, m_stages):
        for i in range(nv):
            if not network.alive[i]:
                continue
            tails.append(nid(i, s))
            heads.append(nid(i, s + 1))
            kinds.append(PROCESS)
            phys.append(i)
            stages.append(s)
            gains.append(service.gains[s - 1])
            works.append(service.work[s - 1])
            prices.append(network.cpu_price[i])

    n_nodes = nv * m_stages
    node_phys = np.arange(n_nodes) // m_stages
    node_stage = np.arange(n_nodes) % m_stages + 1
    return LayeredGraph(
        service=service,
        num_phys_nodes=nv,
        num_stages=m_stages,
        tail=np.asarray(tails, dtype=np.int64),
        head=np.asarray(heads, dtype=np.int64),
        kind=np.asarray(kinds, dtype=np.int8),
        phys=np.asarray(phys, dtype=np.int64),
        stage=np.asarray(stages, dtype=np.int64),
        gain=np.asarray(gains, dtype=np.float64),
        work=np.asarray(works, dtype=np.float64),
        price=np.asarray(prices, dtype=np.float64),
        node_phys=node_phys,
        node_stage=node_stage,
    )


def beta_weight(graph: LayeredGraph, layered_node: int) -> float:
    if not 0 <= layered_node < graph.num_nodes:
        raise ConfigError("layered node outside graph")
    return float(graph.stage_weights()[layered_node])


# ---- outage ----

@dataclass(frozen=True)
class OutageSpec:
    at: int                                  # slot index
    failed_nodes: tuple[int, ...] = ()
    failed_links: tuple[tuple[int, int], ...] = ()
    rate_scale: float = 1.0                  # post-outage arrival-rate multiplier

    def __post_init__(self):
        if self.at < 0:
            raise ConfigError("outage slot must be >= 0")
        if self.rate_scale < 0:
            raise ConfigError("post-outage rate scale must be >= 0")


def apply_outage(network: PhysicalNetwork, spec: OutageSpec,
                 commodities: tuple[Commodity, ...] = ()) -> tuple[PhysicalNetwork, np.ndarray]:
    """Remove failed nodes/links.  Node ids are preserved (dead nodes stay as
    zero-capacity islands); surviving links are re-indexed.  Returns the new
    network and a map old link id -> new link id (-1 if removed)."""
    failed_nodes = set(spec.failed_nodes)
    for n in failed_nodes:
        if not 0 <= n < network.num_nodes:
            raise ConfigError(f"failed node {n} outside network")
    for c in commodities:
        if c.source in failed_nodes or c.destination in failed_nodes:
            raise ConfigError("outage fails a commodity endpoint")
    failed_links = {tuple(l) for l in spec.failed_links}
    keep = np.ones(network.num_edges, dtype=bool)
    for li, (i, j) in enumerate(network.edges):
        if i in failed_nodes or j in failed_nodes or (int(i), int(j)) in failed_links:
            keep[li] = False
    link_map = np.full(network.num_edges, -1, dtype=np.int64)
    link_map[keep] = np.arange(int(keep.sum()))
    alive = network.alive.copy()
    alive[list(failed_nodes)] = False
    cpu_capacity = network.cpu_capacity.copy()
    cpu_capacity[list(failed_nodes)] = 0.0
    new = PhysicalNetwork(
        num_nodes=network.num_nodes,
        edges=network.edges[keep],
        link_capacity=network.link_capacity[keep],
        link_price=network.link_price[keep],
        cpu_capacity=cpu_capacity,
        cpu_price=network.cpu_price,
        alive=alive,
    )
    return new, link_map


# ---- reachability (used for exact LP variable support and feasibility probes) ----

def slot_distances(graph: LayeredGraph, origin: int) -> np.ndarray:
    """Min slots (hops + processing steps) from ``origin`` to every layered node."""
    dist = np.full(graph.num_nodes, np.iinfo(np.int64).max, dtype=np.int64)
    dist[origin] = 0
    out = graph.out_lists()
    frontier = [origin]
    d = 0
    while frontier:
        nxt = []
        for u in frontier:
            for e in out[u]:
                v = graph.head[e]
                if dist[v] > d + 1:
                    dist[v] = d + 1
                    nxt.append(v)
        frontier = nxt
        d += 1
    return dist
