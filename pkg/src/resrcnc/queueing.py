"""Lifetime-indexed queue engine: aging, expiry, delivery, conservation.

Queues are dense per commodity: shape (layered nodes, max_lifetime+1), column l
= packets with l slots of life left.  Column 0 is always zero; packets aging
into it are counted expired.  Flow into the destination copy on the final layer
is consumed on arrival (scaled by the edge gain) and counted delivered.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import LayeredGraph, SimulationError

# Fluid flows come out of an LP solved in floats; executed decisions are
# projected onto the constraint set, so only rounding-level slack is tolerated.
REL_TOL = 1e-9
ABS_TOL = 1e-6


@dataclass
class QueueOps:
    """Precomputed incidence operators for one commodity's layered graph.

    ``scale_incoming=False`` switches the actual dynamics to the unscaled
    incoming-flow reading (kept selectable for A/B runs)."""
    graph: LayeredGraph
    dest: int
    scale_incoming: bool = True
    out_mat: sp.csr_matrix = field(init=False)   # node x edge, 1 on tail
    in_mat: sp.csr_matrix = field(init=False)    # node x edge, in-gain on head
    in_gain: np.ndarray = field(init=False)

    def __post_init__(self):
        g = self.graph
        e = np.arange(g.num_edges)
        ones = np.ones(g.num_edges)
        self.in_gain = g.gain if self.scale_incoming else np.ones(g.num_edges)
        self.out_mat = sp.csr_matrix((ones, (g.tail, e)), shape=(g.num_nodes, g.num_edges))
        self.in_mat = sp.csr_matrix((self.in_gain, (g.head, e)),
                                    shape=(g.num_nodes, g.num_edges))


@dataclass
class CommodityLedger:
    """Running totals in raw packets and in source-packet mass units."""
    injected: float = 0.0
    delivered: float = 0.0       # destination-stage packets
    expired: float = 0.0
    lost: float = 0.0
    injected_mass: float = 0.0
    delivered_mass: float = 0.0
    expired_mass: float = 0.0
    lost_mass: float = 0.0


def advance_queues(ops: QueueOps, queues: np.ndarray, flows: np.ndarray,
                   arrivals_next: np.ndarray, ledger: CommodityLedger | None = None,
                   slot: int = -1) -> tuple[np.ndarray, float, float]:
    """One-slot queue update.  ``flows`` is (edges, L+1) for the current slot,
    ``arrivals_next`` the (nodes, L+1) arrivals entering at the next slot.
    Returns (new queues, delivered, expired)."""
    g = ops.graph
    if flows.min() < -ABS_TOL:
        raise SimulationError(f"negative flow {flows.min():g} at slot {slot}")
    out_by_node = ops.out_mat @ flows
    scale = 1.0 + np.abs(queues)
    if (out_by_node - queues > REL_TOL * scale + ABS_TOL).any():
        ı, l = np.unravel_index(np.argmax(out_by_node - queues), queues.shape)
        raise SimulationError(
            f"availability violated at slot {slot}: node {ı} lifetime {l} "
            f"sends {out_by_node[ı, l]:g} of {queues[ı, l]:g}")
    residual = queues - out_by_node + ops.in_mat @ flows

    delivered = float(residual[ops.dest, 1:].sum())
    residual[ops.dest, :] = 0.0
    expired = float(residual[:, 1].sum())

    new_queues = np.empty_like(queues)
    new_queues[:, :-1] = residual[:, 1:]
    new_queues[:, -1] = 0.0
    new_queues += arrivals_next
    new_queues[:, 0] = 0.0
    new_queues[ops.dest, :] = 0.0

    if ledger is not None:
        beta = g.stage_weights()
        ledger.delivered += delivered
        ledger.expired += expired
        ledger.delivered_mass += delivered * beta[ops.dest]
        ledger.expired_mass += float(beta @ residual[:, 1])
        inj = float(arrivals_next.sum())
        ledger.injected += inj
        ledger.injected_mass += inj  # arrivals enter at stage 1 where mass weight is 1
    return new_queues, delivered, expired


def drop_node_queues(ops: QueueOps, queues: np.ndarray, dead_phys: set[int],
                     ledger: CommodityLedger | None = None) -> np.ndarray:
    """Outage cleanup: backlog at failed nodes is lost."""
    g = ops.graph
    mask = np.isin(g.node_phys, list(dead_phys))
    if ledger is not None:
        beta = g.stage_weights()
        ledger.lost += float(queues[mask].sum())
        ledger.lost_mass += float(beta[mask] @ queues[mask].sum(axis=1))
    out = queues.copy()
    out[mask] = 0.0
    return out


def timely_delivery(ops: QueueOps, flows: np.ndarray) -> float:
    """Gain-scaled flow into the destination copy, summed over lifetimes >= 1."""
    g = ops.graph
    into = g.head == ops.dest
    return float((g.gain[into, None] * flows[into, 1:]).sum())


def conservation_report(ops: QueueOps, ledger: CommodityLedger,
                        queues: np.ndarray) -> dict[str, float]:
    """Mass ledger in source-packet units: every packet weighs 1/{cumulative
    gain at its stage}, so processing neither creates nor destroys mass."""
    beta = ops.graph.stage_weights()
    backlog = float(beta @ queues.sum(axis=1))
    residual = (ledger.injected_mass - ledger.delivered_mass -
                ledger.expired_mass - ledger.lost_mass - backlog)
    denom = max(ledger.injected_mass, 1.0)
    return {
        "injected": ledger.injected_mass,
        "delivered": ledger.delivered_mass,
        "expired": ledger.expired_mass,
        "lost": ledger.lost_mass,
        "backlog": backlog,
        "residual": residual,
        "relative_residual": residual / denom,
    }
