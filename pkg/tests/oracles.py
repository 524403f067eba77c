"""Independent reference implementations the test suite checks against.

Kept deliberately naive: explicit loops, itertools enumeration, no shared
code with the package beyond data types.
"""
from __future__ import annotations

import itertools

import numpy as np


def lp_vertex_enumeration(obj: np.ndarray, rows: np.ndarray,
                          rhs: np.ndarray) -> tuple[float, np.ndarray]:
    """Maximize obj @ x over {rows @ x <= rhs, x >= 0} by checking every basic
    point.  Assumes the polytope is bounded (callers construct instances with
    per-variable cap rows).  Returns (best objective, an argmax vertex)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    m, n = rows.shape
    full = np.vstack([rows, -np.eye(n)])
    b = np.concatenate([np.asarray(rhs, dtype=float), np.zeros(n)])
    best, best_x = -np.inf, None
    for combo in itertools.combinations(range(m + n), n):
        a = full[list(combo)]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        x = np.linalg.solve(a, b[list(combo)])
        if (x < -1e-9).any() or (rows @ x > rhs + 1e-9 * (1 + np.abs(rhs))).any():
            continue
        val = float(obj @ x)
        if val > best:
            best, best_x = val, x
    if best_x is None:
        raise AssertionError("enumeration found no feasible vertex")
    return best, best_x


def max_weight_reference(planes, weights, link_caps, cpu_caps, network):
    """Grant each resource to its first strict maximizer with positive weight,
    scanning candidates in (commodity, lifetime, stage, edge id) order.
    Mirrors the documented tie-break; written as plain loops."""
    nus = [np.zeros_like(w) for w in weights]

    def assign(kind, phys, cap, per_rho):
        if cap <= 0.0:
            return
        best_val, best = 0.0, None
        for c, plane in enumerate(planes):
            g = plane.graph
            edge_order = sorted(
                (e for e in range(g.num_edges)
                 if g.kind[e] == kind and g.phys[e] == phys
                 and g.tail[e] != plane.dest),
                key=lambda e: g.stage[e])
            for l in range(1, plane.max_lifetime + 1):
                for e in edge_order:
                    v = weights[c][e, l]
                    if v > best_val:
                        best_val, best = v, (c, e, l)
        if best is None:
            return
        c, e, l = best
        nus[c][e, l] = cap / planes[c].rho[e] if per_rho else cap
    for li in range(network.num_edges):
        assign(0, li, float(link_caps[li]), False)
    for v in range(network.num_nodes):
        assign(1, v, float(cpu_caps[v]), True)
    return nus


def fading_reference(samples: list[float], span: int) -> float:
    """Scalar replay of the two-branch recurrence."""
    val = 0.0
    for t, s in enumerate(samples):
        if t < span:
            val = val * t / (t + 1) + s / (t + 1)
        else:
            val = val * (span - 1) / span + s / span
    return val


def window_level(delivered, arrivals, xi, lo, hi) -> float:
    d = float(np.sum(delivered[lo:hi]))
    a = float(np.sum(arrivals[lo:hi]))
    if a == 0:
        return float("nan")
    return d / (xi * a)
