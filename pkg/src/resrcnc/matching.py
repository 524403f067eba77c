"""Flow matching: follow the virtual flows with executable ones.

Request queues accumulate the signed gap between granted virtual flow and
executed actual flow.  Each slot an n-step look-ahead LP maximizes request
coverage subject to actual link/CPU capacities and lifetime-aware availability
(packets can only be sent if, accounting for aging, planned earlier moves and
expected arrivals, they can actually be at the node).  Only the first column
of the plan is executed.

The availability rows are generated for every lifetime, including lifetime 1,
so the executed column is feasible against the true queues by construction;
the delayed-column-sum operator `g_tau` used in their derivation is exposed
for tests.

Per-era structure (sparsity pattern, variable maps, gathers) is frozen into a
MatchTemplate; per-slot work is only objective/RHS refresh plus the solve.
Variables are pruned exactly: a (edge, lifetime) pair gets a variable only if
a packet of that lifetime can exist at the edge tail, which the lifetime
budget left after the shortest slot-distance from any arrival point decides.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import PROCESS, TRANSMIT, PhysicalNetwork, SimulationError, slot_distances
from .simplex import CanonicalLP, SolveResult, get_solver
from .virtual import CommodityPlane

RESID_TOL = 1e-7


# ---- request queues ----

def update_request_queues(r: np.ndarray, nu: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Signed, unclamped: r(t+1) = r(t) + nu(t) - x(t)."""
    return r + nu - x


# ---- delayed column sums ----

def upper_shift(v: np.ndarray) -> np.ndarray:
    """(Dv)[l] = v[l+1]: one slot of aging, lifetime-1 entries fall off."""
    out = np.zeros_like(v)
    out[:-1] = v[1:]
    return out


def g_tau(x_mat: np.ndarray, tau: int) -> np.ndarray:
    """Sum of the first tau columns, column s aged tau-s+1 times."""
    x_mat = np.asarray(x_mat, dtype=float)
    if tau > x_mat.shape[1]:
        raise ValueError(f"tau={tau} exceeds {x_mat.shape[1]} columns")
    acc = np.zeros(x_mat.shape[0])
    for s in range(1, tau + 1):
        v = x_mat[:, s - 1]
        for _ in range(tau - s + 1):
            v = upper_shift(v)
        acc = acc + v
    return acc


def lifetime_support(plane: CommodityPlane, rates: list[np.ndarray]) -> np.ndarray:
    """Max residual lifetime a packet can carry at each layered node: every
    slot in the network costs one lifetime unit, so it is bounded by arrival
    lifetime minus the slot-distance from the arrival point's first layer."""
    g = plane.graph
    support = np.full(g.num_nodes, -1, dtype=np.int64)
    entry = np.zeros((g.num_phys_nodes, plane.max_lifetime + 1), dtype=bool)
    for r in rates:
        entry |= r[:, : plane.max_lifetime + 1] > 0
    for v in range(g.num_phys_nodes):
        lifes = np.flatnonzero(entry[v])
        if lifes.size == 0:
            continue
        dist = slot_distances(g, g.node_id(v, 1))
        reach = dist < np.iinfo(np.int64).max
        cand = np.where(reach, int(lifes.max()) - dist, -1)
        np.maximum(support, cand, out=support)
    return np.clip(support, -1, plane.max_lifetime)


def arrival_matrix(queues: np.ndarray, abar: np.ndarray, n: int) -> np.ndarray:
    """(nodes, L+1, n+1): current queues in column 0, the fading arrival
    average repeated for the n look-ahead columns."""
    out = np.empty(queues.shape + (n + 1,))
    out[:, :, 0] = queues
    out[:, :, 1:] = abar[:, :, None]
    return out


# ---- template ----

@dataclass
class MatchTemplate:
    """Frozen per-era LP structure for all commodities jointly."""
    planes: list[CommodityPlane]
    network: PhysicalNetwork
    lookahead: int
    supports: list[np.ndarray]
    var_of: list[np.ndarray] = field(init=False)      # (E, L+1, n) -> var id or -1
    num_vars: int = field(init=False)
    var_c: np.ndarray = field(init=False)
    var_edge: np.ndarray = field(init=False)
    var_life: np.ndarray = field(init=False)
    var_slot: np.ndarray = field(init=False)          # 1-based look-ahead slot
    rows: sp.csr_matrix = field(init=False)
    num_cap_rows: int = field(init=False)
    rhs_cap: np.ndarray = field(init=False)
    gather_q: sp.csr_matrix = field(init=False)       # avail rhs from queues
    gather_a: sp.csr_matrix = field(init=False)       # avail rhs from fading avg
    obj_gather: np.ndarray = field(init=False)        # var -> flat request index
    row_labels: list[str] = field(init=False)

    def __post_init__(self):
        n = self.lookahead
        if n < 1:
            raise SimulationError("look-ahead depth must be >= 1")
        net = self.network
        nv = 0
        self.var_of = []
        vc, ve, vl, vs = [], [], [], []
        for c, (plane, support) in enumerate(zip(self.planes, self.supports)):
            g = plane.graph
            L = plane.max_lifetime
            vm = np.full((g.num_edges, L + 1, n), -1, dtype=np.int64)
            for e in range(g.num_edges):
                if g.tail[e] == plane.dest:
                    continue          # consumed packets never leave
                top = min(L, int(support[g.tail[e]]))
                for l in range(1, top + 1):
                    for s in range(n):
                        vm[e, l, s] = nv
                        vc.append(c); ve.append(e); vl.append(l); vs.append(s + 1)
                        nv += 1
            self.var_of.append(vm)
        self.num_vars = nv
        self.var_c = np.asarray(vc, dtype=np.int64)
        self.var_edge = np.asarray(ve, dtype=np.int64)
        self.var_life = np.asarray(vl, dtype=np.int64)
        self.var_slot = np.asarray(vs, dtype=np.int64)

        rows_i, cols_j, vals = [], [], []
        labels: list[str] = []

        def put(r, j, v):
            rows_i.append(r); cols_j.append(j); vals.append(v)

        # capacity rows: one per (physical resource, look-ahead slot)
        row = 0
        rhs_cap = []
        for li in range(net.num_edges):
            for s in range(n):
                for c, plane in enumerate(self.planes):
                    g = plane.graph
                    for e in np.flatnonzero((g.kind == TRANSMIT) & (g.phys == li)):
                        for l in range(1, plane.max_lifetime + 1):
                            j = self.var_of[c][e, l, s]
                            if j >= 0:
                                put(row, j, 1.0)
                rhs_cap.append(net.link_capacity[li])
                labels.append(f"cap link {net.edges[li, 0]}->{net.edges[li, 1]} s{s + 1}")
                row += 1
        for v in range(net.num_nodes):
            for s in range(n):
                for c, plane in enumerate(self.planes):
                    g = plane.graph
                    for e in np.flatnonzero((g.kind == PROCESS) & (g.phys == v)):
                        for l in range(1, plane.max_lifetime + 1):
                            j = self.var_of[c][e, l, s]
                            if j >= 0:
                                put(row, j, float(g.work[e]))
                rhs_cap.append(net.cpu_capacity[v])
                labels.append(f"cap cpu {v} s{s + 1}")
                row += 1
        self.num_cap_rows = row
        self.rhs_cap = np.asarray(rhs_cap, dtype=float)

        # availability rows: per (commodity, node, look-ahead offset tau,
        # execution lifetime l'): planned sends drawing on the same packets
        # minus gain-scaled planned arrivals must fit in predicted backlog
        gq_i, gq_j, ga_i, ga_j, ga_v = [], [], [], [], []
        q_off = np.cumsum([0] + [p.graph.num_nodes * (p.max_lifetime + 1)
                                 for p in self.planes])
        # predicted arrivals live on physical nodes; only first-stage copies
        # ever receive them
        a_off = np.cumsum([0] + [net.num_nodes * (p.max_lifetime + 1)
                                 for p in self.planes])
        for c, plane in enumerate(self.planes):
            g = plane.graph
            L = plane.max_lifetime
            out_e = g.out_lists()
            in_e = g.in_lists()
            for node in range(g.num_nodes):
                if node == plane.dest:
                    continue
                top = min(L, int(self.supports[c][node]))
                for tau in range(n):
                    for lp in range(1, top + 1):
                        empty = True
                        for s in range(1, tau + 2):
                            lam = lp + tau + 1 - s
                            if lam > L:
                                continue
                            for e in out_e[node]:
                                j = self.var_of[c][e, lam, s - 1]
                                if j >= 0:
                                    put(row, j, 1.0)
                                    empty = False
                        if empty:
                            continue
                        for s in range(1, tau + 1):
                            lam = lp + tau + 1 - s
                            if lam > L:
                                continue
                            for e in in_e[node]:
                                j = self.var_of[c][e, lam, s - 1]
                                if j >= 0:
                                    put(row, j, -float(plane.in_gain[e]))
                        if lp + tau <= L:
                            gq_i.append(row)
                            gq_j.append(q_off[c] + node * (L + 1) + lp + tau)
                        if g.node_stage[node] == 1:
                            phys = int(g.node_phys[node])
                            for k in range(lp, min(lp + tau - 1, L) + 1):
                                ga_i.append(row)
                                ga_j.append(a_off[c] + phys * (L + 1) + k)
                                ga_v.append(1.0)
                        labels.append(f"avail c{c} node {node} tau{tau} l{lp}")
                        row += 1
        self.rows = sp.csr_matrix(
            (vals, (rows_i, cols_j)), shape=(row, max(nv, 1)))[:, :nv].tocsr()
        n_avail = row - self.num_cap_rows
        self.gather_q = sp.csr_matrix(
            (np.ones(len(gq_i)),
             (np.asarray(gq_i, dtype=np.int64) - self.num_cap_rows,
              np.asarray(gq_j, dtype=np.int64))),
            shape=(n_avail, int(q_off[-1])))
        self.gather_a = sp.csr_matrix(
            (np.asarray(ga_v),
             (np.asarray(ga_i, dtype=np.int64) - self.num_cap_rows,
              np.asarray(ga_j, dtype=np.int64))),
            shape=(n_avail, int(a_off[-1])))
        self.row_labels = labels
        off = np.cumsum([0] + [p.graph.num_edges * (p.max_lifetime + 1)
                               for p in self.planes])
        widths = np.array([p.max_lifetime + 1 for p in self.planes], dtype=np.int64)
        self.obj_gather = (off[self.var_c] + self.var_edge * widths[self.var_c]
                           + self.var_life)

    # -- per-slot assembly --

    def objective(self, requests: list[np.ndarray]) -> np.ndarray:
        flat = np.concatenate([r.ravel() for r in requests])
        return flat[self.obj_gather]

    def avail_rhs(self, queues: list[np.ndarray], abars: list[np.ndarray]) -> np.ndarray:
        qf = np.concatenate([q.ravel() for q in queues])
        af = np.concatenate([a.ravel() for a in abars])
        return self.gather_q @ qf + self.gather_a @ af

    def assemble(self, requests, queues, abars) -> CanonicalLP:
        rhs = np.concatenate([self.rhs_cap, self.avail_rhs(queues, abars)])
        return CanonicalLP(self.objective(requests), self.rows, rhs)

    def split_solution(self, x: np.ndarray) -> list[np.ndarray]:
        """Full-plan tensors (edges, L+1, n) per commodity."""
        out = []
        for c, plane in enumerate(self.planes):
            g = plane.graph
            plan = np.zeros((g.num_edges, plane.max_lifetime + 1, self.lookahead))
            mask = self.var_c == c
            plan[self.var_edge[mask], self.var_life[mask], self.var_slot[mask] - 1] = \
                x[mask]
            out.append(plan)
        return out

    def verify(self, x: np.ndarray, rhs: np.ndarray) -> float:
        """Max positive row residual relative to scale; raises above tolerance."""
        resid = self.rows @ x - rhs
        scale = np.maximum(1.0, np.abs(rhs))
        worst = float((resid / scale).max(initial=0.0))
        if worst > RESID_TOL:
            k = int(np.argmax(resid / scale))
            raise SimulationError(
                f"LP residual {worst:.3e} on row {self.row_labels[k]}")
        return worst


def extract_decision(plans: list[np.ndarray]) -> list[np.ndarray]:
    """Execute only the first look-ahead column."""
    return [p[:, :, 0].copy() for p in plans]


def sanitize_execution(planes: list[CommodityPlane], xs: list[np.ndarray],
                       queues: list[np.ndarray], network: PhysicalNetwork,
                       tol: float = 1e-6) -> tuple[list[np.ndarray], float]:
    """Project the executed column onto the exact constraint set.

    Solvers return float solutions with rounding-level violations; scaling
    (never shifting) outgoing flow makes availability and capacities hold
    exactly so the queue engine sees a strictly admissible decision.  Returns
    the sanitized flows and the largest constraint excess repaired, measured
    on the same relative scale the hard-failure tolerance uses."""
    worst = 0.0
    out = []
    for plane, x, q in zip(planes, xs, queues):
        if x.min() < -tol:
            raise SimulationError(f"solver produced negative flow {x.min():g}")
        x = np.maximum(x, 0.0)
        sent = plane.ops.out_mat @ x
        excess = sent - q
        if (excess > tol * np.maximum(1.0, q)).any():
            k = int(np.argmax(excess / np.maximum(1.0, q)))
            raise SimulationError(
                "solver violated availability beyond tolerance: "
                f"excess {excess.flat[k]:g} at flat index {k}")
        qp = np.maximum(q, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(sent > qp, qp / sent, 1.0)
        f = np.clip(np.nan_to_num(f, nan=1.0), 0.0, 1.0)
        worst = max(worst, float(
            (excess / np.maximum(1.0, q)).max(initial=0.0)))
        x = x * f[plane.graph.tail]
        out.append(x)
    for li in range(network.num_edges):
        used = sum(float(x[(p.graph.kind == TRANSMIT) & (p.graph.phys == li)].sum())
                   for p, x in zip(planes, out))
        cap = float(network.link_capacity[li])
        if used > cap:
            if used > cap * (1 + tol):
                raise SimulationError("solver violated link capacity beyond tolerance")
            worst = max(worst, (used - cap) / cap)
            for p, x in zip(planes, out):
                sel = (p.graph.kind == TRANSMIT) & (p.graph.phys == li)
                x[sel] *= cap / used
    for v in range(network.num_nodes):
        used = 0.0
        for p, x in zip(planes, out):
            sel = (p.graph.kind == PROCESS) & (p.graph.phys == v)
            used += float((p.graph.work[sel, None] * x[sel]).sum())
        cap = float(network.cpu_capacity[v])
        if used > cap:
            if used > cap * (1 + tol):
                raise SimulationError("solver violated cpu capacity beyond tolerance")
            worst = max(worst, (used - cap) / cap)
            for p, x in zip(planes, out):
                sel = (p.graph.kind == PROCESS) & (p.graph.phys == v)
                x[sel] *= cap / used
    return out, worst


# ---- solvers ----

def _quiet(fn):
    """HiGHS emits some simplex diagnostics with raw printf that no logging
    option reaches; point fd 1 at /dev/null for the duration of the call."""
    sys.stdout.flush()
    null = os.open(os.devnull, os.O_WRONLY)
    saved = os.dup(1)
    os.dup2(null, 1)
    try:
        return fn()
    finally:
        os.dup2(saved, 1)
        os.close(saved)
        os.close(null)


class OneShotSolver:
    """Stateless per-slot solve through the pluggable LP interface."""

    def __init__(self, template: MatchTemplate, backend: str = "scipy"):
        self.template = template
        self._solve = get_solver(backend)
        self.backend = backend

    def solve(self, requests, queues, abars) -> tuple[np.ndarray, np.ndarray]:
        clp = self.template.assemble(requests, queues, abars)
        res = _quiet(lambda: self._solve(clp))
        return res.x, clp.rhs


class WarmHighsSolver:
    """Persistent HiGHS instance: model passed once per era, per slot only the
    objective and availability RHS change and the dual simplex restarts from
    the previous basis.  Uses scipy's vendored HiGHS bindings."""

    def __init__(self, template: MatchTemplate):
        from scipy.optimize._highspy import _core as hs  # noqa: private, guarded by factory
        self._hs = hs
        self.template = template
        t = template
        h = hs._Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("log_to_console", False)
        h.setOptionValue("solver", "simplex")
        h.setOptionValue("simplex_strategy", 1)   # dual simplex
        h.setOptionValue("threads", 1)
        h.setOptionValue("primal_feasibility_tolerance", 1e-9)
        lp = hs.HighsLp()
        m, nv = t.rows.shape
        lp.num_col_ = nv
        lp.num_row_ = m
        lp.col_cost_ = np.zeros(nv)
        lp.col_lower_ = np.zeros(nv)
        lp.col_upper_ = np.full(nv, np.inf)
        lp.row_lower_ = np.full(m, -np.inf)
        lp.row_upper_ = np.concatenate([t.rhs_cap, np.zeros(m - t.num_cap_rows)])
        csc = t.rows.tocsc()
        lp.a_matrix_.format_ = hs.MatrixFormat.kColwise
        lp.a_matrix_.num_col_ = nv
        lp.a_matrix_.num_row_ = m
        lp.a_matrix_.start_ = csc.indptr.astype(np.int32)
        lp.a_matrix_.index_ = csc.indices.astype(np.int32)
        lp.a_matrix_.value_ = csc.data.astype(np.float64)
        lp.sense_ = hs.ObjSense.kMinimize
        if h.passModel(lp) != hs.HighsStatus.kOk:
            raise SimulationError("HiGHS rejected the flow-matching model")
        self._h = h
        self._all_cols = np.arange(nv, dtype=np.int32)
        self.backend = "highs-warm"

    def solve(self, requests, queues, abars) -> tuple[np.ndarray, np.ndarray]:
        t = self.template
        obj = t.objective(requests)
        avail = t.avail_rhs(queues, abars)
        h = self._h
        h.changeColsCost(len(obj), self._all_cols, -obj)
        base = t.num_cap_rows
        neg_inf = float("-inf")
        for i, v in enumerate(avail):
            h.changeRowBounds(base + i, neg_inf, float(v))
        _quiet(h.run)
        x = np.array(h.getSolution().col_value)
        bad = (h.getModelStatus() != self._hs.HighsModelStatus.kOptimal
               or (x.size and x.min() < -1e-7))
        if bad:
            # warm bases occasionally stall or report stale vectors near
            # degeneracy; a cold solve recovers
            h.clearSolver()
            _quiet(h.run)
            x = np.array(h.getSolution().col_value)
        if h.getModelStatus() != self._hs.HighsModelStatus.kOptimal:
            raise SimulationError(f"HiGHS status {h.getModelStatus()} on flow LP")
        return x, np.concatenate([t.rhs_cap, avail])


def make_matcher(template: MatchTemplate, backend: str = "auto"):
    if backend in ("auto", "highs-warm"):
        try:
            return WarmHighsSolver(template)
        except Exception:
            if backend == "highs-warm":
                raise
    if backend == "auto":
        backend = "scipy"
    return OneShotSolver(template, backend)


# ---- plain-text dump for external cross-checks ----

def dump_lp(template: MatchTemplate, obj: np.ndarray, rhs: np.ndarray,
            x: np.ndarray | None = None, slot: int | None = None) -> str:
    t = template
    lines = [f"# flow-matching lp{'' if slot is None else f' slot {slot}'}",
             f"maximize over {t.num_vars} vars, {t.rows.shape[0]} rows"]
    for j in range(t.num_vars):
        c, e = int(t.var_c[j]), int(t.var_edge[j])
        g = t.planes[c].graph
        kind = "proc" if g.kind[e] == PROCESS else "link"
        lines.append(f"var v{j} c{c} {kind} {g.tail[e]}->{g.head[e]} "
                     f"l{t.var_life[j]} s{t.var_slot[j]} obj {obj[j]:.12g}")
    csr = t.rows
    for i in range(csr.shape[0]):
        terms = " + ".join(
            f"{csr.data[k]:.12g}*v{csr.indices[k]}"
            for k in range(csr.indptr[i], csr.indptr[i + 1]))
        lines.append(f"row {t.row_labels[i]}: {terms or '0'} <= {rhs[i]:.12g}")
    if x is not None:
        lines.append(f"objective {float(obj @ x):.12g}")
        for j in np.flatnonzero(np.abs(x) > 1e-12):
            lines.append(f"v{j} = {x[j]:.12g}")
    return "\n".join(lines) + "\n"
