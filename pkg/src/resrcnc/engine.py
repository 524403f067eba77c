"""Per-slot orchestration of the control loop and trial execution.

Slot order: (outage actions if due) -> max-weight virtual flows on virtual
capacities -> flow-matching LP on actual capacities -> queue advance ->
virtual/request/fading/frame updates -> frame-boundary capacity update ->
trace row.  The adaptive variant (``resrcnc``) runs thresholded frame
reductions plus the outage actions; the baseline (``rcnc``) averages virtual
flow over the whole history in the request-queue update and scales ungated
reductions by kappa, with no outage reset or redistribution.

An outage rebuilds the layered graphs.  Node ids survive (queues and virtual
queues stay aligned); edge-indexed state is carried over by (kind, stage,
physical id) and failed entries are dropped, with dropped backlog counted as
lost mass in the conservation ledger.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import capacity as cap
from . import matching, queueing, traffic, virtual
from .model import (Commodity, ConfigError, OutageSpec, PhysicalNetwork,
                    ServiceChain, SimulationError, apply_outage,
                    build_layered_graph)

TRACE_FLOAT = "%.17g"


@dataclass(frozen=True)
class PolicyParams:
    variant: str = "resrcnc"            # resrcnc | rcnc
    frame_len: int = 2000
    lookahead: int = 2
    v_raw: float = 5.0
    memory_span: int = 500              # fading-average window for arrivals
    r_min_tr: float = 1000.0
    r_min_pr: float = 0.1
    kappa: float = 0.5                  # baseline reduction scale
    capacity_floor: float = 0.01        # fraction of actual capacity
    lp_backend: str = "auto"
    scale_incoming: bool = True         # gain-scaled incoming flow in dynamics
    check_lp_residual: bool = True

    def __post_init__(self):
        if self.variant not in ("resrcnc", "rcnc"):
            raise ConfigError(f"unknown policy variant {self.variant!r}")
        if self.frame_len < 1 or self.lookahead < 1 or self.memory_span < 1:
            raise ConfigError("frame_len, lookahead, memory_span must be >= 1")
        if self.variant == "rcnc" and not 0.0 < self.kappa <= 1.0:
            raise ConfigError("kappa must lie in (0, 1]")


@dataclass(frozen=True)
class Scenario:
    """Runtime scenario in canonical units (packets/slot, CPU, $/unit)."""
    network: PhysicalNetwork
    services: tuple[ServiceChain, ...]
    commodities: tuple[Commodity, ...]
    arrivals: traffic.ArrivalProcess
    outage: OutageSpec | None = None

    @property
    def num_commodities(self) -> int:
        return len(self.commodities)


@dataclass
class Era:
    """Everything tied to one physical-network epoch (pre or post outage)."""
    network: PhysicalNetwork
    planes: list[virtual.CommodityPlane]
    index: virtual.ResourceIndex
    template: matching.MatchTemplate
    matcher: object
    supports: list[np.ndarray]


@dataclass
class TrialResult:
    trial: int
    trace: dict[str, np.ndarray]
    frame_caps: list[tuple[int, np.ndarray, np.ndarray]]
    conservation: list[dict]
    match_pre: list[tuple[np.ndarray, np.ndarray]]
    match_post: list[tuple[np.ndarray, np.ndarray]] | None
    planes_pre: list[virtual.CommodityPlane]
    planes_post: list[virtual.CommodityPlane] | None
    v_value: float
    sanitize_worst: float = 0.0
    resid_worst: float = 0.0
    wall_seconds: float = 0.0

    def trace_columns(self) -> list[str]:
        return list(self.trace)


def _build_planes(network: PhysicalNetwork, scenario: Scenario,
                  scale_incoming: bool) -> list[virtual.CommodityPlane]:
    graphs = {}
    planes = []
    for c in scenario.commodities:
        key = c.service
        if key not in graphs:
            graphs[key] = build_layered_graph(network, scenario.services[key])
        g = graphs[key]
        planes.append(virtual.CommodityPlane(
            graph=g, dest=g.node_id(c.destination, g.num_stages),
            max_lifetime=c.max_lifetime,
            arrival_lifetimes=c.arrival_lifetimes,
            gamma_long=c.target_reliability,
            scale_incoming=scale_incoming))
    return planes


def _build_era(network: PhysicalNetwork, scenario: Scenario, policy: PolicyParams,
               rate_sets: list[list[np.ndarray]],
               carry_supports: list[np.ndarray] | None = None) -> Era:
    planes = _build_planes(network, scenario, policy.scale_incoming)
    supports = []
    for ci, plane in enumerate(planes):
        s = matching.lifetime_support(plane, rate_sets[ci])
        if carry_supports is not None:
            s = np.maximum(s, carry_supports[ci])
        supports.append(s)
    index = virtual.ResourceIndex.build(network, planes)
    template = matching.MatchTemplate(planes, network, policy.lookahead, supports)
    matcher = matching.make_matcher(template, policy.lp_backend)
    return Era(network, planes, index, template, matcher, supports)


class TrialRunner:
    """One Monte Carlo trial; deterministic in (scenario, policy, seed, trial)."""

    def __init__(self, scenario: Scenario, policy: PolicyParams,
                 horizon: int, master_seed: int, trial: int):
        self.scenario = scenario
        self.policy = policy
        self.horizon = horizon
        self.trial = trial
        nc = scenario.num_commodities
        self.streams = traffic.commodity_streams(master_seed, trial, nc)
        pre_rates = [[scenario.arrivals.rates[c]] for c in range(nc)]
        self.era = _build_era(scenario.network, scenario, policy, pre_rates)
        self.penalty = virtual.choose_v(scenario.network, self.era.planes,
                                        policy.v_raw)
        self.frame = cap.FrameState.fresh(
            scenario.network, self.era.planes, policy.frame_len,
            policy.r_min_tr, policy.r_min_pr, policy.capacity_floor)
        self.queues = [np.zeros((p.graph.num_nodes, p.max_lifetime + 1))
                       for p in self.era.planes]
        self.vq = [virtual.VirtualQueueState.zeros(p) for p in self.era.planes]
        self.requests = [np.zeros((p.graph.num_edges, p.max_lifetime + 1))
                         for p in self.era.planes]
        self.nu_history = [np.zeros_like(r) for r in self.requests]  # baseline
        self.fading = [traffic.FadingAverage(policy.memory_span,
                                             np.zeros((p.graph.num_phys_nodes,
                                                       p.max_lifetime + 1)))
                       for p in self.era.planes]
        self.ledgers = [queueing.CommodityLedger() for _ in self.era.planes]
        self.cum_nu = [np.zeros_like(r) for r in self.requests]
        self.cum_x = [np.zeros_like(r) for r in self.requests]
        self.match_pre: list[tuple[np.ndarray, np.ndarray]] | None = None
        self.planes_pre = self.era.planes
        self.frame_caps: list[tuple[int, np.ndarray, np.ndarray]] = []
        self.sanitize_worst = 0.0
        self.resid_worst = 0.0
        # arrivals for slot 0 seed the queues
        self.cur_arrivals = traffic.sample_arrivals(scenario.arrivals, 0, self.streams)
        for ci, a in enumerate(self.cur_arrivals):
            self._inject(ci, a)
        cols = ["slot", "vcap_link_total", "vcap_cpu_total"]
        for ci in range(nc):
            cols += [f"arrivals_c{ci}", f"delivered_c{ci}", f"expired_c{ci}",
                     f"cost_c{ci}", f"uq_c{ci}", f"vq_c{ci}", f"rq_c{ci}",
                     f"nu_total_c{ci}", f"x_total_c{ci}"]
        self.trace = {k: np.zeros(horizon) for k in cols}

    def _inject(self, ci: int, arrivals: np.ndarray) -> None:
        plane = self.era.planes[ci]
        arr = np.zeros_like(self.queues[ci])
        arr[plane.source_mask] = arrivals
        arr[:, 0] = 0.0
        arr[plane.dest, :] = 0.0
        self.queues[ci] += arr
        led = self.ledgers[ci]
        led.injected += float(arr.sum())
        led.injected_mass += float(arr.sum())

    # -- outage --

    def _apply_outage(self) -> None:
        scenario, policy = self.scenario, self.policy
        outage = scenario.outage
        old = self.era
        dead_nodes = set(outage.failed_nodes)
        new_net, link_map = apply_outage(old.network, outage, scenario.commodities)
        dead_links = {li for li in range(old.network.num_edges) if link_map[li] < 0}
        if policy.variant == "resrcnc":
            cap.redistribute_frame_averages(self.frame, old.planes,
                                            dead_nodes, dead_links)
        nc = scenario.num_commodities
        post_rates = [[scenario.arrivals.post_rates[c]] for c in range(nc)]
        era = _build_era(new_net, scenario, policy, post_rates,
                         carry_supports=old.supports)
        remap = lambda ci, v: cap.remap_edge_values(  # noqa: E731
            old.planes[ci].graph, era.planes[ci].graph, link_map, v)
        self.frame.nu_avg = [remap(ci, v) for ci, v in enumerate(self.frame.nu_avg)]
        self.frame.x_avg = [remap(ci, v) for ci, v in enumerate(self.frame.x_avg)]
        self.requests = [remap(ci, v) for ci, v in enumerate(self.requests)]
        self.nu_history = [remap(ci, v) for ci, v in enumerate(self.nu_history)]
        self.match_pre = [(n, x) for n, x in zip(self.cum_nu, self.cum_x)]
        self.cum_nu = [np.zeros((p.graph.num_edges, p.max_lifetime + 1))
                       for p in era.planes]
        self.cum_x = [np.zeros_like(v) for v in self.cum_nu]
        if policy.variant == "resrcnc":
            cap.outage_reset(self.frame, new_net)
        else:
            self.frame.link_cap = self.frame.link_cap[link_map >= 0]
            self.frame.cpu_cap[~new_net.alive] = 0.0
        for ci, plane in enumerate(era.planes):
            self.queues[ci] = queueing.drop_node_queues(
                old.planes[ci].ops, self.queues[ci], dead_nodes, self.ledgers[ci])
            mask = np.isin(plane.graph.node_phys, list(dead_nodes))
            self.vq[ci].causality[mask] = 0.0
        self.era = era

    # -- one slot --

    def step(self, t: int) -> None:
        scenario, policy, era = self.scenario, self.policy, self.era
        outage = scenario.outage
        if outage is not None and t == outage.at:
            self._apply_outage()
            era = self.era
        planes = era.planes

        weights = [virtual.compute_weights(p, self.vq[ci], self.penalty.v)
                   for ci, p in enumerate(planes)]
        nus = virtual.max_weight_assign(era.index, planes, weights,
                                        self.frame.link_cap, self.frame.cpu_cap)

        sol, rhs = era.matcher.solve(self.requests, self.queues,
                                     [f.value for f in self.fading])
        if policy.check_lp_residual:
            self.resid_worst = max(self.resid_worst,
                                   era.template.verify(sol, rhs))
        plans = era.template.split_solution(sol)
        xs, worst = matching.sanitize_execution(
            planes, matching.extract_decision(plans), self.queues, era.network)
        self.sanitize_worst = max(self.sanitize_worst, worst)

        a_next = traffic.sample_arrivals(scenario.arrivals, t + 1, self.streams)
        tr = self.trace
        tr["slot"][t] = t
        tr["vcap_link_total"][t] = self.frame.link_cap.sum()
        tr["vcap_cpu_total"][t] = self.frame.cpu_cap.sum()
        for ci, plane in enumerate(planes):
            arr_next = np.zeros_like(self.queues[ci])
            arr_next[plane.source_mask] = a_next[ci]
            arr_next[:, 0] = 0.0
            arr_next[plane.dest, :] = 0.0
            self.queues[ci], delivered, expired = queueing.advance_queues(
                plane.ops, self.queues[ci], xs[ci], arr_next,
                self.ledgers[ci], slot=t)
            self.vq[ci] = virtual.update_virtual_queues(
                plane, self.vq[ci], nus[ci], self.cur_arrivals[ci])
            if policy.variant == "rcnc":
                h = self.nu_history[ci]
                h *= t / (t + 1)
                h += nus[ci] / (t + 1)
                self.requests[ci] = matching.update_request_queues(
                    self.requests[ci], h, xs[ci])
            else:
                self.requests[ci] = matching.update_request_queues(
                    self.requests[ci], nus[ci], xs[ci])
            self.fading[ci].update(self.cur_arrivals[ci], t)
            self.cum_nu[ci] += nus[ci]
            self.cum_x[ci] += xs[ci]
            g = plane.graph
            tr[f"arrivals_c{ci}"][t] = self.cur_arrivals[ci].sum()
            tr[f"delivered_c{ci}"][t] = delivered
            tr[f"expired_c{ci}"][t] = expired
            tr[f"cost_c{ci}"][t] = float((g.price * plane.rho) @ xs[ci].sum(axis=1))
            tr[f"uq_c{ci}"][t] = float(self.queues[ci].sum())
            tr[f"vq_c{ci}"][t] = self.vq[ci].total()
            tr[f"rq_c{ci}"][t] = float(np.abs(self.requests[ci]).sum())
            tr[f"nu_total_c{ci}"][t] = nus[ci].sum()
            tr[f"x_total_c{ci}"][t] = xs[ci].sum()
        cap.update_frame_averages(self.frame, nus, xs, t)
        if (t + 1) % policy.frame_len == 0:
            eps_link, eps_cpu = cap.compute_reductions(
                self.frame, planes, era.network.num_edges, era.network.num_nodes)
            cap.apply_capacity_update(
                self.frame, era.network, eps_link, eps_cpu,
                kappa=policy.kappa if policy.variant == "rcnc" else None)
            self.frame_caps.append((t, self.frame.link_cap.copy(),
                                    self.frame.cpu_cap.copy()))
        self.cur_arrivals = a_next

    def run(self) -> TrialResult:
        t0 = time.perf_counter()
        for t in range(self.horizon):
            self.step(t)
        reports = []
        for ci, plane in enumerate(self.era.planes):
            rep = queueing.conservation_report(plane.ops, self.ledgers[ci],
                                               self.queues[ci])
            if abs(rep["relative_residual"]) > 1e-9:
                raise SimulationError(
                    f"conservation residual {rep['relative_residual']:.3e} "
                    f"for commodity {ci}")
            reports.append(rep)
        had_outage = (self.scenario.outage is not None
                      and self.scenario.outage.at < self.horizon)
        return TrialResult(
            trial=self.trial,
            trace=self.trace,
            frame_caps=self.frame_caps,
            conservation=reports,
            match_pre=(self.match_pre if had_outage
                       else list(zip(self.cum_nu, self.cum_x))),
            match_post=list(zip(self.cum_nu, self.cum_x)) if had_outage else None,
            planes_pre=self.planes_pre,
            planes_post=self.era.planes if had_outage else None,
            v_value=self.penalty.v,
            sanitize_worst=self.sanitize_worst,
            resid_worst=self.resid_worst,
            wall_seconds=time.perf_counter() - t0,
        )


def run_trial(scenario: Scenario, policy: PolicyParams, horizon: int,
              master_seed: int, trial: int) -> TrialResult:
    return TrialRunner(scenario, policy, horizon, master_seed, trial).run()
