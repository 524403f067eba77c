"""Static feasibility probe for a scenario config.

Solves a deadline-aware multicommodity generalized-flow LP on the
lifetime-expanded layered graph: packets enter at their arrival lifetimes,
every hop or processing step costs one lifetime unit, flows scale by the
stage gain, and resources are shared across commodities.  The max-min
deliverable reliability level bounds what any causal policy can achieve,
so it separates "policy converges slowly" from "load infeasible".

Usage: python scripts/feasibility_probe.py [scenario] [--scale S] [--post]
"""
import argparse

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from resrcnc.config import get_scenario
from resrcnc.model import PROCESS, TRANSMIT, apply_outage, build_layered_graph


def probe(scenario, rates, network, min_level=None):
    planes = [build_layered_graph(network, scenario.services[c.service])
              for c in scenario.commodities]
    var_off = []
    n_var = 0
    blocks = []
    for ci, (com, g) in enumerate(zip(scenario.commodities, planes)):
        L = com.max_lifetime
        # var (edge, l): flow leaving tail with residual lifetime l in 1..L
        var_off.append(n_var)
        n_var += g.num_edges * (L + 1)
        blocks.append((com, g, L))
    rows_i, cols_j, vals, rhs, sense = [], [], [], [], []

    def put(r, j, v):
        rows_i.append(r); cols_j.append(j); vals.append(v)

    row = 0
    deliver_cols = [[] for _ in blocks]
    deliver_gain = [[] for _ in blocks]
    ub = np.full(n_var + 1, np.inf)
    for ci, (com, g, L) in enumerate(blocks):
        off = var_off[ci]
        dest = g.node_id(com.destination, g.num_stages)
        inj = rates[ci]
        out_e = g.out_lists()
        in_e = g.in_lists()
        for node in range(g.num_nodes):
            if node == dest:
                for e in in_e[node]:
                    for l in range(1, L + 1):
                        deliver_cols[ci].append(off + e * (L + 1) + l)
                        deliver_gain[ci].append(float(g.gain[e]))
                # a sink: nothing may leave, or deliveries recirculate
                for e in out_e[node]:
                    ub[off + e * (L + 1):off + (e + 1) * (L + 1)] = 0.0
                continue
            phys, stage = int(g.node_phys[node]), int(g.node_stage[node])
            for l in range(1, L + 1):
                # cumulative availability at (node, l): total sent while the
                # residual lifetime is still >= l cannot exceed exogenous
                # arrivals at >= l plus gain-scaled inflow sent at >= l+1
                # (one hop costs a unit, and waiting only lowers l)
                for e in out_e[node]:
                    for lp in range(l, L + 1):
                        put(row, off + e * (L + 1) + lp, 1.0)
                for e in in_e[node]:
                    for lp in range(l + 1, L + 1):
                        put(row, off + e * (L + 1) + lp, -float(g.gain[e]))
                b = float(inj[phys, l:].sum()) if stage == 1 else 0.0
                rhs.append(b); sense.append("<")
                row += 1
    for li in range(network.num_edges):
        for ci, (com, g, L) in enumerate(blocks):
            off = var_off[ci]
            for e in np.flatnonzero((g.kind == TRANSMIT) & (g.phys == li)):
                for l in range(1, L + 1):
                    put(row, off + e * (L + 1) + l, 1.0)
        rhs.append(float(network.link_capacity[li])); sense.append("<")
        row += 1
    for v in range(network.num_nodes):
        for ci, (com, g, L) in enumerate(blocks):
            off = var_off[ci]
            for e in np.flatnonzero((g.kind == PROCESS) & (g.phys == v)):
                for l in range(1, L + 1):
                    put(row, off + e * (L + 1) + l, float(g.work[e]))
        rhs.append(float(network.cpu_capacity[v])); sense.append("<")
        row += 1

    # objective: maximize worst-commodity level z; deliveries count with gain
    z = n_var
    targets = []
    for ci, (com, g, L) in enumerate(blocks):
        xi = scenario.services[com.service].cumulative_gain(g.num_stages)
        lam = rates[ci].sum()
        targets.append(xi * lam)
        for j, gn in zip(deliver_cols[ci], deliver_gain[ci]):
            put(row, j, -gn / targets[ci])
        put(row, z, 1.0)
        rhs.append(0.0); sense.append("<")
        row += 1
    a = sp.csr_matrix((vals, (rows_i, cols_j)), shape=(row, n_var + 1))
    c = np.zeros(n_var + 1)
    c[z] = -1.0
    res = linprog(c, A_ub=a, b_ub=np.asarray(rhs),
                  bounds=np.column_stack([np.zeros(n_var + 1), ub]),
                  method="highs")
    if not res.success:
        raise RuntimeError(res.message)
    levels = []
    x = res.x
    for ci, (com, g, L) in enumerate(blocks):
        d = sum(x[j] * gn for j, gn in zip(deliver_cols[ci], deliver_gain[ci]))
        levels.append(d / targets[ci])
    return -res.fun, levels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("scenario", nargs="?", default="abilene")
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--post", action="store_true",
                    help="apply the outage before probing")
    args = ap.parse_args()
    cfg = get_scenario(args.scenario)
    scn, _, _ = cfg.to_runtime()
    network = scn.network
    rates = [r.copy() for r in scn.arrivals.rates]
    if args.post:
        network, _ = apply_outage(network, scn.outage, scn.commodities)
    rates = [r * args.scale for r in rates]
    zmax, levels = probe(scn, rates, network)
    tag = "post" if args.post else "pre"
    print(f"{tag}-outage scale={args.scale}: max-min level = {zmax:.4f}")
    for ci, lv in enumerate(levels):
        print(f"  commodity {ci}: best level {lv:.4f}")


if __name__ == "__main__":
    main()
