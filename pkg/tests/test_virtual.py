import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resrcnc.config import builtin_abilene
from resrcnc.model import ServiceChain, build_layered_graph
from resrcnc.virtual import (CommodityPlane, ResourceIndex, VirtualQueueState,
                             causality_prefix, choose_v, compute_weights,
                             max_weight_assign, update_virtual_queues)

from conftest import two_node_network
from oracles import max_weight_reference


def _plane(gain=2.0, work=0.01, L=3, gamma=0.9, lifetimes=(3,), price=0.0):
    net = two_node_network(link_price=price, cpu_price=price)
    g = build_layered_graph(net, ServiceChain(gains=(gain,), work=(work,)))
    return CommodityPlane(graph=g, dest=3, max_lifetime=L,
                          arrival_lifetimes=lifetimes, gamma_long=gamma), net


def test_plane_constants():
    plane, _ = _plane(gain=2.0, work=0.01)
    g = plane.graph
    assert plane.xi_final == 2.0
    proc = g.kind == 1
    assert (plane.rho[proc] == 0.01).all()
    assert (plane.rho[~proc] == 1.0).all()
    assert set(plane.edges_into_dest.tolist()) == {
        int(np.where((g.kind == 0) & (g.stage == 2) & (g.head == 3))[0][0]),
        int(np.where((g.kind == 1) & (g.phys == 1))[0][0])}
    assert (plane.source_mask == (g.node_stage == 1)).all()


# ---- reliability queue ----

def test_reliability_queue_charges_target_share():
    plane, _ = _plane(gain=2.0, gamma=0.9, lifetimes=(3,))
    st0 = VirtualQueueState.zeros(plane)
    arr = np.zeros((2, 4))
    arr[0, 3] = 10.0
    nu = np.zeros((plane.graph.num_edges, 4))
    st1 = update_virtual_queues(plane, st0, nu, arr)
    # charge = xi_final * gamma * offered = 2 * 0.9 * 10
    assert st1.reliability == pytest.approx(18.0)


def test_reliability_queue_credits_gain_scaled_delivery():
    plane, _ = _plane(gain=2.0)
    state = VirtualQueueState(10.0, np.zeros((4, 4)))
    g = plane.graph
    nu = np.zeros((g.num_edges, 4))
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    nu[proc_at_1, 2] = 3.0   # delivers 6 after the gain
    st1 = update_virtual_queues(plane, state, nu, np.zeros((2, 4)))
    assert st1.reliability == pytest.approx(4.0)


def test_reliability_queue_clamps_at_zero():
    plane, _ = _plane(gain=2.0)
    state = VirtualQueueState(1.0, np.zeros((4, 4)))
    nu = np.zeros((plane.graph.num_edges, 4))
    proc_at_1 = int(np.where((plane.graph.kind == 1) & (plane.graph.phys == 1))[0][0])
    nu[proc_at_1, 2] = 3.0
    st1 = update_virtual_queues(plane, state, nu, np.zeros((2, 4)))
    assert st1.reliability == 0.0


def test_arrivals_outside_declared_lifetimes_not_charged():
    plane, _ = _plane(gain=1.0, gamma=0.5, lifetimes=(2,))
    arr = np.zeros((2, 4))
    arr[0, 3] = 8.0   # lifetime 3 not part of the commodity's arrival set
    st1 = update_virtual_queues(plane, VirtualQueueState.zeros(plane),
                                np.zeros((plane.graph.num_edges, 4)), arr)
    assert st1.reliability == 0.0


# ---- causality queues ----

def test_causality_counts_unbacked_sends():
    """Sending nu with no arrivals raises the tail's suffix queues."""
    plane, _ = _plane(gain=2.0)
    g = plane.graph
    nu = np.zeros((g.num_edges, 4))
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    nu[link_01, 2] = 5.0
    st1 = update_virtual_queues(plane, VirtualQueueState.zeros(plane), nu,
                                np.zeros((2, 4)))
    # out suffix at node 0: lifetimes 1 and 2 see the send
    assert st1.causality[0, 1] == 5.0
    assert st1.causality[0, 2] == 5.0
    assert st1.causality[0, 3] == 0.0
    # the head is credited one lifetime lower, clamped at zero from empty state
    assert (st1.causality[2] == 0).all()


def test_causality_arrivals_relieve_source():
    plane, _ = _plane(gain=2.0)
    g = plane.graph
    arr = np.zeros((2, 4))
    arr[0, 3] = 5.0
    nu = np.zeros((g.num_edges, 4))
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    nu[link_01, 2] = 5.0
    st1 = update_virtual_queues(plane, VirtualQueueState.zeros(plane), nu, arr)
    assert (st1.causality == 0).all()


def test_causality_head_credit_offsets_same_slot_relay():
    """Receiving at lifetime 3 and forwarding at lifetime 2 in the same slot
    leaves the relay node's queues untouched (the credit lands one column
    lower than the incoming lifetime)."""
    plane, _ = _plane(gain=1.0)
    g = plane.graph
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    nu = np.zeros((g.num_edges, 4))
    nu[link_01, 3] = 2.0
    nu[proc_at_1, 2] = 2.0
    s1 = update_virtual_queues(plane, VirtualQueueState.zeros(plane), nu,
                               np.zeros((2, 4)))
    assert (s1.causality[2] == 0).all()
    # the unbacked source send still registers upstream
    assert s1.causality[0].tolist() == [0.0, 2.0, 2.0, 2.0]


def test_causality_clamp_discards_early_credit():
    """max{0, .} is applied per slot: receiving in one slot and forwarding in
    the next does not net out, the stale credit is clamped away."""
    plane, _ = _plane(gain=1.0)
    g = plane.graph
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    nu1 = np.zeros((g.num_edges, 4))
    nu1[link_01, 3] = 2.0
    s1 = update_virtual_queues(plane, VirtualQueueState.zeros(plane), nu1,
                               np.zeros((2, 4)))
    assert (s1.causality[2] == 0).all()
    nu2 = np.zeros((g.num_edges, 4))
    nu2[proc_at_1, 2] = 2.0
    s2 = update_virtual_queues(plane, s1, nu2, np.zeros((2, 4)))
    assert s2.causality[2].tolist() == [0.0, 2.0, 2.0, 0.0]


def test_causality_dest_row_pinned():
    plane, _ = _plane(gain=2.0)
    g = plane.graph
    nu = np.zeros((g.num_edges, 4))
    # flow into dest from the stage-2 link 0->1
    link = int(np.where((g.kind == 0) & (g.stage == 2) & (g.tail == 1))[0][0])
    nu[link, 2] = 4.0
    st1 = update_virtual_queues(plane, VirtualQueueState.zeros(plane), nu,
                                np.zeros((2, 4)))
    assert (st1.causality[3] == 0).all()
    # the sender's queues do rise
    assert st1.causality[1, 2] == 4.0


def test_causality_prefix_column_zero():
    state = VirtualQueueState(0.0, np.array([[0.0, 1.0, 2.0, 4.0]]))
    pre = causality_prefix(state)
    assert pre.tolist() == [[0.0, 1.0, 3.0, 7.0]]


# ---- weights ----

def test_weight_formula_hand_value():
    plane, _ = _plane(gain=2.0, work=0.01, price=0.0)
    g = plane.graph
    cz = np.zeros((4, 4))
    cz[0, 1], cz[0, 2] = 3.0, 1.0     # prefix at node 0: [0, 3, 4, 4]
    cz[2, 1] = 2.0                    # prefix at node 2: [0, 2, 2, 2]
    state = VirtualQueueState(0.0, cz)
    w = compute_weights(plane, state, v=0.0)
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0) & (g.stage == 1))[0][0])
    # beta(tail)=1, rho=1: -prefix[0, l] + gain(1) * beta(head)=1 * prefix[2, l-1]
    assert w[link_01, 1] == pytest.approx(-3.0 + 0.0)
    assert w[link_01, 2] == pytest.approx(-4.0 + 2.0)
    assert w[link_01, 3] == pytest.approx(-4.0 + 2.0)


def test_weight_dest_head_uses_reliability():
    plane, _ = _plane(gain=2.0, work=0.01, price=0.0)
    g = plane.graph
    state = VirtualQueueState(5.0, np.zeros((4, 4)))
    w = compute_weights(plane, state, v=0.0)
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    # gain * beta(dest) * U_rel / rho = 2 * 0.5 * 5 / 0.01
    assert w[proc_at_1, 1] == pytest.approx(500.0)
    assert w[proc_at_1, 3] == pytest.approx(500.0)


def test_weight_price_penalty_scales_with_v():
    plane, _ = _plane(gain=1.0, price=0.25)
    w = compute_weights(plane, VirtualQueueState.zeros(plane), v=8.0)
    g = plane.graph
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0) & (g.stage == 1))[0][0])
    assert w[link_01, 2] == pytest.approx(-2.0)


def test_weight_blocked_entries():
    plane, _ = _plane()
    w = compute_weights(plane, VirtualQueueState.zeros(plane), v=1.0)
    g = plane.graph
    assert (w[:, 0] == -np.inf).all()
    assert (w[g.tail == plane.dest] == -np.inf).all()


# ---- max-weight assignment ----

def test_max_weight_grants_full_capacity_per_rho():
    plane, net = _plane(gain=2.0, work=0.01)
    idx = ResourceIndex.build(net, [plane])
    g = plane.graph
    w = np.full((g.num_edges, 4), -np.inf)
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0) & (g.stage == 1))[0][0])
    w[proc_at_1, 2] = 4.0
    w[link_01, 3] = 1.5
    nus = max_weight_assign(idx, [plane], [w], net.link_capacity,
                            net.cpu_capacity)
    assert nus[0][proc_at_1, 2] == pytest.approx(1.0 / 0.01)
    assert nus[0][link_01, 3] == pytest.approx(100.0)
    assert nus[0].sum() == pytest.approx(100.0 + 100.0)


def test_max_weight_skips_nonpositive_and_dead():
    plane, net = _plane()
    idx = ResourceIndex.build(net, [plane])
    w = np.zeros((plane.graph.num_edges, 4))
    nus = max_weight_assign(idx, [plane], [w], net.link_capacity,
                            net.cpu_capacity)
    assert nus[0].sum() == 0.0
    w[:] = 5.0
    nus = max_weight_assign(idx, [plane], [w], np.zeros(2), np.zeros(2))
    assert nus[0].sum() == 0.0


def test_max_weight_tie_breaks_lowest_lifetime_first():
    plane, net = _plane()
    g = plane.graph
    idx = ResourceIndex.build(net, [plane])
    w = np.full((g.num_edges, 4), -np.inf)
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0) & (g.stage == 1))[0][0])
    w[link_01, 1] = 2.0
    w[link_01, 3] = 2.0
    nus = max_weight_assign(idx, [plane], [w], net.link_capacity,
                            net.cpu_capacity)
    assert nus[0][link_01, 1] == 100.0
    assert nus[0][link_01, 3] == 0.0


@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
@settings(max_examples=120, deadline=None)
def test_max_weight_matches_reference(seed):
    """Two commodities over shared resources against the loop reference.
    Weights draw from a small discrete set so ties are common."""
    rng = np.random.default_rng(seed)
    net = two_node_network()
    svc_a = ServiceChain(gains=(2.0,), work=(0.01,))
    svc_b = ServiceChain(gains=(0.5, 1.5), work=(0.02, 0.01))
    pa = CommodityPlane(build_layered_graph(net, svc_a), dest=3,
                        max_lifetime=3, arrival_lifetimes=(3,), gamma_long=0.9)
    pb = CommodityPlane(build_layered_graph(net, svc_b), dest=5,
                        max_lifetime=4, arrival_lifetimes=(4,), gamma_long=0.8)
    planes = [pa, pb]
    weights = []
    for p in planes:
        w = np.full((p.graph.num_edges, p.max_lifetime + 1), -np.inf)
        kind = rng.choice(3, size=w[:, 1:].shape, p=[0.3, 0.2, 0.5])
        vals = rng.choice([-2.0, -1.0, 0.5, 1.0, 1.5, 2.0],
                          size=w[:, 1:].shape)
        w[:, 1:] = np.where(kind == 0, -np.inf,
                            np.where(kind == 1, 0.0, vals))
        weights.append(w)
    idx = ResourceIndex.build(net, planes)
    got = max_weight_assign(idx, planes, weights, net.link_capacity,
                            net.cpu_capacity)
    want = max_weight_reference(planes, weights, net.link_capacity,
                                net.cpu_capacity, net)
    for a, b in zip(got, want):
        np.testing.assert_allclose(a, b, rtol=0, atol=0)


def test_choose_v_builtin_value():
    from resrcnc.engine import _build_planes
    cfg = builtin_abilene()
    scn, pol, exp = cfg.to_runtime()
    planes = _build_planes(scn.network, scn, pol.scale_incoming)
    pc = choose_v(scn.network, planes, pol.v_raw)
    assert pc.v == pytest.approx(10192721590.92284, rel=1e-9)


def test_choose_v_components():
    plane, net = _plane(gain=2.0, work=0.01, price=0.25)
    pc = choose_v(net, [plane], v_raw=3.0)
    g = plane.graph
    proc = g.kind == 1
    caps = np.where(proc, net.cpu_capacity[np.where(proc, g.phys, 0)] ,
                    net.link_capacity[np.where(proc, 0, g.phys)])
    assert pc.c_avg == pytest.approx(float((caps / plane.rho).mean()))
    cost = g.price * plane.rho / plane.beta[g.tail]
    assert pc.e_avg == pytest.approx(float(cost.mean()))
    assert pc.v == pytest.approx(3.0 * pc.c_avg / pc.e_avg)
