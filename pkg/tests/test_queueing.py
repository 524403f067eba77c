import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resrcnc.model import ServiceChain, SimulationError, build_layered_graph
from resrcnc.queueing import (CommodityLedger, QueueOps, advance_queues,
                              conservation_report, drop_node_queues,
                              timely_delivery)

from conftest import two_node_network


def _ops(gain=2.0, work=0.01, scale_incoming=True):
    net = two_node_network()
    g = build_layered_graph(net, ServiceChain(gains=(gain,), work=(work,)))
    # layered ids: (phys 0, st 1)=0, (0,2)=1, (1,1)=2, (1,2)=3; dest = node 1 st 2
    return QueueOps(graph=g, dest=3, scale_incoming=scale_incoming)


def _z(ops, L=3):
    return np.zeros((ops.graph.num_nodes, L + 1))


def test_aging_shifts_left_and_expires():
    ops = _ops()
    q = _z(ops)
    q[0, 3] = 5.0
    q[2, 1] = 2.0
    flows = np.zeros((ops.graph.num_edges, 4))
    nq, delivered, expired = advance_queues(ops, q, flows, _z(ops))
    assert delivered == 0.0
    assert expired == 2.0
    assert nq[0, 2] == 5.0 and nq[0, 3] == 0.0
    assert nq[2].sum() == 0.0
    assert (nq[:, 0] == 0).all()


def test_delivery_applies_processing_gain():
    """Sending 4 packets through node 1's function (gain 2) delivers 8."""
    ops = _ops(gain=2.0)
    g = ops.graph
    q = _z(ops)
    q[2, 2] = 4.0
    flows = np.zeros((g.num_edges, 4))
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    assert g.head[proc_at_1] == 3
    flows[proc_at_1, 2] = 4.0
    nq, delivered, expired = advance_queues(ops, q, flows, _z(ops))
    assert delivered == pytest.approx(8.0)
    assert expired == 0.0
    assert nq.sum() == 0.0
    assert timely_delivery(ops, flows) == pytest.approx(8.0)


def test_unscaled_incoming_variant():
    ops = _ops(gain=2.0, scale_incoming=False)
    g = ops.graph
    q = _z(ops)
    q[2, 2] = 4.0
    flows = np.zeros((g.num_edges, 4))
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    flows[proc_at_1, 2] = 4.0
    _, delivered, _ = advance_queues(ops, q, flows, _z(ops))
    assert delivered == pytest.approx(4.0)


def test_transmission_keeps_lifetime_column_then_ages():
    ops = _ops()
    g = ops.graph
    q = _z(ops)
    q[0, 2] = 3.0
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    flows = np.zeros((g.num_edges, 4))
    flows[link_01, 2] = 3.0
    nq, delivered, expired = advance_queues(ops, q, flows, _z(ops))
    # arrives at node 1 stage 1 with life 2, ages to 1
    assert delivered == 0.0 and expired == 0.0
    assert nq[2, 1] == 3.0


def test_arrivals_enter_next_slot():
    ops = _ops()
    arr = _z(ops)
    arr[0, 3] = 7.0
    nq, _, _ = advance_queues(ops, _z(ops), np.zeros((ops.graph.num_edges, 4)), arr)
    assert nq[0, 3] == 7.0


def test_negative_flow_raises():
    ops = _ops()
    flows = np.zeros((ops.graph.num_edges, 4))
    flows[0, 2] = -1e-3
    with pytest.raises(SimulationError):
        advance_queues(ops, _z(ops), flows, _z(ops))


def test_availability_violation_raises():
    ops = _ops()
    q = _z(ops)
    q[0, 2] = 1.0
    flows = np.zeros((ops.graph.num_edges, 4))
    g = ops.graph
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    flows[link_01, 2] = 1.5
    with pytest.raises(SimulationError):
        advance_queues(ops, q, flows, _z(ops), slot=9)


def test_availability_tolerates_rounding():
    ops = _ops()
    q = _z(ops)
    q[0, 2] = 1.0
    g = ops.graph
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    flows = np.zeros((g.num_edges, 4))
    flows[link_01, 2] = 1.0 + 1e-8
    advance_queues(ops, q, flows, _z(ops))


def test_drop_node_queues_ledger():
    ops = _ops(gain=2.0)
    q = _z(ops)
    q[2, 2] = 4.0   # stage 1 at node 1, mass weight 1
    q[1, 3] = 6.0   # stage 2 at node 0, mass weight 1/2
    led = CommodityLedger()
    out = drop_node_queues(ops, q, {1}, led)
    assert out[2].sum() == 0.0
    assert out[1, 3] == 6.0
    assert led.lost == 4.0
    assert led.lost_mass == pytest.approx(4.0)
    out2 = drop_node_queues(ops, out, {0}, led)
    assert out2.sum() == 0.0
    assert led.lost_mass == pytest.approx(4.0 + 3.0)


@st.composite
def random_run(draw):
    steps = draw(st.integers(min_value=1, max_value=12))
    arrivals, sends = [], []
    for _ in range(steps):
        arrivals.append(draw(st.lists(
            st.floats(min_value=0, max_value=9), min_size=3, max_size=3)))
        sends.append(draw(st.floats(min_value=0, max_value=1)))
    return arrivals, sends


@given(random_run())
@settings(max_examples=50, deadline=None)
def test_mass_conservation_property(run):
    """Inject at the source, greedily push through link then CPU; the
    source-packet mass ledger closes to float precision."""
    arrivals, sends = run
    ops = _ops(gain=2.0)
    g = ops.graph
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    led = CommodityLedger()
    q = _z(ops)
    for arr3, frac in zip(arrivals, sends):
        flows = np.zeros((g.num_edges, 4))
        flows[link_01, 1:] = q[0, 1:] * frac
        flows[proc_at_1, 1:] = q[2, 1:] * frac
        nxt = _z(ops)
        nxt[0, 1:] = arr3
        q, _, _ = advance_queues(ops, q, flows, nxt, led)
    rep = conservation_report(ops, led, q)
    assert abs(rep["relative_residual"]) <= 1e-9
    assert rep["injected"] == pytest.approx(sum(sum(a) for a in arrivals))


def test_conservation_report_terms():
    ops = _ops(gain=2.0)
    g = ops.graph
    led = CommodityLedger()
    q = _z(ops)
    nxt = _z(ops)
    nxt[0, 3] = 10.0
    q, _, _ = advance_queues(ops, q, np.zeros((g.num_edges, 4)), nxt, led)
    link_01 = int(np.where((g.kind == 0) & (g.tail == 0))[0][0])
    flows = np.zeros((g.num_edges, 4))
    flows[link_01, 3] = 4.0
    q, _, _ = advance_queues(ops, q, flows, _z(ops), led)
    proc_at_1 = int(np.where((g.kind == 1) & (g.phys == 1))[0][0])
    flows = np.zeros((g.num_edges, 4))
    flows[proc_at_1, 2] = 4.0
    q, delivered, _ = advance_queues(ops, q, flows, _z(ops), led)
    assert delivered == 8.0
    rep = conservation_report(ops, led, q)
    assert rep["injected"] == 10.0
    assert rep["delivered"] == pytest.approx(4.0)   # 8 packets x mass 1/2
    assert rep["backlog"] == pytest.approx(6.0)     # 6 stranded at the source
    # let the stragglers expire
    for _ in range(3):
        q, _, _ = advance_queues(ops, q, np.zeros((g.num_edges, 4)), _z(ops), led)
    rep = conservation_report(ops, led, q)
    assert rep["expired"] == pytest.approx(6.0)
    assert abs(rep["relative_residual"]) <= 1e-12
