import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resrcnc.model import (Commodity, ConfigError, OutageSpec, PhysicalNetwork,
                           ServiceChain, UnitSystem, apply_outage,
                           beta_weight, build_layered_graph, convert_rate)

from conftest import two_node_network

U = UnitSystem()  # 1 kbit packets, 14 ms slots


# ---- unit conversions ----

def test_gbps_to_pps_paper_values():
    assert U.gbps_to_pps(10.0) == pytest.approx(140000.0, rel=1e-12)
    assert U.gbps_to_pps(1.64) == pytest.approx(22960.0, rel=1e-12)
    assert U.gbps_to_pps(2.46) == pytest.approx(34440.0, rel=1e-12)


def test_price_and_workload_conversion():
    # 1 $/Gbps over 14 ms slots and 1 kbit packets
    assert U.price_per_gbps_to_per_packet(1.0) == pytest.approx(1.0 / 14000.0)
    # 1/500 CPU per Mbps: one packet/slot is 1000/0.014 bit/s
    assert U.workload_to_cpu_per_pps(1.0 / 500) == pytest.approx(
        (1000.0 / (1e6 * 0.014)) / 500)


def test_convert_rate_dispatch():
    assert convert_rate(U, 10.0, "gbps", "pps") == U.gbps_to_pps(10.0)
    assert convert_rate(U, 3.5, "pps", "pps") == 3.5
    with pytest.raises(ConfigError):
        convert_rate(U, 1.0, "gbps", "cpu/pps")


@given(st.floats(min_value=1e-6, max_value=1e6),
       st.floats(min_value=1e-2, max_value=1e5),
       st.floats(min_value=1e-4, max_value=10.0))
def test_rate_round_trip(gbps, bits, slot_s):
    u = UnitSystem(packet_bits=bits, slot_seconds=slot_s)
    back = u.pps_to_gbps(u.gbps_to_pps(gbps))
    assert back == pytest.approx(gbps, rel=1e-12)


def test_unit_validation():
    with pytest.raises(ConfigError):
        UnitSystem(packet_bits=0.0)
    with pytest.raises(ConfigError):
        UnitSystem(slot_seconds=-1.0)


# ---- service chains ----

def test_cumulative_gain_table():
    svc = ServiceChain(gains=(1.0, 2.3), work=(1 / 500, 1 / 800))
    assert svc.num_stages == 3
    assert svc.cumulative_gain(1) == 1.0
    assert svc.cumulative_gain(2) == 1.0
    assert svc.cumulative_gain(3) == pytest.approx(2.3)
    video = ServiceChain(gains=(1 / 3, 1 / 2), work=(1 / 340, 1 / 300))
    assert video.cumulative_gain(3) == pytest.approx(1 / 6)


def test_service_validation():
    with pytest.raises(ConfigError):
        ServiceChain(gains=(1.0,), work=())
    with pytest.raises(ConfigError):
        ServiceChain(gains=(0.0,), work=(1.0,))


def test_commodity_max_lifetime():
    c = Commodity(service=0, source=0, destination=1,
                  arrival_lifetimes=(6, 7), target_reliability=0.9)
    assert c.max_lifetime == 7


# ---- layered graphs ----

def test_layered_counts_two_functions():
    net = two_node_network()
    svc = ServiceChain(gains=(2.0, 0.5), work=(0.01, 0.02))
    g = build_layered_graph(net, svc)
    # 3 stages x 2 phys nodes; 2 directed links x 3 stages + 2 nodes x 2 funcs
    assert g.num_nodes == 6
    assert int((g.kind == 0).sum()) == 6
    assert int((g.kind == 1).sum()) == 4
    assert g.node_id(1, 3) == 5


def test_layered_gain_work_placement():
    net = two_node_network()
    svc = ServiceChain(gains=(2.0, 0.5), work=(0.01, 0.02))
    g = build_layered_graph(net, svc)
    trans = g.kind == 0
    assert (g.gain[trans] == 1.0).all() and (g.work[trans] == 1.0).all()
    proc1 = (g.kind == 1) & (g.stage == 1)
    proc2 = (g.kind == 1) & (g.stage == 2)
    assert (g.gain[proc1] == 2.0).all() and (g.work[proc1] == 0.01).all()
    assert (g.gain[proc2] == 0.5).all() and (g.work[proc2] == 0.02).all()


def test_stage_weights_inverse_cumulative_gain():
    net = two_node_network()
    svc = ServiceChain(gains=(1 / 3, 1 / 2), work=(0.01, 0.01))
    g = build_layered_graph(net, svc)
    w = g.stage_weights()
    assert w[g.node_id(0, 1)] == 1.0
    assert w[g.node_id(0, 2)] == pytest.approx(3.0)
    assert w[g.node_id(0, 3)] == pytest.approx(6.0)
    assert beta_weight(g, g.node_id(1, 3)) == pytest.approx(6.0)


@given(st.integers(min_value=2, max_value=6),
       st.integers(min_value=0, max_value=3),
       st.integers(min_value=1, max_value=3))
@settings(max_examples=40)
def test_layered_counts_random(nv, extra_links, m):
    # ring plus a few chords, bidirectional
    pairs = [(i, (i + 1) % nv) for i in range(nv)]
    pairs += [(i % nv, (i + 2) % nv) for i in range(extra_links)
              if i % nv != (i + 2) % nv]
    ends = []
    for a, b in pairs:
        ends += [[a, b], [b, a]]
    net = PhysicalNetwork(
        num_nodes=nv, edges=np.asarray(ends),
        link_capacity=np.full(len(ends), 10.0),
        link_price=np.zeros(len(ends)),
        cpu_capacity=np.full(nv, 1.0), cpu_price=np.zeros(nv))
    svc = ServiceChain(gains=(1.0,) * m, work=(0.1,) * m)
    g = build_layered_graph(net, svc)
    assert g.num_nodes == nv * (m + 1)
    assert g.num_edges == len(ends) * (m + 1) + nv * m
    # ids order by (phys, stage)
    assert (g.node_phys * g.num_stages + g.node_stage - 1
            == np.arange(g.num_nodes)).all()


# ---- outages ----

def _net4():
    edges = np.array([[0, 1], [1, 0], [1, 2], [2, 1], [2, 3], [3, 2],
                      [0, 3], [3, 0]])
    return PhysicalNetwork(
        num_nodes=4, edges=edges,
        link_capacity=np.arange(1.0, 9.0), link_price=np.zeros(8),
        cpu_capacity=np.full(4, 2.0), cpu_price=np.zeros(4))


def test_apply_outage_drops_adjacent_links():
    net = _net4()
    spec = OutageSpec(at=10, failed_nodes=(1,), failed_links=(), rate_scale=1.0)
    post, link_map = apply_outage(net, spec, ())
    assert post.num_nodes == 4
    assert not post.alive[1]
    assert post.cpu_capacity[1] == 0.0
    # links 0,1,2,3 touched node 1
    assert (link_map[:4] == -1).all()
    assert post.num_edges == 4
    kept = link_map[link_map >= 0]
    assert (post.link_capacity == net.link_capacity[4:]).all()
    assert (kept == np.arange(4)).all()


def test_apply_outage_failed_links_are_directed():
    net = _net4()
    spec = OutageSpec(at=0, failed_nodes=(), failed_links=((2, 3),),
                      rate_scale=1.0)
    post, link_map = apply_outage(net, spec, ())
    assert post.num_edges == 7
    assert link_map[4] == -1 and link_map[5] == 4


def test_apply_outage_rejects_dead_endpoint():
    net = _net4()
    com = Commodity(service=0, source=1, destination=3,
                    arrival_lifetimes=(3,), target_reliability=0.9)
    spec = OutageSpec(at=0, failed_nodes=(1,), failed_links=(), rate_scale=1.0)
    with pytest.raises(ConfigError):
        apply_outage(net, spec, (com,))


@given(st.integers(min_value=0, max_value=3), st.integers(min_value=1, max_value=3))
@settings(max_examples=30)
def test_outage_then_layer_equals_layer_masked(dead, m):
    """Building layers after an outage matches dropping the dead node's edges
    from the pre-outage layering."""
    net = _net4()
    svc = ServiceChain(gains=(1.5,) * m, work=(0.2,) * m)
    spec = OutageSpec(at=0, failed_nodes=(dead,), failed_links=(),
                      rate_scale=1.0)
    post, link_map = apply_outage(net, spec, ())
    g_post = build_layered_graph(post, svc)
    g_pre = build_layered_graph(net, svc)
    alive_pre = np.where(
        g_pre.kind == 0,
        np.asarray(link_map)[g_pre.phys] >= 0,
        g_pre.phys != dead)
    assert g_post.num_edges == int(alive_pre.sum())
    # surviving transmission copies keep their tail/head pairs
    pre_pairs = {(int(t), int(h), int(s))
                 for t, h, s, ok in zip(g_pre.tail, g_pre.head, g_pre.stage,
                                        alive_pre) if ok}
    post_pairs = {(int(t), int(h), int(s))
                  for t, h, s in zip(g_post.tail, g_post.head, g_post.stage)}
    assert post_pairs == pre_pairs


def test_network_validation():
    with pytest.raises(ConfigError):
        PhysicalNetwork(num_nodes=2, edges=np.array([[0, 1]]),
                        link_capacity=np.array([0.0]),
                        link_price=np.array([0.0]),
                        cpu_capacity=np.array([1.0, 1.0]),
                        cpu_price=np.array([0.0, 0.0]))
    with pytest.raises(ConfigError):
        PhysicalNetwork(num_nodes=2, edges=np.array([[0, 1]]),
                        link_capacity=np.array([1.0]),
                        link_price=np.array([-0.5]),
                        cpu_capacity=np.array([1.0, 1.0]),
                        cpu_price=np.array([0.0, 0.0]))
