import numpy as np
import pytest

from resrcnc.engine import PolicyParams, Scenario
from resrcnc.model import Commodity, OutageSpec, PhysicalNetwork, ServiceChain
from resrcnc.traffic import ArrivalProcess


def two_node_network(link_pps: float = 100.0, cpu: float = 1.0,
                     link_price: float = 0.01,
                     cpu_price: float = 0.5) -> PhysicalNetwork:
    edges = np.array([[0, 1], [1, 0]])
    return PhysicalNetwork(
        num_nodes=2, edges=edges,
        link_capacity=np.full(2, link_pps),
        link_price=np.full(2, link_price),
        cpu_capacity=np.full(2, cpu),
        cpu_price=np.full(2, cpu_price))


def small_policy(**kw) -> PolicyParams:
    base = dict(variant="resrcnc", frame_len=50, lookahead=2, v_raw=5.0,
                memory_span=100, r_min_tr=1.0, r_min_pr=0.01, kappa=0.5)
    base.update(kw)
    return PolicyParams(**base)


def two_node_scenario(load: float = 0.5, lifetime: int = 3,
                      gamma: float = 0.9, work: float = 0.005,
                      gain: float = 1.0,
                      outage_at: int | None = None) -> Scenario:
    """One service function between two nodes.  The link (100 pps) binds
    before the CPU (1 / 0.005 = 200 pps), so ``load`` is the link load."""
    net = two_node_network()
    svc = ServiceChain(gains=(gain,), work=(work,))
    com = Commodity(service=0, source=0, destination=1,
                    arrival_lifetimes=(lifetime,), target_reliability=gamma)
    rate = np.zeros((2, lifetime + 1))
    rate[0, lifetime] = load * 100.0
    outage = None
    if outage_at is not None:
        outage = OutageSpec(at=outage_at, failed_nodes=(), failed_links=(),
                            rate_scale=0.75)
    arr = ArrivalProcess(rates=[rate], post_rates=[rate * (0.75 if outage else 1.0)],
                         outage_at=outage_at)
    return Scenario(network=net, services=(svc,), commodities=(com,),
                    arrivals=arr, outage=outage)


def line3_network(cpu=(2.0, 2.0, 2.0)) -> PhysicalNetwork:
    edges = np.array([[0, 1], [1, 0], [1, 2], [2, 1]])
    return PhysicalNetwork(
        num_nodes=3, edges=edges,
        link_capacity=np.full(4, 80.0), link_price=np.full(4, 0.02),
        cpu_capacity=np.asarray(cpu, dtype=float),
        cpu_price=np.full(3, 0.5))


def line3_scenario(load: float = 0.4) -> Scenario:
    """Source 0, destination 2, two functions; middle node can process."""
    net = line3_network()
    svc = ServiceChain(gains=(2.0, 0.5), work=(0.01, 0.02))
    com = Commodity(service=0, source=0, destination=2,
                    arrival_lifetimes=(5, 6), target_reliability=0.9)
    rate = np.zeros((3, 7))
    rate[0, 5] = load * 40.0
    rate[0, 6] = load * 40.0
    arr = ArrivalProcess(rates=[rate], post_rates=[rate])
    return Scenario(network=net, services=(svc,), commodities=(com,),
                    arrivals=arr)


def diamond_scenario(load: float = 0.4, outage_at: int | None = None,
                     rate_scale: float = 0.75) -> Scenario:
    """0 -> {1, 2} -> 3 with one function; node 1 fails at the outage,
    leaving the 0 -> 2 -> 3 detour."""
    edges = np.array([[0, 1], [1, 0], [0, 2], [2, 0], [1, 3], [3, 1],
                      [2, 3], [3, 2]])
    net = PhysicalNetwork(
        num_nodes=4, edges=edges,
        link_capacity=np.full(8, 60.0), link_price=np.full(8, 0.02),
        cpu_capacity=np.full(4, 1.5), cpu_price=np.full(4, 0.5))
    svc = ServiceChain(gains=(1.0,), work=(0.01,))
    com = Commodity(service=0, source=0, destination=3,
                    arrival_lifetimes=(4, 5), target_reliability=0.9)
    rate = np.zeros((4, 6))
    rate[0, 4] = load * 30.0
    rate[0, 5] = load * 30.0
    outage = None
    post = rate
    if outage_at is not None:
        outage = OutageSpec(at=outage_at, failed_nodes=(1,), failed_links=(),
                            rate_scale=rate_scale)
        post = rate * rate_scale
    arr = ArrivalProcess(rates=[rate], post_rates=[post], outage_at=outage_at)
    return Scenario(network=net, services=(svc,), commodities=(com,),
                    arrivals=arr, outage=outage)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
