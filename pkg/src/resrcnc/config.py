"""Scenario configuration: schema, validation, the bundled Abilene setup,
canonical hashing, and conversion to runtime objects.

Configs stay in paper-comparable units (Gbps, CPU, ms, kbit); conversion to
canonical packets/slot happens once in ``to_runtime``.  Numeric fields accept
plain numbers or "p/q" fraction strings, so workloads like 1/340 survive
review without decimal noise.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .engine import PolicyParams, Scenario
from .metrics import ReliabilitySpec
from .model import (Commodity, ConfigError, OutageSpec, PhysicalNetwork,
                    ServiceChain, UnitSystem)
from .traffic import ArrivalProcess

_POLICY_DEFAULTS = {
    "variant": "resrcnc", "frame_len": 2000, "lookahead": 2, "v_raw": 5.0,
    "memory_span": 500, "r_min_tr": 1000.0, "r_min_pr": 0.1, "kappa": 0.5,
    "capacity_floor": 0.01, "lp_backend": "auto", "scale_incoming": True,
}
_EXPERIMENT_DEFAULTS = {
    "horizon": 100000, "trials": 128, "master_seed": 1729, "window": 500,
    "gamma_short": 0.9, "recover_after": 4000, "p_resil": 0.9,
}


def _num(value, path: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and "/" in value:
        num, _, den = value.partition("/")
        try:
            return float(num) / float(den)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{path}: bad fraction {value!r}") from None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


def _int(value, path: str) -> int:
    f = _num(value, path)
    if f != int(f):
        raise ConfigError(f"{path}: expected an integer")
    return int(f)


def _get(d: dict, key: str, path: str, default=None):
    if key not in d:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}: missing")
    return d[key]


@dataclass(frozen=True)
class ExperimentParams:
    horizon: int
    trials: int
    master_seed: int
    window: int
    gamma_short: float
    recover_after: int
    p_resil: float


class ScenarioConfig:
    """Validated, normalized scenario document."""

    def __init__(self, data: dict):
        self.data = _normalize(data)

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and self.data == other.data

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.data, sort_keys=True))

    def with_overrides(self, trials: int | None = None, horizon: int | None = None,
                       outage_at: int | None = None,
                       lambda_scale: float | None = None,
                       variant: str | None = None,
                       master_seed: int | None = None) -> "ScenarioConfig":
        data = json.loads(json.dumps(self.data))
        if trials is not None:
            data["experiment"]["trials"] = trials
        if horizon is not None:
            data["experiment"]["horizon"] = horizon
        if outage_at is not None:
            if "outage" not in data:
                raise ConfigError("outage.at: no outage section to override")
            data["outage"]["at"] = outage_at
        if lambda_scale is not None:
            if "outage" not in data:
                raise ConfigError("outage.rate_scale: no outage section to override")
            data["outage"]["rate_scale"] = lambda_scale
        if variant is not None:
            data["policy"]["variant"] = variant
        if master_seed is not None:
            data["experiment"]["master_seed"] = master_seed
        return ScenarioConfig(data)

    # -- runtime conversion --

    def to_runtime(self) -> tuple[Scenario, PolicyParams, ExperimentParams]:
        d = self.data
        u = d["units"]
        units = UnitSystem(packet_bits=u["packet_kbit"] * 1000.0,
                           slot_seconds=u["slot_ms"] / 1000.0)
        net = d["network"]
        nv = net["num_nodes"]
        ends, caps, prices = [], [], []
        for link in net["links"]:
            a, b = link["ends"]
            for i, j in ((a, b), (b, a)):
                ends.append((i - 1, j - 1))
                caps.append(units.gbps_to_pps(link["capacity_gbps"]))
                prices.append(units.price_per_gbps_to_per_packet(
                    link["price_per_gbps"]))
        cpu_cap = np.full(nv, float(net["cpu_capacity"])) \
            if np.isscalar(net["cpu_capacity"]) \
            else np.asarray(net["cpu_capacity"], dtype=float)
        cpu_price = np.full(nv, float(net["cpu_price"])) \
            if np.isscalar(net["cpu_price"]) \
            else np.asarray(net["cpu_price"], dtype=float)
        network = PhysicalNetwork(
            num_nodes=nv, edges=np.asarray(ends, dtype=np.int64),
            link_capacity=np.asarray(caps), link_price=np.asarray(prices),
            cpu_capacity=cpu_cap, cpu_price=cpu_price)
        services = tuple(
            ServiceChain(gains=tuple(s["scaling"]),
                         work=tuple(units.workload_to_cpu_per_pps(w)
                                    for w in s["workload_cpu_per_mbps"]))
            for s in d["services"])
        commodities = tuple(
            Commodity(service=c["service"] - 1, source=c["source"] - 1,
                      destination=c["destination"] - 1,
                      arrival_lifetimes=tuple(c["lifetimes"]),
                      target_reliability=c["gamma_long"])
            for c in d["commodities"])
        per_lifetime = d["rate_interpretation"] == "per_lifetime"
        rates = []
        for c, cd in zip(commodities, d["commodities"]):
            r = np.zeros((nv, c.max_lifetime + 1))
            pps = units.gbps_to_pps(cd["rate_gbps"])
            if not per_lifetime:
                pps /= len(c.arrival_lifetimes)
            for l in c.arrival_lifetimes:
                r[c.source, l] = pps
            rates.append(r)
        outage = None
        if "outage" in d:
            o = d["outage"]
            outage = OutageSpec(
                at=o["at"],
                failed_nodes=tuple(n - 1 for n in o.get("failed_nodes", [])),
                failed_links=tuple((a - 1, b - 1)
                                   for a, b in o.get("failed_links", [])),
                rate_scale=o["rate_scale"])
        scale = outage.rate_scale if outage is not None else 1.0
        arrivals = ArrivalProcess(
            rates=rates, post_rates=[r * scale for r in rates],
            outage_at=outage.at if outage is not None else None)
        p = d["policy"]
        policy = PolicyParams(
            variant=p["variant"], frame_len=p["frame_len"],
            lookahead=p["lookahead"], v_raw=p["v_raw"],
            memory_span=p["memory_span"], r_min_tr=p["r_min_tr"],
            r_min_pr=p["r_min_pr"], kappa=p["kappa"],
            capacity_floor=p["capacity_floor"], lp_backend=p["lp_backend"],
            scale_incoming=p["scale_incoming"])
        e = d["experiment"]
        exp = ExperimentParams(
            horizon=e["horizon"], trials=e["trials"],
            master_seed=e["master_seed"], window=e["window"],
            gamma_short=e["gamma_short"], recover_after=e["recover_after"],
            p_resil=e["p_resil"])
        scenario = Scenario(network=network, services=services,
                            commodities=commodities, arrivals=arrivals,
                            outage=outage)
        return scenario, policy, exp

    def reliability_spec(self) -> ReliabilitySpec:
        _, _, exp = self.to_runtime()
        return ReliabilitySpec(
            gamma_long=tuple(c["gamma_long"] for c in self.data["commodities"]),
            gamma_short=exp.gamma_short, window=exp.window,
            recover_after=exp.recover_after, p_resil=exp.p_resil,
            num_trials=exp.trials)


def _normalize(data: dict) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    out: dict = {}
    u = data.get("units", {})
    out["units"] = {"packet_kbit": _num(u.get("packet_kbit", 1.0), "units.packet_kbit"),
                    "slot_ms": _num(u.get("slot_ms", 14.0), "units.slot_ms")}
    if out["units"]["packet_kbit"] <= 0 or out["units"]["slot_ms"] <= 0:
        raise ConfigError("units: packet_kbit and slot_ms must be positive")

    net = _get(data, "network", "")
    nv = _int(_get(net, "num_nodes", "network"), "network.num_nodes")
    if nv < 2:
        raise ConfigError("network.num_nodes: need at least 2 nodes")
    links = _get(net, "links", "network")
    if not isinstance(links, list) or not links:
        raise ConfigError("network.links: need a non-empty list")
    norm_links = []
    seen = set()
    for i, link in enumerate(links):
        path = f"network.links[{i}]"
        ends = _get(link, "ends", path)
        if (not isinstance(ends, (list, tuple)) or len(ends) != 2):
            raise ConfigError(f"{path}.ends: expected [a, b]")
        a, b = (_int(ends[0], f"{path}.ends"), _int(ends[1], f"{path}.ends"))
        if not (1 <= a <= nv and 1 <= b <= nv):
            raise ConfigError(f"{path}.ends: node outside 1..{nv}")
        if a == b:
            raise ConfigError(f"{path}.ends: self-loop")
        if (min(a, b), max(a, b)) in seen:
            raise ConfigError(f"{path}.ends: duplicate link {a}-{b}")
        seen.add((min(a, b), max(a, b)))
        cap = _num(_get(link, "capacity_gbps", path), f"{path}.capacity_gbps")
        price = _num(_get(link, "price_per_gbps", path), f"{path}.price_per_gbps")
        if cap <= 0 or price < 0:
            raise ConfigError(f"{path}: capacity must be positive, price >= 0")
        norm_links.append({"ends": [a, b], "capacity_gbps": cap,
                           "price_per_gbps": price})
    out["network"] = {
        "num_nodes": nv,
        "links": norm_links,
        "cpu_capacity": _num(_get(net, "cpu_capacity", "network"),
                             "network.cpu_capacity"),
        "cpu_price": _num(_get(net, "cpu_price", "network"), "network.cpu_price"),
    }
    if "node_names" in net:
        out["network"]["node_names"] = {str(k): str(v)
                                        for k, v in net["node_names"].items()}

    services = _get(data, "services", "")
    if not isinstance(services, list) or not services:
        raise ConfigError("services: need a non-empty list")
    out["services"] = []
    for i, s in enumerate(services):
        path = f"services[{i}]"
        scaling = [_num(v, f"{path}.scaling") for v in _get(s, "scaling", path)]
        work = [_num(v, f"{path}.workload_cpu_per_mbps")
                for v in _get(s, "workload_cpu_per_mbps", path)]
        if len(scaling) != len(work):
            raise ConfigError(f"{path}: scaling and workload lengths differ")
        if any(v <= 0 for v in scaling + work):
            raise ConfigError(f"{path}: scaling factors and workloads must be positive")
        entry = {"scaling": scaling, "workload_cpu_per_mbps": work}
        if "name" in s:
            entry["name"] = str(s["name"])
        out["services"].append(entry)

    commodities = _get(data, "commodities", "")
    if not isinstance(commodities, list) or not commodities:
        raise ConfigError("commodities: need a non-empty list")
    out["commodities"] = []
    for i, c in enumerate(commodities):
        path = f"commodities[{i}]"
        svc = _int(_get(c, "service", path), f"{path}.service")
        if not 1 <= svc <= len(out["services"]):
            raise ConfigError(f"{path}.service: unknown service {svc}")
        src = _int(_get(c, "source", path), f"{path}.source")
        dst = _int(_get(c, "destination", path), f"{path}.destination")
        for label, node in (("source", src), ("destination", dst)):
            if not 1 <= node <= nv:
                raise ConfigError(f"{path}.{label}: node {node} outside 1..{nv}")
        if src == dst:
            raise ConfigError(f"{path}: source equals destination")
        lifetimes = sorted(_int(v, f"{path}.lifetimes")
                           for v in _get(c, "lifetimes", path))
        if not lifetimes or lifetimes[0] < 1:
            raise ConfigError(f"{path}.lifetimes: need lifetimes >= 1")
        rate = _num(_get(c, "rate_gbps", path), f"{path}.rate_gbps")
        if rate < 0:
            raise ConfigError(f"{path}.rate_gbps: must be >= 0")
        gamma = _num(c.get("gamma_long", 0.9), f"{path}.gamma_long")
        if not 0 <= gamma <= 1:
            raise ConfigError(f"{path}.gamma_long: outside [0, 1]")
        out["commodities"].append({
            "service": svc, "source": src, "destination": dst,
            "rate_gbps": rate, "lifetimes": lifetimes, "gamma_long": gamma})

    mode = data.get("rate_interpretation", "per_lifetime")
    if mode not in ("per_lifetime", "aggregate"):
        raise ConfigError("rate_interpretation: per_lifetime or aggregate")
    out["rate_interpretation"] = mode

    if "outage" in data:
        o = data["outage"]
        path = "outage"
        at = _int(_get(o, "at", path), "outage.at")
        failed_nodes = [_int(v, "outage.failed_nodes")
                        for v in o.get("failed_nodes", [])]
        for n in failed_nodes:
            if not 1 <= n <= nv:
                raise ConfigError(f"outage.failed_nodes: node {n} outside 1..{nv}")
            for i, c in enumerate(out["commodities"]):
                if n in (c["source"], c["destination"]):
                    raise ConfigError(
                        f"outage.failed_nodes: node {n} is an endpoint of "
                        f"commodities[{i}]")
        failed_links = [[_int(a, "outage.failed_links"), _int(b, "outage.failed_links")]
                        for a, b in o.get("failed_links", [])]
        scale = _num(o.get("rate_scale", 1.0), "outage.rate_scale")
        if at < 0 or scale < 0:
            raise ConfigError("outage: at and rate_scale must be >= 0")
        out["outage"] = {"at": at, "failed_nodes": sorted(failed_nodes),
                         "failed_links": failed_links, "rate_scale": scale}

    pol = dict(_POLICY_DEFAULTS)
    for k, v in data.get("policy", {}).items():
        if k not in _POLICY_DEFAULTS:
            raise ConfigError(f"policy.{k}: unknown key")
        pol[k] = v
    for k in ("frame_len", "lookahead", "memory_span"):
        pol[k] = _int(pol[k], f"policy.{k}")
    for k in ("v_raw", "r_min_tr", "r_min_pr", "kappa", "capacity_floor"):
        pol[k] = _num(pol[k], f"policy.{k}")
    if pol["variant"] not in ("resrcnc", "rcnc"):
        raise ConfigError(f"policy.variant: unknown variant {pol['variant']!r}")
    if not 0.0 <= pol["capacity_floor"] < 1.0:
        raise ConfigError("policy.capacity_floor: outside [0, 1)")
    out["policy"] = pol

    exp = dict(_EXPERIMENT_DEFAULTS)
    for k, v in data.get("experiment", {}).items():
        if k not in _EXPERIMENT_DEFAULTS:
            raise ConfigError(f"experiment.{k}: unknown key")
        exp[k] = v
    for k in ("horizon", "trials", "master_seed", "window", "recover_after"):
        exp[k] = _int(exp[k], f"experiment.{k}")
    for k in ("gamma_short", "p_resil"):
        exp[k] = _num(exp[k], f"experiment.{k}")
    if exp["horizon"] < 0 or exp["trials"] < 1 or exp["window"] < 1:
        raise ConfigError("experiment: horizon >= 0, trials >= 1, window >= 1")
    out["experiment"] = exp
    return out


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config parse error in {p}: {exc}") from None
    return ScenarioConfig(data)


_ABILENE_LINKS = [(3, 1), (3, 5), (1, 5), (1, 2), (2, 4), (5, 6), (4, 6),
                  (4, 7), (6, 10), (10, 7), (10, 8), (8, 9), (7, 11), (11, 9)]
_ABILENE_NAMES = {1: "Sunnyvale", 2: "Los Angeles", 3: "Seattle", 4: "Houston",
                  5: "Denver", 6: "Kansas City", 7: "Atlanta", 8: "Chicago",
                  9: "New York", 10: "Indianapolis", 11: "Washington DC"}


def builtin_abilene() -> ScenarioConfig:
    """The bundled 11-node scenario: two service chains, six commodities,
    node-6 outage at 45000 with arrivals scaled to 0.75."""
    pairs = [(1, 7), (2, 10), (4, 11)]
    commodities = []
    for svc, rate in ((1, 1.64), (2, 2.46)):
        for src, dst in pairs:
            commodities.append({
                "service": svc, "source": src, "destination": dst,
                "rate_gbps": rate, "lifetimes": [6, 7], "gamma_long": 0.9})
    return ScenarioConfig({
        "units": {"packet_kbit": 1.0, "slot_ms": 14.0},
        "network": {
            "num_nodes": 11,
            "node_names": _ABILENE_NAMES,
            "links": [{"ends": list(ab), "capacity_gbps": 10.0,
                       "price_per_gbps": 1.0} for ab in _ABILENE_LINKS],
            "cpu_capacity": 20.0,
            "cpu_price": 0.5,
        },
        "services": [
            {"name": "packet-security", "scaling": [1.0, 2.3],
             "workload_cpu_per_mbps": ["1/500", "1/800"]},
            {"name": "video-streaming", "scaling": ["1/3", "1/2"],
             "workload_cpu_per_mbps": ["1/340", "1/300"]},
        ],
        "commodities": commodities,
        "outage": {"at": 45000, "failed_nodes": [6], "rate_scale": 0.75},
        "policy": {},
        "experiment": {},
    })


BUILTIN_SCENARIOS = {"abilene": builtin_abilene}


def get_scenario(name_or_path: str) -> ScenarioConfig:
    if name_or_path in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[name_or_path]()
    return load_config(name_or_path)
