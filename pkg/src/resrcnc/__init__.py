"""Discrete-time simulator and control library for reliable, outage-resilient
cloud network control of service function chains with per-packet lifetimes.

Two policy variants share the engine: ``resrcnc`` (virtual/actual two-layer
control with frame-based capacity adaptation and flow matching) and ``rcnc``
(the non-resilient baseline it degrades to without the matching safeguards).
"""
from .config import ScenarioConfig, builtin_abilene, get_scenario, load_config
from .engine import PolicyParams, Scenario, TrialResult, run_trial
from .model import (Commodity, ConfigError, OutageSpec, PhysicalNetwork,
                    ServiceChain, SimulationError, UnitSystem,
                    apply_outage, build_layered_graph)

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig", "builtin_abilene", "get_scenario", "load_config",
    "PolicyParams", "Scenario", "TrialResult", "run_trial",
    "Commodity", "ConfigError", "OutageSpec", "PhysicalNetwork",
    "ServiceChain", "SimulationError", "UnitSystem",
    "apply_outage", "build_layered_graph",
    "__version__",
]
