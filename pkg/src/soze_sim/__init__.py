"""Fluid-model network simulator and verification harness for decentralized
weighted bandwidth allocation, with a centralized water-filling oracle."""

from .baselines import AimdConfig, AimdState, aimd_adjust
from .control import (
    ControlParams,
    LemmaReport,
    adjust_rate,
    check_lemma_conditions,
    inverse_target,
    target_delay,
    update_ratio,
)
from .fluid import (
    FluidSimulation,
    LinkState,
    SimConfig,
    Trace,
    initial_rate,
    link_step,
    max_qd,
    run,
)
from .metrics import (
    ConvergenceReport,
    convergence_time,
    mean_rates,
    target_delay_error,
    utilization,
)
from .model import (
    FlowSpec,
    FlowState,
    Link,
    Topology,
    base_rtt,
    build_topology,
    fat_tree,
    route_flow,
    star,
)
from .oracle import (
    AllocationResult,
    bottleneck_of,
    fairness_error,
    verify_goal_equivalence,
    water_fill,
)
from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict

__all__ = [
    "AimdConfig",
    "AimdState",
    "AllocationResult",
    "ControlParams",
    "ConvergenceReport",
    "FlowSpec",
    "FlowState",
    "FluidSimulation",
    "LemmaReport",
    "Link",
    "LinkState",
    "Scenario",
    "ScenarioError",
    "SimConfig",
    "Topology",
    "Trace",
    "adjust_rate",
    "aimd_adjust",
    "base_rtt",
    "bottleneck_of",
    "build_topology",
    "check_lemma_conditions",
    "convergence_time",
    "fairness_error",
    "fat_tree",
    "initial_rate",
    "inverse_target",
    "link_step",
    "load_scenario",
    "max_qd",
    "mean_rates",
    "route_flow",
    "run",
    "scenario_from_dict",
    "star",
    "target_delay",
    "target_delay_error",
    "update_ratio",
    "utilization",
    "verify_goal_equivalence",
    "water_fill",
]

__version__ = "0.1.0"
