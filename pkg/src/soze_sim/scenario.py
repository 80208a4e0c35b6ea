"""Scenario files: schema, validation, overrides, and flow generation.

A scenario is one YAML document describing a topology, flows, controller
constants, and simulation settings.  All values on the wire are plain SI
units -- seconds and bits/s -- never microseconds or Gbps.  See the README
for the full schema.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .baselines import AimdConfig
from .control import ControlParams
from .fluid import SimConfig
from .model import (
    FlowSpec,
    Topology,
    build_topology,
    fat_tree,
    hosts_of,
    route_flow,
    star,
    validate_flow,
)


class ScenarioError(ValueError):
    """Configuration problem; the message names the offending field."""


@dataclass
class Scenario:
    name: str
    topology: Topology
    flows: list[FlowSpec]
    sim: SimConfig
    require_converged: bool = False
    convergence_eps: float = 0.05
    convergence_window: int = 20
    trace_name: str | None = None
    summary_name: str | None = None
    raw: dict = field(default_factory=dict)


def load_scenario(path: str, overrides: Sequence[str] = ()) -> Scenario:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return scenario_from_dict(raw, overrides=overrides)


def apply_override(raw: dict, spec: str) -> None:
    """Apply one ``dotted.path=value`` override in place.

    Path segments that parse as integers index into lists; values are parsed
    as YAML so ``--set control.m=1.5`` and ``--set flows.0.weight=2`` work.
    """
    if "=" not in spec:
        raise ScenarioError(f"override {spec!r}: expected key=value")
    key, _, text = spec.partition("=")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"override {key}: unparsable value {text!r}") from exc
    parts = key.split(".")
    node: Any = raw
    for i, part in enumerate(parts[:-1]):
        nxt = _descend(node, part, key)
        if nxt is None:
            nxt = {} if not parts[i + 1].isdigit() else []
            _assign(node, part, nxt, key)
        node = nxt
    _assign(node, parts[-1], value, key)


def _descend(node: Any, part: str, key: str) -> Any:
    if isinstance(node, list):
        if not part.isdigit() or int(part) >= len(node):
            raise ScenarioError(f"override {key}: bad list index {part!r}")
        return node[int(part)]
    if isinstance(node, dict):
        return node.get(part)
    raise ScenarioError(f"override {key}: {part!r} is not a container")


def _assign(node: Any, part: str, value: Any, key: str) -> None:
    if isinstance(node, list):
        if not part.isdigit() or int(part) >= len(node):
            raise ScenarioError(f"override {key}: bad list index {part!r}")
        node[int(part)] = value
    elif isinstance(node, dict):
        node[part] = value
    else:
        raise ScenarioError(f"override {key}: cannot assign into {type(node)}")


SWEEP_PARAMS = ("m", "p", "k", "flow_count", "K", "initial_rate")


def apply_sweep_value(raw: dict, param: str, value: Any) -> None:
    """Point one sweepable parameter at ``value`` inside the raw scenario."""
    if param in ("m", "p", "k"):
        raw.setdefault("control", {})[param] = value
    elif param == "K":
        topo = raw.get("topology", {})
        if topo.get("kind") != "fat_tree":
            raise ScenarioError("sweep K: topology.kind must be fat_tree")
        topo["K"] = value
    elif param == "flow_count":
        groups = raw.get("flow_groups")
        if not groups:
            raise ScenarioError("sweep flow_count: scenario has no flow_groups")
        groups[0]["count"] = value
    elif param == "initial_rate":
        for f in raw.get("flows", []):
            f["initial_rate"] = value
        for g in raw.get("flow_groups", []):
            g["initial_rate"] = value
            g.pop("initial_rate_total", None)
    else:
        raise ScenarioError(
            f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}"
        )


def _need(raw: Mapping, key: str, path: str) -> Any:
    if key not in raw:
        raise ScenarioError(f"{path}.{key}: missing")
    return raw[key]


def _number(raw: Mapping, key: str, path: str, default=None) -> Any:
    value = raw.get(key, default)
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.{key}: expected a number, got {value!r}")


def _build_topology_section(raw: Mapping) -> Topology:
    kind = raw.get("kind", "inline")
    if kind == "star":
        n = int(_need(raw, "n", "topology"))
        return star(n, _number(raw, "bandwidth", "topology", 100e9),
                    _number(raw, "prop_delay", "topology", 1e-6))
    if kind == "fat_tree":
        K = int(_need(raw, "K", "topology"))
        return fat_tree(K, _number(raw, "bandwidth", "topology", 100e9),
                        _number(raw, "prop_delay", "topology", 1e-6))
    if kind == "inline":
        return build_topology(raw)
    raise ScenarioError(f"topology.kind: unknown kind {kind!r}")


def _weight_schedule(entry: Mapping, start: float, path: str):
    if "weight_schedule" in entry:
        sched = entry["weight_schedule"]
        try:
            return tuple((float(t), float(w)) for t, w in sched)
        except (TypeError, ValueError):
            raise ScenarioError(f"{path}.weight_schedule: expected [time, weight] pairs")
    w = _number(entry, "weight", path, 1.0)
    return ((min(0.0, start), w),)


def _resolve_route(
    topology: Topology, entry: Mapping, fid: str, seed: int, path: str
):
    if "route" in entry:
        return tuple(str(x) for x in entry["route"])
    src = entry.get("src")
    dst = entry.get("dst")
    if src is None or dst is None:
        raise ScenarioError(f"{path}: need either 'route' or 'src'+'dst'")
    return route_flow(topology, str(src), str(dst), seed=seed, flow_id=fid)


def _expand_group(
    topology: Topology,
    group: Mapping,
    gi: int,
    seed: int,
    rng: np.random.Generator,
    default_controller: str,
) -> list[FlowSpec]:
    path = f"flow_groups[{gi}]"
    count = int(_need(group, "count", path))
    if count < 1:
        raise ScenarioError(f"{path}.count: must be >= 1")
    prefix = str(group.get("id_prefix", f"g{gi}"))
    hosts = hosts_of(topology)
    start0 = _number(group, "start", path, 0.0)
    stagger = group.get("start_stagger")
    init = _number(group, "initial_rate", path, None)
    init_total = _number(group, "initial_rate_total", path, None)
    flows: list[FlowSpec] = []
    for i in range(count):
        fid = f"{prefix}_{i}"
        src, dst = group.get("src"), group.get("dst")
        if src == "random" or dst == "random":
            if len(hosts) < 2:
                raise ScenarioError(f"{path}: random endpoints need >= 2 hosts")
            a, b = (int(x) for x in rng.choice(len(hosts), size=2, replace=False))
            if src == "random":
                src = hosts[a] if hosts[a] != dst else hosts[b]
            if dst == "random":
                dst = hosts[b] if hosts[b] != src else hosts[a]
        wspec = group.get("weight", 1.0)
        if isinstance(wspec, Mapping) and "uniform" in wspec:
            lo, hi = wspec["uniform"]
            weight = float(rng.uniform(float(lo), float(hi)))
        else:
            weight = float(wspec)
        start = start0
        if stagger:
            batches = int(_need(stagger, "batches", f"{path}.start_stagger"))
            interval = _number(stagger, "interval", f"{path}.start_stagger", 0.0)
            start = start0 + (i * batches // count) * interval
        entry = {"src": src, "dst": dst}
        route = _resolve_route(topology, entry, fid, seed, f"{path}[{i}]")
        rate = init if init is not None else (
            init_total / count if init_total is not None else None
        )
        flows.append(
            FlowSpec(
                id=fid,
                route=route,
                weight_schedule=((min(0.0, start), weight),),
                start_time=start,
                stop_time=_number(group, "stop", path, None),
                controller=str(group.get("controller", default_controller)),
                initial_rate=rate,
            )
        )
    return flows


def scenario_from_dict(raw: dict, overrides: Sequence[str] = ()) -> Scenario:
    raw = copy.deepcopy(raw)
    for spec in overrides:
        apply_override(raw, spec)

    name = str(raw.get("name", "scenario"))
    if "topology" not in raw:
        raise ScenarioError("topology: missing")
    try:
        topology = _build_topology_section(raw["topology"])
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"topology: {exc}") from exc

    sim_raw = raw.get("sim", {})
    ctrl_raw = raw.get("control", {})
    aimd_raw = raw.get("aimd", {})
    seed = int(sim_raw.get("seed", 0))
    default_controller = str(raw.get("default_controller", "soze"))
    rng = np.random.default_rng(seed)

    flows: list[FlowSpec] = []
    for i, entry in enumerate(raw.get("flows", []) or []):
        path = f"flows[{i}]"
        if not isinstance(entry, Mapping):
            raise ScenarioError(f"{path}: expected a mapping")
        fid = str(entry.get("id", f"f{i}"))
        start = _number(entry, "start", path, 0.0)
        try:
            route = _resolve_route(topology, entry, fid, seed, path)
        except ValueError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        flows.append(
            FlowSpec(
                id=fid,
                route=route,
                weight_schedule=_weight_schedule(entry, start, path),
                start_time=start,
                stop_time=_number(entry, "stop", path, None),
                controller=str(entry.get("controller", default_controller)),
                initial_rate=_number(entry, "initial_rate", path, None),
            )
        )
    for gi, group in enumerate(raw.get("flow_groups", []) or []):
        flows.extend(
            _expand_group(topology, group, gi, seed, rng, default_controller)
        )

    ids = [f.id for f in flows]
    if len(set(ids)) != len(ids):
        dup = sorted({x for x in ids if ids.count(x) > 1})
        raise ScenarioError(f"flows: duplicate ids {dup}")
    for f in flows:
        try:
            validate_flow(topology, f)
        except ValueError as exc:
            raise ScenarioError(f"flows[{f.id}]: {exc}") from exc

    try:
        control = ControlParams(
            p=_number(ctrl_raw, "p", "control", 20e-6),
            k=_number(ctrl_raw, "k", "control", 3e-6),
            m=_number(ctrl_raw, "m", "control", 0.25),
            alpha=_number(ctrl_raw, "alpha", "control", None),
            beta=_number(ctrl_raw, "beta", "control", None),
            update_interval=_number(ctrl_raw, "update_interval", "control", None),
            rate_floor=_number(ctrl_raw, "rate_floor", "control", 1e6),
            rate_cap=_number(ctrl_raw, "rate_cap", "control", None),
        )
        control.validate()
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"control: {exc}") from exc

    try:
        aimd = AimdConfig(
            threshold=_number(aimd_raw, "threshold", "aimd", 20e-6),
            md=_number(aimd_raw, "md", "aimd", 0.20),
            packet_size=_number(aimd_raw, "packet_size", "aimd", 8000.0),
        )
        aimd.validate()
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"aimd: {exc}") from exc

    if "dt" not in sim_raw or "end_time" not in sim_raw:
        raise ScenarioError("sim: need both 'dt' and 'end_time'")
    try:
        sim = SimConfig(
            dt=_number(sim_raw, "dt", "sim"),
            end_time=_number(sim_raw, "end_time", "sim"),
            control=control,
            signal_delay_mode=str(sim_raw.get("signal_delay_mode", "fixed_rtt")),
            update_mode=str(sim_raw.get("update_mode", "per_rtt")),
            packet_size=_number(sim_raw, "packet_size", "sim", 8000.0),
            seed=seed,
            sampling_interval=_number(sim_raw, "sampling_interval", "sim", None),
            aimd=aimd,
        )
        sim.validate()
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"sim: {exc}") from exc

    conv = raw.get("convergence", {}) or {}
    outputs = raw.get("outputs", {}) or {}
    return Scenario(
        name=name,
        topology=topology,
        flows=flows,
        sim=sim,
        require_converged=bool(raw.get("require_converged", False)),
        convergence_eps=float(conv.get("eps", 0.05)),
        convergence_window=int(conv.get("window", 20)),
        trace_name=outputs.get("trace"),
        summary_name=outputs.get("summary"),
        raw=raw,
    )
