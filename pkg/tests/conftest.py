"""Shared builders for the test suite."""

from __future__ import annotations

import os

import pytest

from soze_sim import ControlParams, FlowSpec, SimConfig, Topology, build_topology

SCENARIO_DIR = os.path.join(
    os.path.dirname(__file__), "..", "src", "soze_sim", "scenarios"
)


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, f"{name}.yaml")


def single_link(bandwidth: float = 100e9, prop_delay: float = 0.25e-6) -> Topology:
    return build_topology({
        "nodes": ["a", "b"],
        "links": [{"src": "a", "dst": "b", "bandwidth": bandwidth,
                   "prop_delay": prop_delay}],
    })


def two_switch() -> Topology:
    """The two-contention-link scenario topology: 6 hosts, 2 switches.

    x1: h1 -> h5 crosses the s1->s2 trunk only; x2..x4: h2..h4 -> h6 cross
    the trunk and the s2->h6 egress; x5, x6: h5 -> h6 use the egress only.
    """
    links = [
        {"src": "h1", "dst": "s1"}, {"src": "h2", "dst": "s1"},
        {"src": "h3", "dst": "s1"}, {"src": "h4", "dst": "s1"},
        {"src": "s1", "dst": "s2"}, {"src": "s2", "dst": "h5"},
        {"src": "s2", "dst": "h6"},
    ]
    for l in links:
        l.update({"bandwidth": 100e9, "prop_delay": 0.2e-6})
    return build_topology({
        "nodes": ["h1", "h2", "h3", "h4", "h5", "h6", "s1", "s2"],
        "links": links,
    })


def two_switch_flows(w1: float = 1.0) -> list[FlowSpec]:
    return [
        FlowSpec("x1", ("h1->s1", "s1->s2", "s2->h5"), ((0.0, w1),)),
        FlowSpec("x2", ("h2->s1", "s1->s2", "s2->h6"), ((0.0, 1.0),)),
        FlowSpec("x3", ("h3->s1", "s1->s2", "s2->h6"), ((0.0, 1.0),)),
        FlowSpec("x4", ("h4->s1", "s1->s2", "s2->h6"), ((0.0, 1.0),)),
        FlowSpec("x5", ("h5->s2", "s2->h6"), ((0.0, 1.0),)),
        FlowSpec("x6", ("h5->s2", "s2->h6"), ((0.0, 1.0),)),
    ]


def flow_on_link(fid: str, weight: float = 1.0, **kw) -> FlowSpec:
    return FlowSpec(fid, ("a->b",), ((0.0, weight),), **kw)


def default_params(**kw) -> ControlParams:
    base = dict(p=20e-6, k=3e-6, m=0.25, alpha=100e9, beta=0.1e9)
    base.update(kw)
    return ControlParams(**base)


def quick_sim(dt: float = 0.125e-6, end: float = 1.5e-3, **kw) -> SimConfig:
    control = kw.pop("control", ControlParams())
    return SimConfig(dt=dt, end_time=end, control=control, **kw)


@pytest.fixture
def tmp_out(tmp_path):
    return str(tmp_path)
