"""Scenario runner CLI: run simulations, sweep parameters, query the oracle.

Subcommands::

    soze-sim run <scenario.yaml> [--set key=value]... [--out DIR]
    soze-sim sweep <scenario.yaml> --param NAME --values a,b,c [--out DIR]
    soze-sim oracle <scenario.yaml> [--set key=value]...

Exit codes: 0 success, 2 configuration error, 3 convergence required but not
reached.  ``SOZE_SIM_THREADS`` caps how many sweep instances run at once.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import yaml

from . import metrics
from .control import check_lemma_conditions
from .fluid import FluidSimulation, Trace, _atomic_write
from .model import FlowSpec
from .oracle import AllocationResult, water_fill
from .scenario import (
    Scenario,
    ScenarioError,
    apply_sweep_value,
    load_scenario,
    scenario_from_dict,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNCONVERGED = 3


def _epoch_boundaries(flows: list[FlowSpec], end_time: float) -> list[float]:
    marks = {0.0}
    for f in flows:
        marks.add(f.start_time)
        if f.stop_time is not None and f.stop_time < end_time:
            marks.add(f.stop_time)
        for t, _ in f.weight_schedule:
            if 0.0 <= t < end_time:
                marks.add(t)
    return sorted(m for m in marks if m < end_time)


def _active_flows(flows: list[FlowSpec], t: float) -> list[FlowSpec]:
    return [
        f for f in flows
        if f.start_time <= t and (f.stop_time is None or f.stop_time > t)
    ]


def epoch_allocations(
    scenario: Scenario,
) -> list[tuple[float, float, list[FlowSpec], AllocationResult | None]]:
    """Water-filling allocation for every event epoch of the scenario."""
    end = scenario.sim.end_time
    bounds = _epoch_boundaries(scenario.flows, end)
    out = []
    for i, t0 in enumerate(bounds):
        t1 = bounds[i + 1] if i + 1 < len(bounds) else end
        active = _active_flows(scenario.flows, t0)
        if active:
            weights = {f.id: f.weight_at(t0) for f in active}
            alloc = water_fill(scenario.topology, active, weights)
        else:
            alloc = None
        out.append((t0, t1, active, alloc))
    return out


def summarize_run(scenario: Scenario, engine: FluidSimulation, trace: Trace,
                  wall_time: float) -> dict:
    """Build the summary report: per-epoch oracle tables and convergence."""
    params = engine.params
    gate = float(engine.gate.max())
    lemma = check_lemma_conditions(
        params if params.update_interval is not None
        else replace(params, update_interval=gate)
    )
    epochs = []
    all_converged = True
    for t0, t1, active, alloc in epoch_allocations(scenario):
        entry: dict = {"start": t0, "end": t1,
                       "flows": [f.id for f in active]}
        if alloc is None:
            entry["oracle"] = None
            epochs.append(entry)
            continue
        entry["oracle"] = alloc.as_dict()
        try:
            report = metrics.convergence_time(
                trace,
                alloc,
                eps=scenario.convergence_eps,
                window=scenario.convergence_window,
                start=t0,
                end=t1,
                after=t0,
            )
            entry["convergence"] = report.as_dict()
            all_converged = all_converged and report.converged
        except ValueError as exc:
            entry["convergence"] = {"converged": False, "error": str(exc)}
            all_converged = False
        epochs.append(entry)

    return {
        "scenario": scenario.name,
        "wall_time_s": wall_time,
        "control": {
            "p": params.p, "k": params.k, "m": params.m,
            "alpha": params.alpha, "beta": params.beta,
            "update_interval": params.update_interval,
            "rate_floor": params.rate_floor, "rate_cap": params.rate_cap,
        },
        "sim": {
            "dt": scenario.sim.dt,
            "end_time": scenario.sim.end_time,
            "signal_delay_mode": scenario.sim.signal_delay_mode,
            "update_mode": scenario.sim.update_mode,
            "seed": scenario.sim.seed,
            "sampling_interval": trace.sampling_interval,
        },
        "lemma_report": lemma.as_dict(),
        "epochs": epochs,
        "require_converged": scenario.require_converged,
        "all_converged": all_converged,
    }


@dataclass
class RunOutput:
    scenario: Scenario
    trace: Trace
    summary: dict
    trace_path: str
    summary_path: str


def execute_scenario(scenario: Scenario, out_dir: str,
                     tag: str | None = None) -> RunOutput:
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    engine = FluidSimulation(scenario.topology, scenario.flows, scenario.sim)
    trace = engine.run()
    wall = time.perf_counter() - t0
    summary = summarize_run(scenario, engine, trace, wall)
    stem = tag if tag is not None else scenario.name
    trace_path = os.path.join(out_dir, scenario.trace_name or f"{stem}.trace.csv")
    summary_path = os.path.join(
        out_dir, scenario.summary_name or f"{stem}.summary.json"
    )
    if tag is not None:
        trace_path = os.path.join(out_dir, f"{stem}.trace.csv")
        summary_path = os.path.join(out_dir, f"{stem}.summary.json")
    trace.to_csv(trace_path)
    _atomic_write(summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunOutput(scenario, trace, summary, trace_path, summary_path)


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario, overrides=args.set or ())
        result = execute_scenario(scenario, args.out)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = result.summary
    print(f"scenario: {summary['scenario']}")
    print(f"trace:    {result.trace_path}")
    print(f"summary:  {result.summary_path}")
    for ep in summary["epochs"]:
        conv = ep.get("convergence") or {}
        rates = (ep.get("oracle") or {}).get("rates", {})
        pretty = ", ".join(f"{fid}={r / 1e9:.2f}G" for fid, r in rates.items())
        print(
            f"  epoch [{ep['start']:.6g}, {ep['end']:.6g}s) "
            f"converged={conv.get('converged')} "
            f"err={conv.get('final_fairness_error', float('nan')):.4g} "
            f"oracle: {pretty}"
        )
    if scenario.require_converged and not summary["all_converged"]:
        print("convergence required but not reached", file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def _sweep_worker(payload):
    raw, param, value, out_dir, overrides = payload
    scenario = scenario_from_dict(raw, overrides=overrides)
    apply_sweep_value(scenario.raw, param, value)
    scenario = scenario_from_dict(scenario.raw)
    tag = f"{scenario.name}.{param}={value}"
    result = execute_scenario(scenario, out_dir, tag=tag)
    summary = result.summary
    last_conv: dict = {}
    for ep in summary["epochs"]:
        if ep.get("convergence"):
            last_conv = ep["convergence"]
    return {
        "param": param,
        "value": value,
        "converged": summary["all_converged"],
        "convergence_rtts": last_conv.get("convergence_rtts"),
        "final_fairness_error": last_conv.get("final_fairness_error"),
        "wall_time_s": summary["wall_time_s"],
        "summary_path": result.summary_path,
    }


def cmd_sweep(args) -> int:
    values = [v for v in (args.values or "").split(",") if v != ""]
    if not values:
        print("error: empty sweep value list", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.scenario) as fh:
            raw = yaml.safe_load(fh)
        parsed_values = [yaml.safe_load(v) for v in values]
        # validate the base scenario and the parameter name up front
        base = scenario_from_dict(raw, overrides=args.set or ())
        apply_sweep_value(copy.deepcopy(base.raw), args.param, parsed_values[0])
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    payloads = [
        (raw, args.param, v, args.out, args.set or ()) for v in parsed_values
    ]
    workers = _thread_cap(len(payloads))
    rows: list[dict]
    try:
        if workers <= 1:
            rows = [_sweep_worker(p) for p in payloads]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_sweep_worker, payloads))
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    sweep_path = os.path.join(args.out, f"{base.name}.sweep_{args.param}.json")
    _atomic_write(sweep_path, json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(f"sweep summary: {sweep_path}")
    for row in rows:
        print(
            f"  {args.param}={row['value']}: converged={row['converged']} "
            f"rtts={row['convergence_rtts']} err={row['final_fairness_error']}"
        )
    return EXIT_OK


def _thread_cap(n_tasks: int) -> int:
    env = os.environ.get("SOZE_SIM_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            cap = 1
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def cmd_oracle(args) -> int:
    try:
        scenario = load_scenario(args.scenario, overrides=args.set or ())
        table = []
        for t0, t1, active, alloc in epoch_allocations(scenario):
            table.append({
                "start": t0,
                "end": t1,
                "flows": [f.id for f in active],
                "allocation": alloc.as_dict() if alloc else None,
            })
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"scenario": scenario.name, "epochs": table},
                     indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soze-sim",
        description="Fluid-model weighted bandwidth allocation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario across parameter values")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated")
    p_sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_sweep.add_argument("--out", default=".")
    p_sweep.set_defaults(func=cmd_sweep)

    p_oracle = sub.add_parser("oracle", help="print the allocation without simulating")
    p_oracle.add_argument("scenario")
    p_oracle.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_oracle.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
