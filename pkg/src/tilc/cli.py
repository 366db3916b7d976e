"""Command-line entry point: simulate, tune, compare, map, export."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from typing import List, Optional


from .config import load_problem
from .harness import (METHODS, TuningProblem, calibrate_gamma_u, compare, evaluate_constraint, evaluate_cost,
                      metrics, rng_for, NOISE, twin_run, tune)
from .optim import write_log
from .refgen import build_static_map
from .til import PidGains, TilLoop, TilTrace, vehicle_trajectory_columns

MODES = {"mpc-on-twin": "mpc", "mpc-open-loop-on-vehicle": "open-loop", "mpc-on-vehicle": "mpc-on-vehicle",
         "til": "til"}


def _parse_gains(text: Optional[str], path: Optional[str]) -> Optional[PidGains]:
    if path:
        with open(path) as fh:
            doc = json.load(fh)
        g = doc.get("gains", doc)
        return PidGains(float(g["k_p"]), float(g["T_I"]), float(g["T_D"]))
    if text:
        kp, ti, td = (float(v) for v in text.split(","))
        return PidGains(kp, ti, td)
    return None


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=lambda o: None if isinstance(o, float) and not math.isfinite(o) else o)


def cmd_simulate(args, problem: TuningProblem) -> dict:
    if args.identical:
        problem = replace(problem, setup=problem.setup.identical_plants())
    man = problem.get_maneuver() if args.maneuver is None else replace(problem, maneuver=args.maneuver).get_maneuver()
    name = args.maneuver or problem.maneuver
    mode = MODES[args.mode]
    gains = _parse_gains(args.gains, args.gains_file)
    if mode == "til" and gains is None:
        raise ValueError("til mode needs --gains or --gains-file")
    twin = None if mode == "mpc" else twin_run(name, problem.setup)
    trace = TilLoop(man, problem.setup, gains, rng_for(args.seed, NOISE, 0, 0), mode, twin).run()
    os.makedirs(args.out, exist_ok=True)
    trace.to_csv(os.path.join(args.out, "trace.csv"))
    row = metrics(trace).as_dict()
    doc = {"maneuver": name, "mode": args.mode, "gains": None if gains is None else gains.__dict__,
           "metrics": row, "f_bo": evaluate_cost(trace, problem.gamma_u),
           "g_c": evaluate_constraint(trace, problem.beta_max)}
    _write_json(os.path.join(args.out, "metrics.json"), doc)
    return doc


def cmd_tune(args, problem: TuningProblem) -> dict:
    res = tune(args.method, problem, args.seed, args.repeat, budget=args.budget)
    os.makedirs(args.out, exist_ok=True)
    write_log(res.history, os.path.join(args.out, "history.csv"), problem.space.names)
    gains = res.gains
    doc = {"method": args.method, "seed": args.seed, "repeat": args.repeat,
           "gains": None if gains is None else {"k_p": gains.k_p, "T_I": gains.T_I, "T_D": gains.T_D},
           "f_best": res.f_best, "evaluations": len(res.history),
           "infeasible": sum(0 if r.feasible else 1 for r in res.history)}
    _write_json(os.path.join(args.out, "result.json"), doc)
    return doc


def cmd_compare(args, problem: TuningProblem) -> dict:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    report = compare(methods, problem, args.repeats, args.seed, args.store_traces, args.budget)
    report.write(args.out, args.store_traces)
    return {"out": args.out, "methods": methods,
            "final_incumbent": {m: (report.summaries[m].curve[-1] if report.summaries[m].curve else None)
                                for m in methods},
            "errors": {m: report.summaries[m].errors for m in methods}}


def cmd_map(args, problem: TuningProblem) -> dict:
    ymap = build_static_map(problem.setup.params)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "static_map.csv")
    ymap.to_csv(path)
    return {"out": path, "speeds": len(ymap.speeds), "steers": len(ymap.steers)}


def cmd_export(args, problem: TuningProblem) -> dict:
    trace = TilTrace.from_csv(args.trace, problem.setup.Ts)
    os.makedirs(args.out, exist_ok=True)
    row = metrics(trace).as_dict()
    with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
        fh.write("rms_r_deg_s,rms_beta_deg,rms_sdot_deg_s\n")
        fh.write(f"{row['rms_r']!r},{row['rms_beta']!r},{row['rms_sdot']!r}\n")
    cols = vehicle_trajectory_columns(trace)
    TilTrace(cols, trace.Ts).to_csv(os.path.join(args.out, "vehicle_trajectory.csv"))
    doc = {"metrics": row, "f_bo": evaluate_cost(trace, problem.gamma_u),
           "g_c": evaluate_constraint(trace, problem.beta_max)}
    if args.calibrate:
        doc["gamma_u_equal_terms"] = calibrate_gamma_u(trace)
    _write_json(os.path.join(args.out, "metrics.json"), doc)
    return doc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tilc", description="Twin-in-the-loop yaw-rate control tuning workbench")
    p.add_argument("--config", help="TOML experiment configuration")
    p.add_argument("--seed", type=int, default=0, help="root seed (non-negative integer)")
    p.add_argument("--out", default="out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one maneuver with one controller mode")
    s.add_argument("--mode", choices=sorted(MODES), default="til")
    s.add_argument("--maneuver", help="dlc120, dlc140 or chicane (default from config)")
    s.add_argument("--gains", help="k_p,T_I,T_D")
    s.add_argument("--gains-file", help="JSON with k_p, T_I, T_D (e.g. a tune result.json)")
    s.add_argument("--identical", action="store_true", help="vehicle identical to the twin, no noise")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("tune", help="tune the compensator with one method")
    t.add_argument("--method", choices=METHODS, required=True)
    t.add_argument("--budget", type=int, help="iterations (default from config)")
    t.add_argument("--repeat", type=int, default=0, help="repeat index selecting the noise stream")
    t.set_defaults(func=cmd_tune)

    c = sub.add_parser("compare", help="seeded multi-repeat comparison of methods")
    c.add_argument("--methods", default="smgo,cbo", help="comma-separated list")
    c.add_argument("--repeats", type=int)
    c.add_argument("--budget", type=int)
    c.add_argument("--store-traces", action="store_true", help="keep per-evaluation sideslip traces")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("map", help="build the static yaw-rate map")
    m.set_defaults(func=cmd_map)

    e = sub.add_parser("export", help="metrics and vehicle trajectory from a stored trace")
    e.add_argument("--trace", required=True, help="trace.csv written by simulate")
    e.add_argument("--calibrate", action="store_true", help="also report the equal-terms steer-rate weight")
    e.set_defaults(func=cmd_export)
    return p


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed < 0:
            raise ValueError("--seed must be non-negative")
        problem = load_problem(args.config)
        doc = args.func(args, problem)
    except Exception as exc:
        err = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **doc},
                     default=lambda o: None if isinstance(o, float) and not math.isfinite(o) else str(o)))
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
