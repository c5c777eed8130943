"""Command line: run, sweep, validate, list-scenarios.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .controller import compute_control
from .errors import BehindCamera, ParseError, TaskStackError, ValidationError
from .kinematics import DynamicsModel, RobotState
from .scenario import list_scenarios, parse_scenario, scenario_dir
from .sim import build_report, continuity_report, invariance_report, priority_report, run, to_csv

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _load(path):
    try:
        return parse_scenario(path), None
    except ParseError as exc:
        return None, [str(exc)]
    except ValidationError as exc:
        return None, list(exc.errors)


def _report_invalid(errors):
    for msg in errors:
        print(f"error: {msg}", file=sys.stderr)
    return EXIT_INVALID


def cmd_run(args) -> int:
    sc, errors = _load(args.scenario)
    if errors:
        return _report_invalid(errors)
    try:
        sc = sc.with_overrides(dt=args.dt, horizon=args.horizon)
    except ValidationError as exc:
        return _report_invalid(exc.errors)
    out = Path(args.out or sc.outputs.get("trace") or f"{sc.name}_trace.csv")
    report_path = Path(args.report) if args.report else out.with_name(sc.outputs.get("report", "report.txt"))
    out.parent.mkdir(parents=True, exist_ok=True)
    trace = run(sc)
    to_csv(trace, out)
    report = build_report(trace, sc.tasks, sc.name)
    report_path.write_text(report.to_text())
    print(report.to_text(), end="")
    print(f"trace: {out}\nreport: {report_path}")
    if not trace.ok:
        print(f"error: {trace.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _sweep_one(job):
    path, overrides = job
    sc = parse_scenario(path).with_overrides(**overrides)
    trace = run(sc)
    row = {
        "dt": sc.dt,
        "kappa": sc.schedule.kappa,
        "l": sc.controller.l,
        "status": "ok" if trace.ok else trace.failure,
        "steps": len(trace),
    }
    if len(trace) >= 2:
        cont = continuity_report(trace)
        row["max_increment"] = cont.max_increment
        for ev in cont.events:
            row[f"window_max_{ev.event.name.replace(' ', '_')}@{ev.event.time:g}"] = ev.window_max
            row[f"jump_{ev.event.name.replace(' ', '_')}@{ev.event.time:g}"] = ev.jump
    for label, value in invariance_report(trace, sc.tasks).min_h.items():
        row[f"min_h_{label}"] = value
    prio = priority_report(trace, sc.schedule)
    row["priority_max_excess"] = prio.max_excess if prio.checked else ""
    row["priority_max_ratio"] = prio.max_ratio if prio.checked else ""
    for label, value in build_report(trace, sc.tasks, sc.name).final_errors.items():
        row[f"final_error_{label}"] = value
    return row


def cmd_sweep(args) -> int:
    sc, errors = _load(args.scenario)
    if errors:
        return _report_invalid(errors)
    path = str(Path(args.scenario) if Path(args.scenario).exists() else Path(scenario_dir()) / Path(args.scenario).name)
    grid = list(itertools.product(args.dt or [None], args.kappa or [None], args.l or [None]))
    jobs = [(path, {"dt": dt, "kappa": kappa, "l": l, "horizon": args.horizon}) for dt, kappa, l in grid]
    try:
        for _, overrides in jobs:
            sc.with_overrides(**overrides)
    except ValidationError as exc:
        return _report_invalid(exc.errors)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    fields = []
    for row in rows:
        fields += [k for k in row if k not in fields]
    out = Path(args.out or f"{sc.name}_sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} runs, {len(failed)} failed; summary: {out}")
    for r in failed:
        print(f"error: dt={r['dt']} kappa={r['kappa']} l={r['l']}: {r['status']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_validate(args) -> int:
    sc, errors = _load(args.scenario)
    if errors:
        return _report_invalid(errors)
    print(f"{sc.name}: valid ({len(sc.tasks)} tasks, {len(sc.schedule.segments)} stack segments)")
    if not args.random_states:
        return EXIT_OK
    rng = np.random.default_rng(args.seed)
    lo, hi = sc.robot.limits_lower, sc.robot.limits_upper
    dyn = DynamicsModel()
    problems = skipped = 0
    for i in range(args.random_states):
        q = lo + (hi - lo) * rng.uniform(0.02, 0.98, size=lo.size)
        t = float(rng.uniform(0.0, sc.horizon))
        try:
            out = compute_control(sc.tasks, sc.schedule, RobotState(q, t), dyn, t, sc.controller)
        except BehindCamera:
            # a pose that hides the target has no image task to evaluate
            skipped += 1
            continue
        except TaskStackError as exc:
            print(f"error: state {i} (t={t:g}): {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        if not np.all(np.isfinite(out.u_star)) or np.any(out.delta_star[[t.safety_critical for t in sc.tasks]] != 0):
            problems += 1
            print(f"error: state {i}: non-finite control or non-zero safety slack", file=sys.stderr)
            continue
        if sc.schedule.in_transition(t):
            continue
        stack = sc.schedule.stack_at(t)
        rho = sc.schedule.gains(t)
        for m, n in stack.order:
            if rho[m] == 1.0 and rho[n] == 1.0 and out.delta_star[m] > out.delta_star[n] / stack.kappa + 1e-8:
                problems += 1
                print(f"error: state {i}: slack order {sc.labels[m]} before {sc.labels[n]} violated", file=sys.stderr)
    print(f"{args.random_states} random states (seed {args.seed}): {problems} problems, {skipped} skipped (target behind camera)")
    return EXIT_INVALID if problems else EXIT_OK


def cmd_list(args) -> int:
    print(f"scenario directory: {scenario_dir()}")
    for name in list_scenarios():
        try:
            desc = parse_scenario(name).description
        except (ParseError, ValidationError) as exc:
            desc = f"(invalid: {str(exc).splitlines()[0]})"
        print(f"{name}: {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbf-taskstack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario, write the trace CSV and a text report")
    p.add_argument("scenario")
    p.add_argument("--out", help="trace CSV path (report.txt is written next to it)")
    p.add_argument("--report", help="report path")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of dt/kappa/l values and write a summary CSV")
    p.add_argument("scenario")
    p.add_argument("--dt", type=float, nargs="+")
    p.add_argument("--kappa", type=float, nargs="+")
    p.add_argument("--l", type=float, nargs="+")
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", help="summary CSV path")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a scenario file, optionally solve at random states")
    p.add_argument("scenario")
    p.add_argument("--random-states", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TaskStackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
