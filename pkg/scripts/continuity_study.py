"""Control continuity at a priority swap under dt refinement, for each blend.

For a smooth switch the windowed max |du|/dt stays put as dt shrinks; for an
instantaneous switch the jump |du| stays put, so |du|/dt grows like 1/dt.
"""

import argparse
import csv
from pathlib import Path

from cbf_taskstack.scenario import parse_scenario
from cbf_taskstack.sim import continuity_report, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="swap_7dof")
    ap.add_argument("--dt", type=float, nargs="+", default=[1e-3, 5e-4, 2.5e-4])
    ap.add_argument("--blend", nargs="+", default=["sequential", "entrywise", "step"])
    ap.add_argument("--out", default="results/continuity.csv")
    args = ap.parse_args()

    base = parse_scenario(args.scenario)
    swap_time = base.schedule.segments[1][0]
    rows = []
    for blend in args.blend:
        for dt in args.dt:
            trace = run(base.with_overrides(dt=dt, blend=blend))
            row = {"blend": blend, "dt": dt, "status": "ok" if trace.ok else trace.failure}
            if len(trace) >= 2 and trace.times[-1] > swap_time:
                ev = continuity_report(trace).for_event("reprioritize", swap_time)
                row.update(window_max=ev.window_max, jump=ev.jump)
            rows.append(row)
            print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["blend", "dt", "status", "window_max", "jump"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"summary: {out}")


if __name__ == "__main__":
    main()
