"""Closed-loop simulation under zero-order hold, trace logging and reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import Controller, ControllerConfig
from .errors import DimensionMismatch, TaskStackError
from .kinematics import DynamicsModel, RobotState
from .priority import STEP, PrioritySchedule
from .tasks import JointBox, Setpoint, Tracking

INVARIANCE_TOL = 1e-6


def step(state: RobotState, u, dt, dyn: DynamicsModel = None) -> RobotState:
    """Explicit Euler; exact for the single integrator under zero-order hold."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    u = np.asarray(u, dtype=float).reshape(-1)
    q = state.q
    if dyn is None or dyn.is_single_integrator:
        if u.size != q.size:
            raise DimensionMismatch(f"control has {u.size} entries, state has {q.size}")
        return RobotState(q + u * dt, state.t + dt)
    G = dyn.g(q)
    if u.size != G.shape[1]:
        raise DimensionMismatch(f"control has {u.size} entries, input map expects {G.shape[1]}")
    return RobotState(q + (dyn.f(q) + G @ u) * dt, state.t + dt)


@dataclass(frozen=True)
class Event:
    time: float
    duration: float
    name: str


def schedule_events(schedule: PrioritySchedule, labels) -> list:
    events = []
    for r in schedule.ramps:
        if r.kind == "insert":
            events.append(Event(r.time, r.duration, f"insert {labels[r.task]}"))
        else:
            events.append(Event(r.time - r.duration, r.duration, f"remove {labels[r.task]}"))
    for t0, _ in schedule.segments[1:]:
        duration = 0.0 if schedule.blend == STEP else schedule.transition
        events.append(Event(t0, duration, "reprioritize"))
    return sorted(events, key=lambda e: e.time)


@dataclass(eq=False)
class SimTrace:
    """Sample k holds q(t_k), the control held on [t_k, t_k + dt) and h at q(t_k)."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    slacks: np.ndarray
    barriers: np.ndarray  # (N, M), minimum over each task's rows
    barrier_rows: list  # per task, (N, rows)
    gains: np.ndarray  # (N, M) insertion/removal gains
    labels: list
    safety_critical: list
    events: list
    solve_times: np.ndarray
    dt: float
    final_state: RobotState = None
    failure: str = None
    failure_time: float = None
    overrides: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    @property
    def ok(self) -> bool:
        return self.failure is None

    def column(self, label) -> int:
        return self.labels.index(label)


def simulate(tasks, schedule, q0, dt, horizon, dynamics=None, config=None, t0=0.0) -> SimTrace:
    """Run the loop assemble, solve, step for ``round(horizon / dt)`` steps.

    A controller error stops the run; the samples recorded so far are kept
    and the failure message and time are stored on the trace.
    """
    if not dt > 0 or not horizon > 0:
        raise ValueError("dt and horizon must be positive")
    dynamics = dynamics or DynamicsModel()
    config = config or ControllerConfig()
    labels = [t.label for t in tasks]
    M = len(tasks)
    n_steps = int(round(horizon / dt))
    ctrl = Controller(tasks, schedule, dynamics, config)
    state = RobotState(np.asarray(q0, dtype=float).copy(), t0)

    times, states, controls, slacks, gains, solve_times = [], [], [], [], [], []
    rows = [[] for _ in range(M)]
    failure = failure_time = None
    for k in range(n_steps):
        t = t0 + k * dt
        state = RobotState(state.q, t)
        try:
            out = ctrl(state, t)
        except TaskStackError as exc:
            failure, failure_time = f"{type(exc).__name__}: {exc}", t
            break
        times.append(t)
        states.append(state.q)
        controls.append(out.u_star)
        slacks.append(out.delta_star)
        gains.append(schedule.gains(t))
        solve_times.append(out.solve_time)
        for m in range(M):
            rows[m].append(out.h[m])
        state = step(state, out.u_star, dt, dynamics)

    n = len(times)
    p = controls[0].size if n else 0
    barrier_rows = [np.array(r).reshape(n, -1) for r in rows]
    barriers = np.column_stack([r.min(axis=1) for r in barrier_rows]) if n else np.zeros((0, M))
    return SimTrace(
        times=np.array(times),
        states=np.array(states).reshape(n, -1),
        controls=np.array(controls).reshape(n, p),
        slacks=np.array(slacks).reshape(n, M),
        barriers=barriers,
        barrier_rows=barrier_rows,
        gains=np.array(gains).reshape(n, M),
        labels=labels,
        safety_critical=[t.safety_critical for t in tasks],
        events=schedule_events(schedule, labels),
        solve_times=np.array(solve_times),
        dt=dt,
        final_state=state,
        failure=failure,
        failure_time=failure_time,
    )


def run(scenario, dt=None, horizon=None) -> SimTrace:
    sc = scenario.with_overrides(dt=dt, horizon=horizon) if (dt or horizon) else scenario
    trace = simulate(sc.tasks, sc.schedule, sc.initial_q, sc.dt, sc.horizon, config=sc.controller)
    trace.overrides = dict(sc.overrides)
    return trace


def to_csv(trace: SimTrace, path):
    n, p, M = trace.states.shape[1], trace.controls.shape[1], trace.slacks.shape[1]
    header = (
        ["t"]
        + [f"q{i}" for i in range(n)]
        + [f"u{i}" for i in range(p)]
        + [f"delta{i}" for i in range(M)]
        + [f"h_{label}" for label in trace.labels]
    )
    data = np.column_stack([trace.times, trace.states, trace.controls, trace.slacks, trace.barriers])
    np.savetxt(path, data.reshape(len(trace), len(header)), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_csv(path):
    """Header list and data array of a trace CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


# ---------------------------------------------------------------- reports


def increments(trace: SimTrace) -> np.ndarray:
    """``s_k = |u_{k+1} - u_k| / dt`` for k = 0..N-2."""
    if len(trace) < 2:
        raise ValueError("need at least two samples")
    return np.linalg.norm(np.diff(trace.controls, axis=0), axis=1) / trace.dt


def event_index(trace: SimTrace, t) -> int:
    """k such that t_k < t <= t_{k+1}; the increment s_k straddles ``t``."""
    eps = 1e-9 * trace.dt
    k = int(np.searchsorted(trace.times, t - eps, side="left")) - 1
    return min(max(k, 0), len(trace) - 2)


def window_max(trace: SimTrace, start, stop, s=None) -> float:
    s = increments(trace) if s is None else s
    mask = (trace.times[:-1] >= start - 1e-9 * trace.dt) & (trace.times[1:] <= stop + 1e-9 * trace.dt)
    return float(s[mask].max()) if np.any(mask) else 0.0


@dataclass(frozen=True)
class EventContinuity:
    event: Event
    window_max: float  # max s_k over the event window (padded)
    jump: float  # |u_{k+1} - u_k| straddling the event time
    pre_rate: float  # max s_k over the second before the event, excluding the straddling step


@dataclass(frozen=True)
class ContinuityReport:
    max_increment: float
    events: tuple

    def for_event(self, name, time=None) -> EventContinuity:
        for ev in self.events:
            if ev.event.name == name and (time is None or abs(ev.event.time - time) < 1e-9):
                return ev
        raise KeyError(name)


def continuity_report(trace: SimTrace, pad=0.1, pre_window=1.0) -> ContinuityReport:
    s = increments(trace)
    events = []
    for ev in trace.events:
        if ev.time > trace.times[-1]:
            continue
        k = event_index(trace, ev.time)
        jump = float(s[k] * trace.dt)
        wmax = window_max(trace, ev.time - pad, ev.time + ev.duration + pad, s)
        pre = window_max(trace, ev.time - pre_window, trace.times[k], s) if k > 0 else 0.0
        events.append(EventContinuity(ev, wmax, jump, pre))
    return ContinuityReport(float(s.max()), tuple(events))


@dataclass(frozen=True)
class InvarianceReport:
    min_h: dict  # safety label -> min over time and rows
    min_rows: dict  # safety label -> per-row minima
    violations: tuple  # labels dipping below -tol
    tol: float = INVARIANCE_TOL

    @property
    def ok(self) -> bool:
        return not self.violations


def invariance_report(trace: SimTrace, tasks=None, tol=INVARIANCE_TOL) -> InvarianceReport:
    """Minimum of every safety-critical barrier over the trace.

    Only tasks whose rows all start at ``h >= -tol`` can be flagged: a set the
    robot starts outside of has no forward-invariance claim.
    """
    safety = (
        [i for i, s in enumerate(trace.safety_critical) if s]
        if tasks is None
        else [i for i, t in enumerate(tasks) if t.safety_critical]
    )
    min_h, min_rows, bad = {}, {}, []
    for i in safety:
        label = trace.labels[i]
        rows = trace.barrier_rows[i]
        mins = rows.min(axis=0) if len(rows) else np.full(rows.shape[1], np.nan)
        min_rows[label] = mins
        min_h[label] = float(mins.min())
        if min_h[label] < -tol and len(rows) and rows[0].min() >= -tol:
            bad.append(label)
    return InvarianceReport(min_h, min_rows, tuple(bad), tol)


def cbf_decrease_margin(trace: SimTrace, tasks) -> np.ndarray:
    """Per task, min over fully-inserted steps of the discrete CBF margin.

    Margin at step k and row r: ``(h_r(k+1) - h_r(k))/dt + gamma(h_r(k)) + delta(k)``
    (slack omitted for safety-critical tasks). Continuous-time tasks satisfy
    margin >= 0; the sampled margin is ``-O(dt)``.
    """
    out = np.full(len(tasks), np.inf)
    for m, task in enumerate(tasks):
        rows = trace.barrier_rows[m]
        if len(rows) < 2:
            continue
        dh = np.diff(rows, axis=0) / trace.dt
        margin = dh + task.class_k(rows[:-1]) + trace.slacks[:-1, m : m + 1]
        full = trace.gains[:-1, m] == 1.0
        if np.any(full):
            out[m] = float(margin[full].min())
    return out


def second_derivative_bound(trace: SimTrace) -> np.ndarray:
    """Per task, max |h''| along the trace from second differences."""
    out = np.zeros(len(trace.labels))
    for m, rows in enumerate(trace.barrier_rows):
        if len(rows) >= 3:
            out[m] = float(np.abs(np.diff(rows, 2, axis=0)).max()) / trace.dt**2
    return out


def task_errors(tasks, state: RobotState) -> dict:
    """Distance to target for setpoint/tracking tasks at ``state``."""
    errors = {}
    for task in tasks:
        b = task.barrier
        if isinstance(b, JointBox):
            continue
        sigma, _ = task.map.evaluate(state.q, with_jacobian=False)
        if isinstance(b, Setpoint):
            errors[task.label] = float(np.linalg.norm(sigma - b.target))
        elif isinstance(b, Tracking):
            errors[task.label] = float(np.linalg.norm(sigma - b.reference(state.t)[0]))
    return errors


@dataclass(frozen=True)
class Report:
    scenario: str
    steps: int
    dt: float
    min_h: dict
    invariance_ok: bool
    final_errors: dict
    max_increment: float
    events: tuple
    solve_time_median: float
    solve_time_max: float
    failure: str = None
    failure_time: float = None
    overrides: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"scenario: {self.scenario}", f"steps: {self.steps}", f"dt: {self.dt:g}"]
        if self.overrides:
            lines.append("overrides: " + ", ".join(f"{k}={v}" for k, v in sorted(self.overrides.items())))
        lines.append("status: " + ("ok" if self.failure is None else f"failed at t={self.failure_time:g}: {self.failure}"))
        for label, value in self.min_h.items():
            lines.append(f"min h_{label}: {value:.6g}")
        lines.append(f"invariance: {'ok' if self.invariance_ok else 'VIOLATED'}")
        for label, value in self.final_errors.items():
            lines.append(f"final error {label}: {value:.6g}")
        lines.append(f"max |du|/dt: {self.max_increment:.6g}")
        for ev in self.events:
            lines.append(
                f"event {ev.event.name} at t={ev.event.time:g}: window max |du|/dt {ev.window_max:.6g}, jump {ev.jump:.6g}"
            )
        lines.append(f"solve time median: {self.solve_time_median * 1e6:.1f} us, max: {self.solve_time_max * 1e6:.1f} us")
        return "\n".join(lines) + "\n"


def build_report(trace: SimTrace, tasks, name="") -> Report:
    inv = invariance_report(trace, tasks)
    cont = continuity_report(trace) if len(trace) >= 2 else ContinuityReport(0.0, ())
    final = trace.final_state if trace.ok else RobotState(trace.states[-1], trace.times[-1]) if len(trace) else None
    errors = task_errors(tasks, final) if final is not None else {}
    st = trace.solve_times
    return Report(
        scenario=name,
        steps=len(trace),
        dt=trace.dt,
        min_h=inv.min_h,
        invariance_ok=inv.ok,
        final_errors=errors,
        max_increment=cont.max_increment,
        events=cont.events,
        solve_time_median=float(np.median(st)) if st.size else math.nan,
        solve_time_max=float(st.max()) if st.size else math.nan,
        failure=trace.failure,
        failure_time=trace.failure_time,
        overrides=dict(trace.overrides),
    )


@dataclass(frozen=True)
class PriorityReport:
    max_excess: float  # max of delta_m - delta_n / kappa over checked samples
    max_ratio: float  # max of kappa * delta_m / delta_n where delta_n > 0
    checked: int  # (sample, pair) combinations checked

    def ok(self, tol=1e-8) -> bool:
        return self.max_excess <= tol


def priority_report(trace: SimTrace, schedule: PrioritySchedule) -> PriorityReport:
    """Check ``delta_m <= delta_n / kappa`` for each pair of the current stack.

    A sample is checked when both tasks are fully inserted (gain 1) and no
    transition window is open; inside windows the matrix is a blend and
    encodes no pairwise order.
    """
    excess, ratio, checked = -math.inf, 0.0, 0
    for k, t in enumerate(trace.times):
        if schedule.in_transition(t):
            continue
        stack = schedule.stack_at(t)
        for m, n in stack.order:
            if m in stack.safety_critical or n in stack.safety_critical:
                continue
            if trace.gains[k, m] != 1.0 or trace.gains[k, n] != 1.0:
                continue
            dm, dn = trace.slacks[k, m], trace.slacks[k, n]
            excess = max(excess, dm - dn / stack.kappa)
            if dn > 0:
                ratio = max(ratio, stack.kappa * dm / dn)
            checked += 1
    return PriorityReport(excess, ratio, checked)
