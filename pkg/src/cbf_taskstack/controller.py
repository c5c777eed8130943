"""Slacked, prioritized CBF-QP controller.

Decision vector ``z = (u, delta_free)``; safety-critical tasks have their
slack eliminated rather than pinned by an equality. Cost ``|u|^2 + l |delta|^2``.
Rows, in order: task rows ``a'u + delta_m >= beta``, prioritization rows
``K(t) delta >= 0``, then ``delta >= 0`` when enabled.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kinematics import DynamicsModel, RobotState
from .priority import PrioritySchedule, schedule_matrix
from .qp import QPProblem, solve_qp
from .tasks import build_constraint_rows

RAMP_ROW = "row"
RAMP_OFFSET = "offset"


@dataclass(frozen=True)
class ControllerConfig:
    l: float = 100.0
    enforce_slack_nonneg: bool = True
    warm_start: bool = True
    # "row" multiplies the whole inserted CBF inequality by rho(t);
    # "offset" scales only its right-hand side, as in the printed insertion QP.
    insertion_ramp: str = RAMP_ROW

    def __post_init__(self):
        if not self.l > 0:
            raise ConfigError(f"slack penalty l must be positive, got {self.l}")
        if self.insertion_ramp not in (RAMP_ROW, RAMP_OFFSET):
            raise ConfigError(f"unknown insertion_ramp {self.insertion_ramp!r}")


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    WARM_STARTED = "warm_started"


@dataclass(frozen=True, eq=False)
class QPLayout:
    problem: QPProblem
    slack_column: np.ndarray  # per task: column of its slack in z, or -1 if eliminated
    row_task: np.ndarray  # per task row: owning task index
    n_task_rows: int
    n_priority_rows: int
    h: list  # per task: barrier rows at the assembly state
    K: np.ndarray


@dataclass(frozen=True, eq=False)
class ControlOutput:
    u_star: np.ndarray
    delta_star: np.ndarray
    active_constraints: tuple
    solve_status: SolveStatus
    h: list
    solve_time: float = 0.0
    layout: QPLayout = None


def build_qp(tasks, sched: PrioritySchedule, state: RobotState, dyn: DynamicsModel, t, cfg: ControllerConfig) -> QPLayout:
    if not tasks:
        raise ValueError("at least one task is required")
    if not cfg.l > 0:
        raise ConfigError("slack penalty l must be positive")
    M = len(tasks)
    if sched.n_tasks != M:
        raise ValueError(f"schedule is for {sched.n_tasks} tasks, got {M}")
    rho = sched.gains(t)
    free = [m for m, task in enumerate(tasks) if not task.safety_critical]
    slack_column = -np.ones(M, dtype=int)

    a_blocks, b_blocks, owners, hs = [], [], [], []
    p = None
    for m, task in enumerate(tasks):
        rows = build_constraint_rows(task, state, dyn, t)
        a, beta = rows.a, rows.beta
        if rho[m] != 1.0:
            beta = beta * rho[m]
            if cfg.insertion_ramp == RAMP_ROW:
                a = a * rho[m]
        p = a.shape[1]
        a_blocks.append(a)
        b_blocks.append(beta)
        owners.append(np.full(beta.size, m))
        hs.append(rows.h)
    n_free = len(free)
    slack_column[free] = p + np.arange(n_free)
    d = p + n_free

    owners = np.concatenate(owners)
    A_task = np.zeros((owners.size, d))
    A_task[:, :p] = np.vstack(a_blocks)
    cols = slack_column[owners]
    has_slack = cols >= 0
    A_task[np.flatnonzero(has_slack), cols[has_slack]] = 1.0
    b_task = np.concatenate(b_blocks)

    K = schedule_matrix(sched, t)
    blocks_A, blocks_b = [A_task], [b_task]
    n_prio = 0
    if K.shape[0] and n_free:
        Kf = K[:, free]
        Kf = Kf[np.any(Kf != 0.0, axis=1)]
        n_prio = Kf.shape[0]
        if n_prio:
            A_prio = np.zeros((n_prio, d))
            A_prio[:, p:] = Kf
            blocks_A.append(A_prio)
            blocks_b.append(np.zeros(n_prio))
    if cfg.enforce_slack_nonneg and n_free:
        A_nn = np.zeros((n_free, d))
        A_nn[:, p:] = np.eye(n_free)
        blocks_A.append(A_nn)
        blocks_b.append(np.zeros(n_free))

    H = np.diag(np.concatenate([2.0 * np.ones(p), 2.0 * cfg.l * np.ones(n_free)]))
    problem = QPProblem(H, np.zeros(d), np.vstack(blocks_A), np.concatenate(blocks_b))
    return QPLayout(problem, slack_column, owners, owners.size, n_prio, hs, K)


def assemble_qp(tasks, sched, state, dyn, t, cfg) -> QPProblem:
    return build_qp(tasks, sched, state, dyn, t, cfg).problem


def compute_control(tasks, sched, state, dyn, t, cfg, warm_start=None) -> ControlOutput:
    layout = build_qp(tasks, sched, state, dyn, t, cfg)
    start = time.perf_counter()
    sol = solve_qp(layout.problem, warm_start=warm_start if cfg.warm_start else None)
    elapsed = time.perf_counter() - start
    z = sol.z_star
    p = layout.problem.d - int(np.sum(layout.slack_column >= 0))
    delta = np.zeros(len(tasks))
    cols = layout.slack_column
    delta[cols >= 0] = z[cols[cols >= 0]] + 0.0  # no -0.0 in traces
    status = SolveStatus.WARM_STARTED if sol.warm_started else SolveStatus.OPTIMAL
    return ControlOutput(z[:p].copy(), delta, sol.active_set, status, layout.h, elapsed, layout)


class Controller:
    """Stateful wrapper that carries the previous active set as a warm start.

    Not reentrant; use one instance per simulated robot.
    """

    def __init__(self, tasks, schedule: PrioritySchedule, dynamics: DynamicsModel = None, config: ControllerConfig = None):
        self.tasks = list(tasks)
        self.schedule = schedule
        self.dynamics = dynamics or DynamicsModel()
        self.config = config or ControllerConfig()
        self._last_active = None

    def reset(self):
        self._last_active = None

    def __call__(self, state: RobotState, t=None) -> ControlOutput:
        t = state.t if t is None else t
        out = compute_control(
            self.tasks, self.schedule, state, self.dynamics, t, self.config, warm_start=self._last_active
        )
        self._last_active = out.active_constraints
        return out
