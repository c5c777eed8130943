"""Prioritized multi-task control with control barrier functions."""

from .controller import ControlOutput, Controller, ControllerConfig, assemble_qp, build_qp, compute_control
from .errors import (
    BehindCamera,
    ConfigError,
    CyclicOrder,
    DimensionMismatch,
    IndexOutOfRange,
    Infeasible,
    IterationLimit,
    NotPositiveDefinite,
    ParseError,
    TaskStackError,
    TooManyConstraints,
    ValidationError,
)
from .kinematics import (
    CameraModel,
    DynamicsModel,
    Joint,
    RobotModel,
    RobotState,
    TaskMap,
    demo_7dof,
    forward_kinematics,
    from_dh,
    geometric_jacobian,
    numeric_jacobian,
    planar_arm,
    task_jacobian,
    task_output,
)
from .priority import PrioritySchedule, PriorityStack, Ramp, insertion_gain, schedule_matrix, stack_to_matrix
from .qp import KKTReport, QPProblem, QPSolution, check_kkt, solve_qp, solve_qp_oracle
from .scenario import Scenario, parse_scenario, scenario_from_dict, serialize_scenario
from .sim import SimTrace, build_report, continuity_report, invariance_report, priority_report, run, simulate, step, to_csv
from .tasks import (
    BarrierTask,
    ClassK,
    CustomBarrier,
    JointBox,
    PiecewisePolynomial,
    Setpoint,
    Tracking,
    build_constraint_row,
    build_constraint_rows,
    eval_barrier,
)

__version__ = "0.1.0"
