"""Extended set-based tasks encoded as control barrier functions.

Each task owns an output map ``sigma = k(q)`` and a barrier ``h(sigma, t)``
whose zero superlevel set is the task set. Under ``x' = f(x) + g(x) u`` the
CBF condition is one affine inequality per scalar barrier:

    dh/dsigma J g u  >=  -dh/dt - dh/dsigma J f - gamma(h)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DimensionMismatch
from .kinematics import JOINT_IDENTITY, DynamicsModel, RobotState, TaskMap

LINEAR = "linear"
CUBIC = "cubic"


@dataclass(frozen=True)
class ClassK:
    """Extended class-K-infinity function: ``alpha*h`` or ``alpha*h**3``."""

    kind: str = LINEAR
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in (LINEAR, CUBIC):
            raise ValueError(f"unknown class-K kind {self.kind!r}")
        if not self.alpha > 0:
            raise ValueError("class-K gain must be positive")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        return self.alpha * h if self.kind == LINEAR else self.alpha * h**3


def class_k(gamma: ClassK, h):
    return gamma(h)


@dataclass(frozen=True, eq=False)
class PiecewisePolynomial:
    """Reference ``sigma0(t)`` built from polynomial segments.

    Segment i is active on ``[starts[i], starts[i+1])`` and evaluates
    ``sum_k coefficients[i][:, k] * (t - starts[i])**k`` per output dimension.
    The derivative is analytic, never finite-differenced.
    """

    starts: tuple
    coefficients: tuple

    def __post_init__(self):
        starts = tuple(float(s) for s in self.starts)
        coeffs = tuple(np.atleast_2d(np.asarray(c, dtype=float)) for c in self.coefficients)
        if not starts or len(starts) != len(coeffs):
            raise ValueError("need one coefficient block per segment start")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        if len({c.shape[0] for c in coeffs}) != 1:
            raise DimensionMismatch("all segments must have the same output dimension")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (np.asarray(value, dtype=float).reshape(-1, 1),))

    @property
    def dim(self) -> int:
        return self.coefficients[0].shape[0]

    def __call__(self, t):
        i = max(0, int(np.searchsorted(self.starts, t, side="right")) - 1)
        c = self.coefficients[i]
        tau = t - self.starts[i]
        powers = tau ** np.arange(c.shape[1])
        value = c @ powers
        deg = np.arange(1, c.shape[1])
        rate = c[:, 1:] @ (deg * tau ** (deg - 1)) if c.shape[1] > 1 else np.zeros(c.shape[0])
        return value, rate


class BarrierValue(NamedTuple):
    """One entry per scalar barrier: values, gradient rows and time derivatives."""

    h: np.ndarray
    dh_dsigma: np.ndarray
    dh_dt: np.ndarray


@dataclass(frozen=True, eq=False)
class Setpoint:
    """``h = -gain * |sigma - target|^2``."""

    target: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(-1))
        if not self.gain > 0:
            raise ValueError("setpoint gain must be positive")

    @property
    def dim(self):
        return self.target.size

    def evaluate(self, sigma, t):
        e = sigma - self.target
        return BarrierValue(
            np.array([-self.gain * (e @ e)]), (-2.0 * self.gain * e)[None, :], np.zeros(1)
        )


@dataclass(frozen=True, eq=False)
class Tracking:
    """``h = -1/2 |sigma - sigma0(t)|^2`` for a reference with known derivative."""

    reference: Callable

    @property
    def dim(self):
        return getattr(self.reference, "dim", None)

    def evaluate(self, sigma, t):
        ref, ref_rate = self.reference(t)
        e = sigma - ref
        return BarrierValue(np.array([-0.5 * (e @ e)]), -e[None, :], np.array([e @ ref_rate]))


@dataclass(frozen=True, eq=False)
class JointBox:
    """Per-joint ``h_i = gain * (upper_i - z_i) * (z_i - lower_i)``."""

    lower: np.ndarray
    upper: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("joint box needs lower < upper elementwise")
        if not self.gain > 0:
            raise ValueError("joint box gain must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def evaluate(self, sigma, t):
        g = self.gain
        h = g * (self.upper - sigma) * (sigma - self.lower)
        grad = np.diag(g * (self.upper + self.lower - 2.0 * sigma))
        return BarrierValue(h, grad, np.zeros(sigma.size))


@dataclass(frozen=True, eq=False)
class CustomBarrier:
    """User barrier; callables take ``(sigma, t)`` and return rows like the built-ins."""

    h: Callable
    dh_dsigma: Callable
    dh_dt: Callable
    dim: int = None

    def evaluate(self, sigma, t):
        return BarrierValue(
            np.atleast_1d(np.asarray(self.h(sigma, t), dtype=float)),
            np.atleast_2d(np.asarray(self.dh_dsigma(sigma, t), dtype=float)),
            np.atleast_1d(np.asarray(self.dh_dt(sigma, t), dtype=float)),
        )


@dataclass(frozen=True, eq=False)
class BarrierTask:
    label: str
    map: TaskMap
    barrier: object
    class_k: ClassK = field(default_factory=ClassK)
    safety_critical: bool = False

    def __post_init__(self):
        if isinstance(self.barrier, JointBox) and self.map.kind != JOINT_IDENTITY:
            raise ValueError(f"task {self.label!r}: joint_box barriers need a joint_identity map")
        dim = getattr(self.barrier, "dim", None)
        if dim is not None and dim != self.map.output_dim:
            raise DimensionMismatch(
                f"task {self.label!r}: barrier has dimension {dim}, map outputs {self.map.output_dim}"
            )

    @property
    def n_rows(self) -> int:
        return self.map.model.n if isinstance(self.barrier, JointBox) else 1


@dataclass(frozen=True, eq=False)
class ConstraintRow:
    """``a'u >= beta - delta``."""

    a: np.ndarray
    beta: float


@dataclass(frozen=True, eq=False)
class ConstraintRows:
    a: np.ndarray  # (k, p)
    beta: np.ndarray  # (k,)
    h: np.ndarray  # (k,) barrier values the rows were built from

    def __iter__(self):
        return (ConstraintRow(a, float(b)) for a, b in zip(self.a, self.beta))

    def __len__(self):
        return self.beta.size


def _evaluate(task: BarrierTask, q, t, with_jacobian=True):
    sigma, J = task.map.evaluate(q, with_jacobian)
    return task.barrier.evaluate(sigma, t), J


def eval_barrier(task: BarrierTask, state: RobotState, t=None, aggregate=False) -> BarrierValue:
    """Barrier rows at ``state``; ``aggregate`` collapses them to the minimum row.

    ``t`` defaults to ``state.t``.
    """
    t = state.t if t is None else t
    value, _ = _evaluate(task, state.q, t, with_jacobian=False)
    if aggregate and value.h.size > 1:
        i = int(np.argmin(value.h))
        return BarrierValue(value.h[i : i + 1], value.dh_dsigma[i : i + 1], value.dh_dt[i : i + 1])
    return value


def build_constraint_rows(task: BarrierTask, state: RobotState, dyn: DynamicsModel = None, t=None) -> ConstraintRows:
    t = state.t if t is None else t
    value, J = _evaluate(task, state.q, t)
    grad_x = value.dh_dsigma @ J
    gamma = task.class_k(value.h)
    if dyn is None or dyn.is_single_integrator:
        return ConstraintRows(grad_x, -value.dh_dt - gamma, value.h)
    x = state.q
    return ConstraintRows(grad_x @ dyn.g(x), -value.dh_dt - grad_x @ dyn.f(x) - gamma, value.h)


def build_constraint_row(task: BarrierTask, state: RobotState, dyn: DynamicsModel = None, t=None) -> list:
    """One ``ConstraintRow`` per scalar barrier of ``task``."""
    return list(build_constraint_rows(task, state, dyn, t))
