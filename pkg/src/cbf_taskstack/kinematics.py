"""Serial-chain kinematics and task-output maps.

A chain is a product of transforms: ``T = base * prod_i(origin_i * motion_i(q_i)) * tool``
where ``motion_i`` rotates about (revolute) or translates along (prismatic)
the joint axis expressed in the joint frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import BehindCamera, DimensionMismatch

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


def rotation(axis, angle) -> np.ndarray:
    """Rodrigues rotation matrix about a unit ``axis``."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def transform(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Homogeneous transform from a translation and fixed-axis roll/pitch/yaw."""
    r, p, y = rpy
    T = np.eye(4)
    T[:3, :3] = rotation((0, 0, 1), y) @ rotation((0, 1, 0), p) @ rotation((1, 0, 0), r)
    T[:3, 3] = xyz
    return T


@dataclass(frozen=True, eq=False)
class Joint:
    kind: str
    axis: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise ValueError("joint axis must be non-zero")
        origin = np.asarray(self.origin, dtype=float)
        if origin.shape != (4, 4):
            raise DimensionMismatch(f"joint origin must be 4x4, got {origin.shape}")
        object.__setattr__(self, "axis", axis / norm)
        object.__setattr__(self, "origin", origin)

    def motion(self, qi: float) -> np.ndarray:
        T = np.eye(4)
        if self.kind == REVOLUTE:
            T[:3, :3] = rotation(self.axis, qi)
        else:
            T[:3, 3] = self.axis * qi
        return T


@dataclass(frozen=True, eq=False)
class RobotModel:
    joints: tuple
    limits_lower: np.ndarray
    limits_upper: np.ndarray
    name: str = "robot"
    base: np.ndarray = field(default_factory=lambda: np.eye(4))
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    _cache: list = field(default_factory=lambda: [None], repr=False, compare=False)

    def __post_init__(self):
        joints = tuple(self.joints)
        if not joints:
            raise ValueError("a robot needs at least one joint")
        lo = np.asarray(self.limits_lower, dtype=float).reshape(-1)
        hi = np.asarray(self.limits_upper, dtype=float).reshape(-1)
        if lo.shape != (len(joints),) or hi.shape != (len(joints),):
            raise DimensionMismatch("joint limits must have one entry per joint")
        if not np.all(lo < hi):
            raise ValueError("limits_lower must be strictly below limits_upper")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "limits_lower", lo)
        object.__setattr__(self, "limits_upper", hi)
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "tool", np.asarray(self.tool, dtype=float))
        object.__setattr__(self, "_kinds", tuple(j.kind for j in joints))
        packed = (
            np.array([j.origin[:3, :3] for j in joints]),
            np.array([j.origin[:3, 3] for j in joints]),
            np.array([j.axis for j in joints]),
            np.array([j.kind == PRISMATIC for j in joints]),
            np.ascontiguousarray(self.base[:3, :3]),
            np.ascontiguousarray(self.base[:3, 3]),
            np.ascontiguousarray(self.tool[:3, :3]),
            np.ascontiguousarray(self.tool[:3, 3]),
        )
        object.__setattr__(self, "_packed", packed)

    @property
    def n(self) -> int:
        return len(self.joints)

    def check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape != (self.n,):
            raise DimensionMismatch(f"{self.name} has {self.n} joints, got q of length {q.size}")
        return q


@dataclass(frozen=True, eq=False)
class RobotState:
    q: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))


@dataclass(frozen=True)
class DynamicsModel:
    """Control-affine plant ``x' = f(x) + g(x) u``; defaults to ``x' = u``."""

    drift: Optional[Callable] = None
    input_map: Optional[Callable] = None

    @property
    def is_single_integrator(self) -> bool:
        return self.drift is None and self.input_map is None

    def f(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x) if self.drift is None else np.asarray(self.drift(x), dtype=float)

    def g(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.input_map is None:
            return np.eye(x.size)
        G = np.atleast_2d(np.asarray(self.input_map(x), dtype=float))
        if G.shape[0] != x.size:
            raise DimensionMismatch(f"g(x) has {G.shape[0]} rows for a state of size {x.size}")
        return G


@dataclass(frozen=True, eq=False)
class CameraModel:
    focal: np.ndarray
    principal_point: np.ndarray
    mount: np.ndarray
    target_point: np.ndarray
    z_min: float = 1e-6

    def __post_init__(self):
        focal = np.asarray(self.focal, dtype=float).reshape(2)
        if not np.all(focal > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "focal", focal)
        object.__setattr__(self, "principal_point", np.asarray(self.principal_point, dtype=float).reshape(2))
        mount = np.asarray(self.mount, dtype=float)
        if mount.shape != (4, 4):
            raise DimensionMismatch("camera mount must be 4x4")
        object.__setattr__(self, "mount", mount)
        object.__setattr__(self, "target_point", np.asarray(self.target_point, dtype=float).reshape(3))

    def project(self, P) -> np.ndarray:
        """Pinhole projection of a camera-frame point."""
        X, Y, Z = P
        if Z <= self.z_min:
            raise BehindCamera(f"point depth {Z:.3g} m is not in front of the camera")
        return np.array(
            [self.focal[0] * X / Z + self.principal_point[0], self.focal[1] * Y / Z + self.principal_point[1]]
        )

    def projection_jacobian(self, P) -> np.ndarray:
        X, Y, Z = P
        if Z <= self.z_min:
            raise BehindCamera(f"point depth {Z:.3g} m is not in front of the camera")
        fx, fy = self.focal
        return np.array([[fx / Z, 0.0, -fx * X / Z**2], [0.0, fy / Z, -fy * Y / Z**2]])


@dataclass(frozen=True)
class ChainFrames:
    origins: np.ndarray  # (n, 3) joint frame origins in the base frame
    axes: np.ndarray  # (n, 3) joint axes in the base frame
    kinds: tuple
    ee: np.ndarray  # 4x4 end-effector pose


@njit(cache=True)
def _chain_kernel(origin_R, origin_p, local_axes, prismatic, q, base_R, base_p, tool_R, tool_p):
    n = q.shape[0]
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    R = base_R.copy()
    p = base_p.copy()
    for i in range(n):
        p = p + R @ origin_p[i]
        R = R @ origin_R[i]
        a = R @ local_axes[i]
        origins[i] = p
        axes[i] = a
        if prismatic[i]:
            p = p + a * q[i]
        else:
            # rotating about the local axis == rotating about the world axis a
            c, s = np.cos(q[i]), np.sin(q[i])
            K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
            Rot = c * np.eye(3) + s * K + (1.0 - c) * np.outer(a, a)
            R = Rot @ R
    ee = np.eye(4)
    ee[:3, :3] = R @ tool_R
    ee[:3, 3] = p + R @ tool_p
    return origins, axes, ee


def chain_frames(model: RobotModel, q) -> ChainFrames:
    """Joint origins/axes and the end-effector pose; memoizes the last ``q``."""
    q = model.check(q)
    key = q.tobytes()
    cached = model._cache[0]
    if cached is not None and cached[0] == key:
        return cached[1]
    origins, axes, ee = _chain_kernel(*model._packed[:4], q, *model._packed[4:])
    frames = ChainFrames(origins, axes, model._kinds, ee)
    model._cache[0] = (key, frames)
    return frames


def forward_kinematics(model: RobotModel, q) -> np.ndarray:
    """End-effector pose as a 4x4 homogeneous transform."""
    return chain_frames(model, q).ee.copy()


def _point_jacobian(frames: ChainFrames, point) -> np.ndarray:
    """Linear-velocity Jacobian (3 x n) of a point rigidly attached to the end effector."""
    a = frames.axes
    r = point - frames.origins
    J = np.empty((3, a.shape[0]))
    J[0] = a[:, 1] * r[:, 2] - a[:, 2] * r[:, 1]
    J[1] = a[:, 2] * r[:, 0] - a[:, 0] * r[:, 2]
    J[2] = a[:, 0] * r[:, 1] - a[:, 1] * r[:, 0]
    for i, kind in enumerate(frames.kinds):
        if kind == PRISMATIC:
            J[:, i] = a[i]
    return J


def geometric_jacobian(model: RobotModel, q) -> np.ndarray:
    """6 x n Jacobian mapping joint velocities to end-effector (v, omega)."""
    frames = chain_frames(model, q)
    Jv = _point_jacobian(frames, frames.ee[:3, 3])
    Jw = frames.axes.T.copy()
    for i, kind in enumerate(frames.kinds):
        if kind == PRISMATIC:
            Jw[:, i] = 0.0
    return np.vstack([Jv, Jw])


def from_dh(rows, limits_lower, limits_upper, name="robot", kinds=None, base=None, tool=None) -> RobotModel:
    """Build a chain from standard DH rows ``(a, alpha, d, theta_offset)``.

    Standard DH composes ``Rz(theta) Tz(d) Tx(a) Rx(alpha)`` per link; the fixed
    ``Tz(d) Tx(a) Rx(alpha)`` part of link i becomes the origin of joint i+1
    (or the tool transform for the last link).
    """
    rows = [tuple(float(v) for v in r) for r in rows]
    kinds = kinds or [REVOLUTE] * len(rows)
    joints = []
    carry = np.eye(4)
    for (a, alpha, d, offset), kind in zip(rows, kinds):
        if kind == REVOLUTE:
            origin = carry @ transform(rpy=(0.0, 0.0, offset))
            after = transform(xyz=(0.0, 0.0, d))
        else:
            origin = carry @ transform(xyz=(0.0, 0.0, d), rpy=(0.0, 0.0, offset))
            after = np.eye(4)
        joints.append(Joint(kind, (0.0, 0.0, 1.0), origin))
        carry = after @ transform(xyz=(a, 0.0, 0.0)) @ transform(rpy=(alpha, 0.0, 0.0))
    tool = carry if tool is None else carry @ np.asarray(tool, dtype=float)
    return RobotModel(tuple(joints), limits_lower, limits_upper, name, np.eye(4) if base is None else base, tool)


DEMO_7DOF_DH = (
    (0.0, -np.pi / 2, 0.3, 0.0),
    (0.0, np.pi / 2, 0.0, 0.0),
    (0.0, np.pi / 2, 0.3, 0.0),
    (0.0, -np.pi / 2, 0.0, 0.0),
    (0.0, -np.pi / 2, 0.3, 0.0),
    (0.0, np.pi / 2, 0.0, 0.0),
    (0.0, 0.0, 0.3, 0.0),
)
DEMO_7DOF_LIMITS = np.array([2.9, 2.0, 2.9, 2.0, 2.9, 2.0, 3.0])


def demo_7dof() -> RobotModel:
    """Alternating-axis 7-DoF arm with 0.3 m links."""
    return from_dh(DEMO_7DOF_DH, -DEMO_7DOF_LIMITS, DEMO_7DOF_LIMITS, name="demo7")


def planar_arm(lengths, limit=np.pi) -> RobotModel:
    """Planar chain of revolute z-joints; link i has length ``lengths[i]`` along x."""
    joints = []
    prev = 0.0
    for length in lengths:
        joints.append(Joint(REVOLUTE, (0, 0, 1), transform(xyz=(prev, 0.0, 0.0))))
        prev = length
    n = len(lengths)
    return RobotModel(
        tuple(joints), -limit * np.ones(n), limit * np.ones(n), name=f"planar{n}", tool=transform(xyz=(prev, 0, 0))
    )


JOINT_IDENTITY = "joint_identity"
EE_POSITION = "ee_position"
IMAGE_FEATURE = "image_feature"
CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class TaskMap:
    """Output map ``sigma = k(q)``; ``custom`` maps supply ``output`` and ``jacobian`` callables."""

    kind: str
    model: RobotModel
    camera: Optional[CameraModel] = None
    output: Optional[Callable] = None
    jacobian: Optional[Callable] = None
    dim: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (JOINT_IDENTITY, EE_POSITION, IMAGE_FEATURE, CUSTOM):
            raise ValueError(f"unknown task map kind {self.kind!r}")
        if self.kind == IMAGE_FEATURE and self.camera is None:
            raise ValueError("image_feature maps need a camera")
        if self.kind == CUSTOM and (self.output is None or self.jacobian is None or self.dim is None):
            raise ValueError("custom maps need output, jacobian and dim")

    @property
    def output_dim(self) -> int:
        return {JOINT_IDENTITY: self.model.n, EE_POSITION: 3, IMAGE_FEATURE: 2}.get(self.kind, self.dim)

    def _camera_point(self, frames):
        T_cam = frames.ee @ self.camera.mount
        R, o = T_cam[:3, :3], T_cam[:3, 3]
        return R, R.T @ (self.camera.target_point - o)

    def target_depth(self, q) -> float:
        """Depth Z of the target in the camera frame (image-feature maps only)."""
        if self.kind != IMAGE_FEATURE:
            raise ValueError("target_depth needs an image_feature map")
        return float(self._camera_point(chain_frames(self.model, self.model.check(q)))[1][2])

    def evaluate(self, q, with_jacobian=True):
        """Return ``(sigma, J)``; ``J`` is None when ``with_jacobian`` is False."""
        q = self.model.check(q)
        if self.kind == JOINT_IDENTITY:
            return q.copy(), (np.eye(q.size) if with_jacobian else None)
        if self.kind == CUSTOM:
            sigma = np.asarray(self.output(q), dtype=float).reshape(-1)
            return sigma, (np.atleast_2d(np.asarray(self.jacobian(q), dtype=float)) if with_jacobian else None)
        frames = chain_frames(self.model, q)
        if self.kind == EE_POSITION:
            p = frames.ee[:3, 3].copy()
            return p, (_point_jacobian(frames, p) if with_jacobian else None)
        R, P = self._camera_point(frames)
        s = self.camera.project(P)
        if not with_jacobian:
            return s, None
        # the target is fixed in the world, so in the camera frame dP/dq_i = -R'(a_i x (p_t - o_i))
        dP = -R.T @ _point_jacobian(frames, self.camera.target_point)
        return s, self.camera.projection_jacobian(P) @ dP


def task_output(task_map: TaskMap, state: RobotState) -> np.ndarray:
    return task_map.evaluate(state.q, with_jacobian=False)[0]


def task_jacobian(task_map: TaskMap, state: RobotState) -> np.ndarray:
    return task_map.evaluate(state.q)[1]


def numeric_jacobian(task_map: TaskMap, state: RobotState, step: float = 1e-6) -> np.ndarray:
    """Central finite differences, one column per joint."""
    if step <= 0:
        raise ValueError("step must be positive")
    q = task_map.model.check(state.q)
    cols = []
    for i in range(q.size):
        dq = np.zeros_like(q)
        dq[i] = step
        hi = task_map.evaluate(q + dq, with_jacobian=False)[0]
        lo = task_map.evaluate(q - dq, with_jacobian=False)[0]
        cols.append((hi - lo) / (2 * step))
    return np.column_stack(cols)
