"""Scenario files: JSON description of a robot, its tasks, schedule and run settings.

Parsing is strict (unknown keys are errors) and collects every violation
before raising ``ValidationError``. ``serialize_scenario`` produces a dict
that parses back to an identical scenario.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import ControllerConfig
from .errors import ParseError, TaskStackError, ValidationError
from .kinematics import (
    EE_POSITION,
    IMAGE_FEATURE,
    JOINT_IDENTITY,
    PRISMATIC,
    REVOLUTE,
    CameraModel,
    Joint,
    RobotModel,
    TaskMap,
    from_dh,
    transform,
)
from .priority import BLENDS, SEQUENTIAL, PrioritySchedule, PriorityStack, Ramp
from .tasks import CUBIC, LINEAR, BarrierTask, ClassK, JointBox, PiecewisePolynomial, Setpoint, Tracking

SCENARIO_DIR_ENV = "CBF_TASKSTACK_SCENARIO_DIR"
DEFAULT_DT = 1e-3
DEFAULT_HORIZON = 30.0
DEFAULT_KAPPA = 10.0


@dataclass(eq=False)
class Scenario:
    name: str
    robot: RobotModel
    tasks: list
    schedule: PrioritySchedule
    controller: ControllerConfig
    dt: float
    horizon: float
    initial_q: np.ndarray
    camera: CameraModel = None
    description: str = ""
    outputs: dict = field(default_factory=dict)
    # overrides applied after parsing (e.g. from the command line), kept for reports
    overrides: dict = field(default_factory=dict)

    @property
    def labels(self):
        return [t.label for t in self.tasks]

    def index(self, label) -> int:
        return self.labels.index(label)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return serialize_scenario(self) == serialize_scenario(other)

    def with_overrides(self, **overrides) -> "Scenario":
        """Copy with run settings replaced; keys: dt, horizon, kappa, l, transition, blend."""
        data = serialize_scenario(self)
        for key, value in overrides.items():
            if value is None:
                continue
            if key in ("dt", "horizon"):
                data["sim"][key] = float(value)
            elif key == "kappa":
                data["schedule"]["kappa"] = float(value)
                for seg in data["schedule"]["segments"]:
                    seg["kappa"] = float(value)
            elif key == "l":
                data["controller"]["l"] = float(value)
            elif key in ("transition", "blend"):
                data["schedule"][key] = value
            else:
                raise KeyError(f"unknown override {key!r}")
        sc = scenario_from_dict(data)
        sc.overrides = {**self.overrides, **{k: v for k, v in overrides.items() if v is not None}}
        return sc

    def without_task(self, label) -> "Scenario":
        """Copy with ``label`` and every schedule reference to it removed."""
        data = serialize_scenario(self)
        data["tasks"] = [t for t in data["tasks"] if t["label"] != label]
        sched = data["schedule"]
        for seg in sched["segments"]:
            seg["order"] = [pair for pair in seg["order"] if label not in pair]
        sched["insertions"] = [r for r in sched["insertions"] if r["task"] != label]
        sched["removals"] = [r for r in sched["removals"] if r["task"] != label]
        return scenario_from_dict(data)


_REQUIRED = object()


class _Reader:
    """Typed field access that records errors instead of raising."""

    def __init__(self):
        self.errors = []

    def error(self, path, msg):
        self.errors.append(f"{path}: {msg}")

    def obj(self, value, path, allowed):
        if not isinstance(value, dict):
            self.error(path, "expected an object")
            return {}
        for key in value:
            if key not in allowed:
                self.error(f"{path}.{key}", "unknown key")
        return value

    def get(self, d, key, path, kind, default=_REQUIRED):
        full = f"{path}.{key}"
        if key not in d:
            if default is _REQUIRED:
                self.error(full, "missing required field")
                return None
            return default
        value = d[key]
        if kind == "number":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.error(full, "expected a number")
                return None
            return float(value)
        if kind == "bool":
            if not isinstance(value, bool):
                self.error(full, "expected true/false")
                return None
            return value
        if kind == "str":
            if not isinstance(value, str):
                self.error(full, "expected a string")
                return None
            return value
        if kind == "vector":
            return self.vector(value, full)
        if kind == "matrix":
            return self.matrix(value, full)
        return value

    def vector(self, value, path, length=None):
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        )
        if not ok:
            self.error(path, "expected a list of numbers")
            return None
        arr = np.array(value, dtype=float)
        if length is not None and arr.size != length:
            self.error(path, f"expected {length} entries, got {arr.size}")
            return None
        return arr

    def matrix(self, value, path):
        if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
            self.error(path, "expected a list of rows")
            return None
        rows = [self.vector(r, f"{path}[{i}]") for i, r in enumerate(value)]
        if any(r is None for r in rows):
            return None
        if len({r.size for r in rows}) != 1:
            self.error(path, "rows have different lengths")
            return None
        return np.array(rows)

    def transform(self, value, path):
        if isinstance(value, dict):
            self.obj(value, path, ("xyz", "rpy"))
            xyz = self.get(value, "xyz", path, "vector", [0.0, 0.0, 0.0])
            rpy = self.get(value, "rpy", path, "vector", [0.0, 0.0, 0.0])
            if xyz is None or rpy is None:
                return None
            if np.size(xyz) != 3 or np.size(rpy) != 3:
                self.error(path, "xyz and rpy need 3 entries each")
                return None
            return transform(xyz, rpy)
        T = self.matrix(value, path)
        if T is not None and T.shape != (4, 4):
            self.error(path, "expected a 4x4 matrix")
            return None
        return T


def _parse_robot(r: _Reader, d, path):
    d = r.obj(d, path, ("name", "dh", "joints", "limits", "base", "tool"))
    name = r.get(d, "name", path, "str", "robot")
    limits = r.obj(r.get(d, "limits", path, "raw"), f"{path}.limits", ("lower", "upper")) if "limits" in d else None
    if limits is None:
        r.error(f"{path}.limits", "missing required field")
        return None
    lower = r.get(limits, "lower", f"{path}.limits", "vector")
    upper = r.get(limits, "upper", f"{path}.limits", "vector")
    base = r.transform(d["base"], f"{path}.base") if "base" in d else np.eye(4)
    tool = r.transform(d["tool"], f"{path}.tool") if "tool" in d else np.eye(4)
    if ("dh" in d) == ("joints" in d):
        r.error(path, "give exactly one of 'dh' or 'joints'")
        return None
    if "dh" in d:
        rows, kinds = [], []
        if not isinstance(d["dh"], list) or not d["dh"]:
            r.error(f"{path}.dh", "expected a non-empty list")
            return None
        for i, row in enumerate(d["dh"]):
            p = f"{path}.dh[{i}]"
            row = r.obj(row, p, ("a", "alpha", "d", "theta", "type"))
            vals = [r.get(row, k, p, "number", 0.0) for k in ("a", "alpha", "d", "theta")]
            kind = r.get(row, "type", p, "str", REVOLUTE)
            if kind not in (REVOLUTE, PRISMATIC):
                r.error(f"{p}.type", f"unknown joint type {kind!r}")
            rows.append(vals)
            kinds.append(kind)
        if r.errors or lower is None or upper is None or base is None or tool is None:
            return None
        try:
            return from_dh(rows, lower, upper, name=name, kinds=kinds, base=base, tool=tool)
        except (TaskStackError, ValueError) as exc:
            r.error(path, str(exc))
            return None
    joints = []
    if not isinstance(d["joints"], list) or not d["joints"]:
        r.error(f"{path}.joints", "expected a non-empty list")
        return None
    for i, jd in enumerate(d["joints"]):
        p = f"{path}.joints[{i}]"
        jd = r.obj(jd, p, ("type", "axis", "origin"))
        kind = r.get(jd, "type", p, "str", REVOLUTE)
        axis = r.get(jd, "axis", p, "vector")
        origin = r.transform(jd["origin"], f"{p}.origin") if "origin" in jd else np.eye(4)
        if kind is None or axis is None or origin is None:
            continue
        try:
            joints.append(Joint(kind, axis, origin))
        except (TaskStackError, ValueError) as exc:
            r.error(p, str(exc))
    if len(joints) != len(d["joints"]) or lower is None or upper is None or base is None or tool is None:
        return None
    try:
        return RobotModel(tuple(joints), lower, upper, name, base, tool)
    except (TaskStackError, ValueError) as exc:
        r.error(path, str(exc))
        return None


def _parse_camera(r: _Reader, d, path):
    d = r.obj(d, path, ("focal", "principal_point", "mount", "target_point", "z_min"))
    focal = r.get(d, "focal", path, "vector")
    pp = r.get(d, "principal_point", path, "vector")
    target = r.get(d, "target_point", path, "vector")
    mount = r.transform(d["mount"], f"{path}.mount") if "mount" in d else np.eye(4)
    z_min = r.get(d, "z_min", path, "number", 1e-6)
    if any(v is None for v in (focal, pp, target, mount, z_min)):
        return None
    try:
        return CameraModel(focal, pp, mount, target, z_min)
    except (TaskStackError, ValueError) as exc:
        r.error(path, str(exc))
        return None


def _parse_reference(r: _Reader, d, path):
    d = r.obj(d, path, ("segments",))
    segs = r.get(d, "segments", path, "raw")
    if not isinstance(segs, list) or not segs:
        r.error(f"{path}.segments", "expected a non-empty list")
        return None
    starts, coeffs = [], []
    for i, s in enumerate(segs):
        p = f"{path}.segments[{i}]"
        s = r.obj(s, p, ("start", "coefficients"))
        starts.append(r.get(s, "start", p, "number", 0.0))
        coeffs.append(r.get(s, "coefficients", p, "matrix"))
    if any(v is None for v in starts + coeffs):
        return None
    try:
        return PiecewisePolynomial(tuple(starts), tuple(coeffs))
    except (TaskStackError, ValueError) as exc:
        r.error(path, str(exc))
        return None


def _parse_task(r: _Reader, d, path, robot, camera):
    d = r.obj(d, path, ("label", "map", "barrier", "class_k", "safety_critical"))
    label = r.get(d, "label", path, "str")
    kind = r.get(d, "map", path, "str")
    safety = r.get(d, "safety_critical", path, "bool", False)
    ck = ClassK()
    if "class_k" in d:
        p = f"{path}.class_k"
        cd = r.obj(d["class_k"], p, ("kind", "alpha"))
        ck_kind = r.get(cd, "kind", p, "str", LINEAR)
        alpha = r.get(cd, "alpha", p, "number", 1.0)
        if ck_kind not in (LINEAR, CUBIC):
            r.error(f"{p}.kind", f"unknown class-K kind {ck_kind!r}")
        elif alpha is not None and not alpha > 0:
            r.error(f"{p}.alpha", "must be positive")
        elif alpha is not None:
            ck = ClassK(ck_kind, alpha)
    if kind not in (JOINT_IDENTITY, EE_POSITION, IMAGE_FEATURE):
        r.error(f"{path}.map", f"unknown map kind {kind!r}")
        return label, None
    if kind == IMAGE_FEATURE and camera is None:
        r.error(f"{path}.map", "image_feature needs a 'camera' section")
        return label, None
    if robot is None:
        return label, None
    task_map = TaskMap(kind, robot, camera if kind == IMAGE_FEATURE else None)

    bp = f"{path}.barrier"
    bd = r.get(d, "barrier", path, "raw")
    if bd is None:
        return label, None
    btype = bd.get("type") if isinstance(bd, dict) else None
    barrier = None
    if btype == "setpoint":
        bd = r.obj(bd, bp, ("type", "target", "gain"))
        target = r.get(bd, "target", bp, "vector")
        gain = r.get(bd, "gain", bp, "number", 1.0)
        if target is not None and gain is not None:
            if not gain > 0:
                r.error(f"{bp}.gain", "must be positive")
            else:
                barrier = Setpoint(target, gain)
    elif btype == "tracking":
        bd = r.obj(bd, bp, ("type", "reference"))
        ref = _parse_reference(r, r.get(bd, "reference", bp, "raw", {}), f"{bp}.reference")
        if ref is not None:
            if ref.dim != task_map.output_dim:
                r.error(f"{bp}.reference", f"reference has dimension {ref.dim}, map outputs {task_map.output_dim}")
            else:
                barrier = Tracking(ref)
    elif btype == "joint_box":
        bd = r.obj(bd, bp, ("type", "lower", "upper", "gain"))
        lower = r.get(bd, "lower", bp, "vector", robot.limits_lower)
        upper = r.get(bd, "upper", bp, "vector", robot.limits_upper)
        gain = r.get(bd, "gain", bp, "number", 1.0)
        if kind != JOINT_IDENTITY:
            r.error(bp, "joint_box barriers need map 'joint_identity'")
        elif lower is not None and upper is not None and gain is not None:
            try:
                barrier = JointBox(lower, upper, gain)
            except (TaskStackError, ValueError) as exc:
                r.error(bp, str(exc))
    else:
        r.error(f"{bp}.type", f"unknown barrier type {btype!r}")
    if barrier is None or label is None or safety is None:
        return label, None
    try:
        return label, BarrierTask(label, task_map, barrier, ck, safety)
    except (TaskStackError, ValueError) as exc:
        r.error(path, str(exc))
        return label, None


def _parse_schedule(r: _Reader, d, path, labels, safety):
    d = r.obj(d, path, ("kappa", "transition", "blend", "segments", "insertions", "removals"))
    kappa = r.get(d, "kappa", path, "number", DEFAULT_KAPPA)
    transition = r.get(d, "transition", path, "number", 1.0)
    blend = r.get(d, "blend", path, "str", SEQUENTIAL)
    if blend not in BLENDS:
        r.error(f"{path}.blend", f"unknown blend {blend!r}")
    if transition is not None and not transition > 0:
        r.error(f"{path}.transition", "must be positive")

    def index(label, p):
        if label not in labels:
            r.error(p, f"undefined task label {label!r}")
            return None
        return labels.index(label)

    segments = []
    raw_segs = d.get("segments", [])
    if not isinstance(raw_segs, list):
        r.error(f"{path}.segments", "expected a list")
        raw_segs = []
    for i, s in enumerate(raw_segs):
        p = f"{path}.segments[{i}]"
        s = r.obj(s, p, ("start", "order", "chain", "kappa"))
        start = r.get(s, "start", p, "number", 0.0)
        seg_kappa = r.get(s, "kappa", p, "number", kappa)
        pairs = []
        if "chain" in s and "order" in s:
            r.error(p, "give either 'chain' or 'order', not both")
        if "chain" in s:
            chain = s["chain"]
            if not isinstance(chain, list) or not all(isinstance(c, str) for c in chain):
                r.error(f"{p}.chain", "expected a list of task labels")
            else:
                idx = [index(c, f"{p}.chain") for c in chain]
                pairs = list(zip(idx, idx[1:]))
        if "order" in s:
            order = s["order"]
            if not isinstance(order, list):
                r.error(f"{p}.order", "expected a list of [before, after] label pairs")
            else:
                for j, pair in enumerate(order):
                    if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, str) for x in pair)):
                        r.error(f"{p}.order[{j}]", "expected [before, after] labels")
                        continue
                    pairs.append((index(pair[0], f"{p}.order[{j}]"), index(pair[1], f"{p}.order[{j}]")))
        if any(a is None or b is None for a, b in pairs) or start is None or seg_kappa is None:
            continue
        try:
            segments.append((start, PriorityStack(tuple(pairs), seg_kappa, frozenset(safety))))
        except (TaskStackError, ValueError) as exc:
            r.error(p, str(exc))

    ramps = []
    for key, kind in (("insertions", "insert"), ("removals", "remove")):
        raw = d.get(key, [])
        if not isinstance(raw, list):
            r.error(f"{path}.{key}", "expected a list")
            continue
        for i, e in enumerate(raw):
            p = f"{path}.{key}[{i}]"
            e = r.obj(e, p, ("task", "time", "duration"))
            label = r.get(e, "task", p, "str")
            t0 = r.get(e, "time", p, "number")
            duration = r.get(e, "duration", p, "number", 1.0)
            idx = index(label, f"{p}.task") if label is not None else None
            if idx is None or t0 is None or duration is None:
                continue
            if not duration > 0:
                r.error(f"{p}.duration", "must be positive")
                continue
            ramps.append(Ramp(idx, t0, duration, kind))
    if not segments:
        if kappa is not None and kappa > 1:
            segments = [(0.0, PriorityStack((), kappa, frozenset(safety)))]
        elif kappa is not None:
            r.error(f"{path}.kappa", "must exceed 1")
    if r.errors or transition is None:
        return None
    try:
        return PrioritySchedule(tuple(segments), len(labels), transition, blend, tuple(ramps))
    except (TaskStackError, ValueError) as exc:
        r.error(path, str(exc))
        return None


def scenario_from_dict(data, source="<dict>") -> Scenario:
    r = _Reader()
    top = r.obj(data, "scenario", ("name", "description", "robot", "camera", "tasks", "schedule", "controller", "sim", "outputs"))
    name = r.get(top, "name", "scenario", "str", Path(source).stem)
    description = r.get(top, "description", "scenario", "str", "")
    robot = _parse_robot(r, top["robot"], "robot") if "robot" in top else r.error("robot", "missing required field")
    camera = _parse_camera(r, top["camera"], "camera") if "camera" in top else None

    tasks, labels = [], []
    raw_tasks = top.get("tasks")
    if not isinstance(raw_tasks, list) or not raw_tasks:
        r.error("tasks", "expected a non-empty list of tasks")
        raw_tasks = []
    for i, td in enumerate(raw_tasks):
        label, task = _parse_task(r, td, f"tasks[{i}]", robot, camera)
        if label is not None and label in labels:
            r.error(f"tasks[{i}].label", f"duplicate label {label!r}")
        labels.append(label)
        tasks.append(task)
    safety = [i for i, t in enumerate(tasks) if t is not None and t.safety_critical]

    cd = r.obj(top.get("controller", {}), "controller", ("l", "enforce_slack_nonneg", "warm_start", "insertion_ramp"))
    l = r.get(cd, "l", "controller", "number", 100.0)
    nonneg = r.get(cd, "enforce_slack_nonneg", "controller", "bool", True)
    warm = r.get(cd, "warm_start", "controller", "bool", True)
    ramp_mode = r.get(cd, "insertion_ramp", "controller", "str", "row")
    controller = None
    if None not in (l, nonneg, warm, ramp_mode):
        try:
            controller = ControllerConfig(l, nonneg, warm, ramp_mode)
        except (TaskStackError, ValueError) as exc:
            r.error("controller", str(exc))

    sd = r.obj(top.get("sim", {}), "sim", ("dt", "horizon", "initial_q"))
    dt = r.get(sd, "dt", "sim", "number", DEFAULT_DT)
    horizon = r.get(sd, "horizon", "sim", "number", DEFAULT_HORIZON)
    if dt is not None and not dt > 0:
        r.error("sim.dt", "must be positive")
    if horizon is not None and not horizon > 0:
        r.error("sim.horizon", "must be positive")
    q0 = None
    if robot is not None:
        q0 = r.get(sd, "initial_q", "sim", "vector", 0.5 * (robot.limits_lower + robot.limits_upper))
        if q0 is not None and q0.size != robot.n:
            r.error("sim.initial_q", f"expected {robot.n} entries, got {q0.size}")
        elif q0 is not None and not np.all((robot.limits_lower <= q0) & (q0 <= robot.limits_upper)):
            r.error("sim.initial_q", "outside the joint limits")

    od = r.obj(top.get("outputs", {}), "outputs", ("trace", "report"))
    outputs = {k: r.get(od, k, "outputs", "str") for k in od if k in ("trace", "report")}

    schedule = None
    if "schedule" in top or not r.errors:
        valid_labels = [lab for lab in labels]
        schedule = _parse_schedule(r, top.get("schedule", {}), "schedule", valid_labels, safety)

    if r.errors:
        raise ValidationError(r.errors)
    return Scenario(name, robot, tasks, schedule, controller, dt, horizon, q0, camera, description, outputs)


def parse_scenario(path) -> Scenario:
    path = resolve_scenario_path(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(str(exc), str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return scenario_from_dict(data, str(path))


def _tf(T):
    return [[float(v) for v in row] for row in np.asarray(T)]


def _vec(v):
    return [float(x) for x in np.asarray(v).reshape(-1)]


def serialize_scenario(sc: Scenario) -> dict:
    robot = sc.robot
    out = {
        "name": sc.name,
        "description": sc.description,
        "robot": {
            "name": robot.name,
            "joints": [{"type": j.kind, "axis": _vec(j.axis), "origin": _tf(j.origin)} for j in robot.joints],
            "limits": {"lower": _vec(robot.limits_lower), "upper": _vec(robot.limits_upper)},
            "base": _tf(robot.base),
            "tool": _tf(robot.tool),
        },
    }
    if sc.camera is not None:
        cam = sc.camera
        out["camera"] = {
            "focal": _vec(cam.focal),
            "principal_point": _vec(cam.principal_point),
            "mount": _tf(cam.mount),
            "target_point": _vec(cam.target_point),
            "z_min": float(cam.z_min),
        }
    tasks = []
    for task in sc.tasks:
        b = task.barrier
        if isinstance(b, Setpoint):
            bd = {"type": "setpoint", "target": _vec(b.target), "gain": float(b.gain)}
        elif isinstance(b, JointBox):
            bd = {"type": "joint_box", "lower": _vec(b.lower), "upper": _vec(b.upper), "gain": float(b.gain)}
        elif isinstance(b, Tracking) and isinstance(b.reference, PiecewisePolynomial):
            ref = b.reference
            bd = {
                "type": "tracking",
                "reference": {
                    "segments": [
                        {"start": s, "coefficients": _tf(c)} for s, c in zip(ref.starts, ref.coefficients)
                    ]
                },
            }
        else:
            raise TypeError(f"task {task.label!r} has a barrier that cannot be serialized")
        tasks.append(
            {
                "label": task.label,
                "map": task.map.kind,
                "barrier": bd,
                "class_k": {"kind": task.class_k.kind, "alpha": float(task.class_k.alpha)},
                "safety_critical": bool(task.safety_critical),
            }
        )
    out["tasks"] = tasks
    labels = sc.labels
    sched = sc.schedule
    out["schedule"] = {
        "kappa": float(sched.kappa),
        "transition": float(sched.transition),
        "blend": sched.blend,
        "segments": [
            {"start": t0, "order": [[labels[m], labels[n]] for m, n in st.order], "kappa": float(st.kappa)}
            for t0, st in sched.segments
        ],
        "insertions": [
            {"task": labels[r.task], "time": float(r.time), "duration": float(r.duration)}
            for r in sched.ramps
            if r.kind == "insert"
        ],
        "removals": [
            {"task": labels[r.task], "time": float(r.time), "duration": float(r.duration)}
            for r in sched.ramps
            if r.kind == "remove"
        ],
    }
    cfg = sc.controller
    out["controller"] = {
        "l": float(cfg.l),
        "enforce_slack_nonneg": cfg.enforce_slack_nonneg,
        "warm_start": cfg.warm_start,
        "insertion_ramp": cfg.insertion_ramp,
    }
    out["sim"] = {"dt": float(sc.dt), "horizon": float(sc.horizon), "initial_q": _vec(sc.initial_q)}
    out["outputs"] = dict(sc.outputs)
    return out


def scenario_dir() -> Path:
    override = os.environ.get(SCENARIO_DIR_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("cbf_taskstack") / "scenarios"))


def list_scenarios():
    return sorted(p.name for p in scenario_dir().glob("*.json"))


def resolve_scenario_path(path) -> Path:
    """Existing paths are used as-is; bare names fall back to the scenario directory."""
    path = Path(path)
    if path.exists():
        return path
    candidate = scenario_dir() / path.name
    if candidate.exists():
        return candidate
    if not path.suffix and (scenario_dir() / f"{path.name}.json").exists():
        return scenario_dir() / f"{path.name}.json"
    return path
