"""Skill state-machine plumbing.

A skill is a generator function ``skill(ctx, **params)``. The scheduler
refreshes ``ctx`` and resumes the generator once per control tick; each
``yield`` hands back one :class:`Command`. Returning a dict ends the skill
successfully with that dict as ``measured``; raising :class:`SkillError`
ends it as failed (or aborted, for :class:`SafetyAbort`).
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import IFVFError
from ..geometry import Pose, quat_multiply, quat_conjugate, quat_to_rotvec
from ..robot import CONTROL_DT, GRASP_FORCE_THRESHOLD, SafetyLimits, TwistCommand, ZERO_TWIST
from ..world import GRAVITY


class SkillStatus(str, enum.Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    ABORTED_SAFETY = "aborted_safety"


class SkillError(IFVFError):
    status = SkillStatus.FAILED

    def __init__(self, message: str = "", **measured):
        super().__init__(message or type(self).__name__)
        self.measured = measured


class SafetyAbort(SkillError):
    status = SkillStatus.ABORTED_SAFETY


class ObjectLost(SkillError):
    pass


class ParamType(str, enum.Enum):
    SCALAR = "scalar"
    STRING = "string"
    POSE = "pose"
    OBJECT_REF = "object-ref"
    POINTS = "points"


@dataclass(frozen=True)
class SkillSpec:
    name: str
    parameters: dict
    required: tuple = ()
    preconditions: tuple = ()
    feedback_channels: frozenset = frozenset()

    def __post_init__(self):
        params = {k: ParamType(v) for k, v in self.parameters.items()}
        object.__setattr__(self, "parameters", params)
        object.__setattr__(self, "feedback_channels", frozenset(self.feedback_channels))
        unknown = set(self.required) - set(params)
        if unknown:
            raise ValueError(f"required parameters without a type: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {"name": self.name, "parameters": {k: v.value for k, v in self.parameters.items()},
                "required": list(self.required), "preconditions": list(self.preconditions),
                "feedback_channels": sorted(self.feedback_channels)}

    @classmethod
    def from_dict(cls, d) -> "SkillSpec":
        return cls(d["name"], d["parameters"], tuple(d.get("required", ())),
                   tuple(d.get("preconditions", ())), frozenset(d.get("feedback_channels", ())))


@dataclass
class SkillOutcome:
    status: SkillStatus
    measured: dict = field(default_factory=dict)
    duration: float = 0.0
    log_span: tuple = (0, 0)
    error: str | None = None

    def to_dict(self) -> dict:
        return {"status": self.status.value, "measured": self.measured, "duration": self.duration,
                "log_span": list(self.log_span), "error": self.error}

    @classmethod
    def from_dict(cls, d) -> "SkillOutcome":
        return cls(SkillStatus(d["status"]), dict(d.get("measured", {})), float(d.get("duration", 0.0)),
                   tuple(d.get("log_span", (0, 0))), d.get("error"))


@dataclass(frozen=True)
class GripperCommand:
    opening: float
    force: float = 10.0
    speed: float = 1.0


@dataclass(frozen=True)
class Command:
    twist: TwistCommand = ZERO_TWIST
    gripper: GripperCommand | None = None


HOLD = Command()


@dataclass
class ObjectPrior:
    """What the skills are told about an object (affordances, nominal sizes)."""

    id: str
    class_label: str
    kind: str = "object"
    height: float = 0.1
    mass: float = 0.0
    grasp_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    grasp_width: float = 0.04
    spout_offset: np.ndarray | None = None
    rim_radius: float = 0.03
    scoop_capacity: float = 0.0
    pull_axis: np.ndarray | None = None
    travel: float = 0.3


class SkillContext:
    """Per-run view of the robot's senses, refreshed every control tick."""

    def __init__(self, priors: dict, limits: SafetyLimits, history_seconds: float = 4.0):
        self.priors = priors
        self.limits = limits
        self.t = 0.0
        self.tick = 0
        self.ee_pose = Pose()
        self.wrench = None
        self.history = deque(maxlen=int(history_seconds * 100))
        self.detections: dict = {}
        self.seen_tick: dict = {}
        self.vision_ticks = 0
        self.gripper_opening = 1.0
        self.gripper_force = 0.0
        self.classes: set = set()
        self.events: list = []
        self.baseline_force = np.zeros(3)
        self.resources: dict = {}

    # ------------------------------------------------------------- senses
    @property
    def force(self) -> np.ndarray:
        return np.zeros(3) if self.wrench is None else self.wrench.force

    @property
    def up(self) -> float:
        return 0.0 if self.wrench is None else float(self.wrench.force[2])

    @property
    def gripping(self) -> bool:
        return self.gripper_force >= GRASP_FORCE_THRESHOLD

    def latest(self, object_id: str):
        return self.detections.get(object_id)

    def ticks_since_seen(self, object_id: str) -> int:
        if object_id not in self.seen_tick:
            return self.vision_ticks
        return self.vision_ticks - self.seen_tick[object_id]

    def find_class(self, class_label: str):
        return sorted((d for d in self.detections.values() if d.class_label == class_label),
                      key=lambda d: d.object_id)

    def up_window(self, seconds: float) -> np.ndarray:
        n = max(1, int(round(seconds * 100)))
        recent = list(self.history)[-n:]
        return np.array([r[1] for r in recent]) if recent else np.zeros(1)

    def force_window(self, seconds: float) -> np.ndarray:
        n = max(1, int(round(seconds * 100)))
        recent = list(self.history)[-n:]
        return np.array([r[2] for r in recent]) if recent else np.zeros((1, 3))

    def emit(self, kind: str, **data) -> None:
        self.events.append((kind, data))


# ---------------------------------------------------------------- primitives
def guard_force(ctx: SkillContext, fraction: float = 0.85) -> None:
    dev = float(np.linalg.norm(ctx.force - ctx.baseline_force))
    if dev > fraction * ctx.limits.max_force:
        raise SafetyAbort(f"interaction force {dev:.1f} N near the {ctx.limits.max_force} N limit")


def hold(ctx: SkillContext, seconds: float):
    for _ in range(max(1, int(round(seconds / CONTROL_DT)))):
        yield HOLD
        guard_force(ctx)


def average_force(ctx: SkillContext, seconds: float):
    """Hold still for `seconds`, then return the mean global force over that span."""
    yield from hold(ctx, seconds)
    return ctx.force_window(seconds).mean(axis=0)


def velocity_toward(ctx: SkillContext, target, speed: float, gain: float = 2.0) -> np.ndarray:
    err = np.asarray(target, dtype=float) - ctx.ee_pose.position
    dist = float(np.linalg.norm(err))
    if dist < 1e-9:
        return np.zeros(3)
    v = min(speed, ctx.limits.max_linear, gain * dist)
    return err / dist * v


def angular_toward(ctx: SkillContext, target_q, rate: float, gain: float = 3.0) -> np.ndarray:
    dq = quat_multiply(np.asarray(target_q, dtype=float), quat_conjugate(ctx.ee_pose.orientation))
    rv = quat_to_rotvec(dq)
    ang = float(np.linalg.norm(rv))
    if ang < 1e-9:
        return np.zeros(3)
    w = min(rate, ctx.limits.max_angular, gain * ang)
    return rv / ang * w


def move_to(ctx: SkillContext, target, speed: float = 0.05, tol: float = 0.0015,
            orientation=None, timeout: float = 60.0, on_tick=None):
    """Servo the TCP to `target` (array or zero-arg callable for moving goals)."""
    limit = int(timeout / CONTROL_DT)
    for _ in range(limit):
        goal = target() if callable(target) else target
        if ctx.limits is not None:
            goal = np.clip(goal, ctx.limits.lower, ctx.limits.upper)
        err = float(np.linalg.norm(np.asarray(goal) - ctx.ee_pose.position))
        ang = np.zeros(3) if orientation is None else angular_toward(ctx, orientation, ctx.limits.max_angular)
        if err <= tol and float(np.linalg.norm(ang)) < 1e-3:
            return
        yield Command(TwistCommand(velocity_toward(ctx, goal, speed), ang))
        guard_force(ctx)
        if on_tick is not None:
            on_tick()
    raise SkillError(f"could not reach {np.round(np.asarray(goal), 3).tolist()} within {timeout} s")


def operate_gripper(ctx: SkillContext, opening: float, force: float = 10.0, speed: float = 1.0,
                    timeout: float = 3.0):
    """Command the gripper and wait until it reaches the target or stalls on contact."""
    yield Command(gripper=GripperCommand(opening, force, speed))
    last = ctx.gripper_opening
    still = 0
    for _ in range(int(timeout / CONTROL_DT)):
        if abs(ctx.gripper_opening - opening) < 1e-6:
            return
        if abs(ctx.gripper_opening - last) < 1e-9:
            still += 1
            if still >= 3:
                return
        else:
            still = 0
        last = ctx.gripper_opening
        yield HOLD


def up_to_grams(newtons: float) -> float:
    return newtons / GRAVITY * 1000.0


def horizontal_distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
