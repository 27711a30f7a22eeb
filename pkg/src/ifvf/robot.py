"""End-effector level kinematic robot with clamped twist control and a gripper."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IFVFError
from .geometry import Pose, quat_from_rotvec, quat_multiply, quat_normalize

GRIPPER_MAX_WIDTH = 0.14  # 2F-140 stroke, m
GRASP_FORCE_THRESHOLD = 1.0  # N
GRIPPER_DT = 1.0 / 50.0
CONTROL_DT = 1.0 / 40.0


class ForceLimitExceeded(IFVFError):
    pass


@dataclass(frozen=True)
class TwistCommand:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(3)
        ang = np.asarray(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    def to_dict(self) -> dict:
        return {"linear": [float(v) for v in self.linear], "angular": [float(v) for v in self.angular]}


ZERO_TWIST = TwistCommand()


@dataclass(frozen=True)
class SafetyLimits:
    max_linear: float = 0.05
    max_angular: float = math.radians(60.0)
    max_force: float = 20.0
    workspace: tuple = ((0.0, 1.1), (-0.3, 0.3), (0.0, 1.0))

    def __post_init__(self):
        if min(self.max_linear, self.max_angular, self.max_force) <= 0:
            raise ValueError("safety bounds must be strictly positive")
        ws = tuple((float(lo), float(hi)) for lo, hi in self.workspace)
        if len(ws) != 3 or any(hi <= lo for lo, hi in ws):
            raise ValueError("workspace must be a non-degenerate box")
        object.__setattr__(self, "workspace", ws)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.workspace])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.workspace])

    def to_dict(self) -> dict:
        return {"max_linear": self.max_linear, "max_angular": self.max_angular,
                "max_force": self.max_force, "workspace": [list(b) for b in self.workspace]}


@dataclass(frozen=True)
class RobotState:
    ee_pose: Pose = field(default_factory=lambda: Pose.from_xyz(0.35, 0.0, 0.45))
    gripper_opening: float = 1.0
    gripper_force: float = 0.0
    commanded_twist: TwistCommand = ZERO_TWIST
    angle_noise_sigma: float = 0.0005
    position_noise_sigma: float = 0.0002
    gripper_target: float = 1.0
    gripper_speed: float = 1.0
    gripper_force_limit: float = 10.0


def clamp_twist(cmd: TwistCommand, limits: SafetyLimits) -> TwistCommand:
    lin = np.clip(cmd.linear, -limits.max_linear, limits.max_linear)
    ang = np.clip(cmd.angular, -limits.max_angular, limits.max_angular)
    return TwistCommand(lin, ang)


def check_workspace(pose: Pose, limits: SafetyLimits) -> bool:
    p = pose.position
    return bool(np.all(p >= limits.lower) and np.all(p <= limits.upper))


def apply_twist(state: RobotState, cmd: TwistCommand, dt: float, limits: SafetyLimits) -> RobotState:
    """Integrate a clamped twist for `dt` and project onto the workspace box.

    Angular velocity is world-frame: the rotation exp(w dt) is composed on the left.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = clamp_twist(cmd, limits)
    pos = np.clip(state.ee_pose.position + c.linear * dt, limits.lower, limits.upper)
    q = state.ee_pose.orientation
    if np.any(c.angular):
        q = quat_normalize(quat_multiply(quat_from_rotvec(c.angular * dt), q))
    return replace(state, ee_pose=Pose(pos, q), commanded_twist=c)


def set_gripper(state: RobotState, opening: float, force_limit: float, speed: float,
                limits: SafetyLimits | None = None) -> RobotState:
    limits = limits or SafetyLimits()
    if not 0.0 <= opening <= 1.0:
        raise ValueError("opening must lie in [0, 1]")
    if force_limit > limits.max_force:
        raise ForceLimitExceeded(f"{force_limit} N exceeds the {limits.max_force} N limit")
    if speed <= 0:
        raise ValueError("speed must be positive")
    return replace(state, gripper_target=float(opening), gripper_speed=float(speed),
                   gripper_force_limit=float(force_limit))


def step_gripper(state: RobotState, dt: float = GRIPPER_DT, contact_opening: float | None = None) -> RobotState:
    """Advance the gripper one tick toward its target.

    `contact_opening` is the opening at which the fingers meet an object
    between them; closing halts there and the fingers squeeze at the force limit.
    """
    cur = state.gripper_opening
    tgt = state.gripper_target
    step = state.gripper_speed * dt + 1e-12  # absorbs float drift over many ticks
    if tgt < cur:
        new = max(tgt, cur - step)
        if contact_opening is not None and new <= contact_opening <= cur + 1e-12:
            return replace(state, gripper_opening=contact_opening, gripper_force=state.gripper_force_limit)
        return replace(state, gripper_opening=new, gripper_force=0.0)
    if tgt > cur:
        new = min(tgt, cur + step)
        return replace(state, gripper_opening=new, gripper_force=0.0)
    return state


def opening_for_width(width: float) -> float:
    return min(1.0, max(0.0, width / GRIPPER_MAX_WIDTH))
