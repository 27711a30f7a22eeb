"""Plain motion skills: absolute and relative TCP moves, gripper rotation."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import quat_from_axis_angle, quat_multiply
from ..robot import TwistCommand
from ..world import UP
from .base import Command, SkillContext, SkillError, angular_toward, move_to


def _check_reachable(ctx: SkillContext, goal: np.ndarray) -> None:
    lim = ctx.limits
    if np.any(goal < lim.lower - 1e-9) or np.any(goal > lim.upper + 1e-9):
        raise SkillError(f"target {np.round(goal, 3).tolist()} lies outside the workspace")


def move_to_pose(ctx: SkillContext, position, speed: float = 0.05):
    goal = np.asarray(position, dtype=float)[:3]
    _check_reachable(ctx, goal)
    yield from move_to(ctx, goal, speed=speed)
    return {"goal": goal.tolist()}


def move_relative(ctx: SkillContext, offset, speed: float = 0.05):
    goal = ctx.ee_pose.position + np.asarray(offset, dtype=float)[:3]
    _check_reachable(ctx, goal)
    yield from move_to(ctx, goal, speed=speed)
    return {"goal": goal.tolist()}


def rotate_gripper(ctx: SkillContext, angle: float, rate: float = math.radians(30.0)):
    """Rotate the gripper about the vertical by `angle` radians."""
    goal_q = quat_multiply(quat_from_axis_angle(UP, float(angle)), ctx.ee_pose.orientation)
    for _ in range(int(60.0 / 0.025)):
        omega = angular_toward(ctx, goal_q, rate)
        if float(np.linalg.norm(omega)) < 1e-3:
            return {"goal_orientation": goal_q.tolist(), "angle": float(angle)}
        yield Command(TwistCommand(np.zeros(3), omega))
    raise SkillError("rotation did not converge")
