"""Pick and place with vision targets and force verification."""

from __future__ import annotations

import numpy as np

from ..geometry import quat_to_matrix
from ..robot import GRIPPER_MAX_WIDTH, TwistCommand
from ..world import GRAVITY
from .base import (
    HOLD,
    Command,
    ObjectLost,
    SafetyAbort,
    SkillContext,
    SkillError,
    guard_force,
    hold,
    move_to,
    operate_gripper,
)


class GraspFailed(SkillError):
    pass


class NoContact(SkillError):
    pass


APPROACH_HEIGHT = 0.08
DESCENT_SPEED = 0.02
CONTACT_THRESHOLD = 2.0  # N of up-force given up to the support
GRASP_MAX_AGE = 2  # vision ticks a detection stays usable
PICK_RETRIES = 2
MIN_PAYLOAD = 0.1  # N, several noise sigmas of a half-second mean


def await_detection(ctx: SkillContext, object_id: str, max_age: int = GRASP_MAX_AGE, patience: int = 2):
    """Wait up to `patience` vision ticks for a detection no older than `max_age`."""
    start = ctx.vision_ticks
    while ctx.latest(object_id) is None or ctx.ticks_since_seen(object_id) > max_age:
        if ctx.vision_ticks - start >= patience:
            raise ObjectLost(f"{object_id} is not in view")
        yield HOLD
    return ctx.latest(object_id)


def wait_fresh(ctx: SkillContext, object_id: str, patience: int = 2):
    """Wait for a detection from a vision tick after the current one."""
    seen = ctx.seen_tick.get(object_id, -1)
    start = ctx.vision_ticks
    while ctx.seen_tick.get(object_id, -1) == seen:
        if ctx.vision_ticks - start > patience:
            raise ObjectLost(f"{object_id} is not in view")
        yield HOLD
    return ctx.latest(object_id)


def grasp_point(ctx: SkillContext, object_id: str) -> np.ndarray:
    det = ctx.latest(object_id)
    prior = ctx.priors[object_id]
    return det.pose.position + quat_to_matrix(det.pose.orientation) @ prior.grasp_offset


def _opening(width: float, margin: float = 0.03) -> float:
    return min(1.0, (width + margin) / GRIPPER_MAX_WIDTH)


def pick(ctx: SkillContext, object: str):
    if ctx.gripping:
        raise SkillError("gripper is not free")
    prior = ctx.priors.get(object)
    if prior is None:
        raise ObjectLost(f"unknown object {object}")
    yield from await_detection(ctx, object)
    attempts = 0
    while True:
        attempts += 1
        yield from operate_gripper(ctx, _opening(prior.grasp_width))
        yield from move_to(ctx, lambda: grasp_point(ctx, object) + np.array([0.0, 0.0, APPROACH_HEIGHT]))
        baseline = yield from _mean_up(ctx)
        yield from move_to(ctx, lambda: grasp_point(ctx, object), speed=DESCENT_SPEED, tol=0.001)
        yield from operate_gripper(ctx, 0.0)
        if not ctx.gripping:
            # fingers closed on nothing: back off and look again
            yield from operate_gripper(ctx, _opening(prior.grasp_width))
            yield from _lift(ctx)
            if attempts > PICK_RETRIES:
                raise GraspFailed(f"nothing between the fingers after {attempts} attempts")
            yield from wait_fresh(ctx, object)
            continue
        yield from _lift(ctx)
        loaded = yield from _mean_up(ctx)
        delta = loaded - baseline
        expected = prior.mass * GRAVITY
        if delta < max(0.5 * expected, MIN_PAYLOAD):
            yield from operate_gripper(ctx, _opening(prior.grasp_width))
            raise GraspFailed(f"up-force rose by {delta:.2f} N, expected about {expected:.2f} N",
                              delta_up=delta)
        return {"delta_up": delta, "mass_estimate": delta / GRAVITY, "attempts": attempts}


def _mean_up(ctx: SkillContext, settle: float = 0.3, window: float = 0.5):
    yield from hold(ctx, settle + window)
    return float(ctx.up_window(window).mean())


def _lift(ctx: SkillContext, height: float = APPROACH_HEIGHT):
    goal = ctx.ee_pose.position + np.array([0.0, 0.0, height])
    goal[2] = min(goal[2], ctx.limits.upper[2])
    yield from move_to(ctx, goal)


def place(ctx: SkillContext, object: str, target_pose):
    if not ctx.gripping:
        raise SkillError(f"{object} is not grasped")
    prior = ctx.priors[object]
    target = np.asarray(target_pose, dtype=float)[:3]
    tcp_goal = target + prior.grasp_offset
    above = tcp_goal + np.array([0.0, 0.0, 0.05])
    if np.any(above > ctx.limits.upper) or np.any(tcp_goal < ctx.limits.lower):
        raise SafetyAbort(f"placing at {np.round(target, 3).tolist()} needs a pose outside the workspace")
    yield from move_to(ctx, above)
    baseline = yield from _mean_up(ctx)
    peak = 0.0
    floor = ctx.limits.lower[2]
    while True:
        contact = baseline - ctx.up
        peak = max(peak, contact)
        if contact >= CONTACT_THRESHOLD:
            break
        if ctx.ee_pose.position[2] <= floor + 1e-4:
            raise NoContact("reached the workspace floor without a contact force", peak_force=peak)
        yield Command(TwistCommand(np.array([0.0, 0.0, -DESCENT_SPEED])))
        guard_force(ctx)
    for _ in range(2):
        yield HOLD
        peak = max(peak, baseline - ctx.up)
    rest = ctx.ee_pose.position - prior.grasp_offset
    yield from operate_gripper(ctx, _opening(prior.grasp_width))
    yield from _lift(ctx, 0.05)
    return {"contact_force": peak, "contact_height": float(rest[2])}
