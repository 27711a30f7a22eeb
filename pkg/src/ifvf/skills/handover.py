"""Hand an item to a person tracked by vision."""

from __future__ import annotations

import numpy as np

from ..robot import TwistCommand
from ..world import UP
from .base import (
    HOLD,
    Command,
    SkillContext,
    SkillError,
    guard_force,
    horizontal_distance,
    move_to,
    operate_gripper,
    velocity_toward,
)

RELEASE_FORCE = 3.0  # N of external pull
RELEASE_TICKS = 3  # consecutive force ticks above it
LOST_TICKS = 3  # vision ticks without a hand
RETARGET = 0.03  # m


class HandLost(SkillError):
    pass


def _hand(ctx: SkillContext):
    hands = ctx.find_class("hand")
    return hands[0] if hands else None


def handover(ctx: SkillContext, item: str):
    if not ctx.gripping:
        raise SkillError(f"{item} is not grasped")
    if "hand" not in ctx.classes:
        raise HandLost("vision is not looking for hands")
    prior = ctx.priors[item]
    baseline = ctx.baseline_force.copy()
    start_vision = ctx.vision_ticks
    goal = None
    seen = -1
    retargets = 0
    streak = 0
    last_force_t = None
    while True:
        det = _hand(ctx)
        if det is None:
            if ctx.vision_ticks - start_vision > LOST_TICKS:
                raise HandLost("no hand detected", retargets=retargets)
        else:
            if ctx.ticks_since_seen(det.object_id) > LOST_TICKS:
                raise HandLost(f"hand not seen for {ctx.ticks_since_seen(det.object_id)} vision ticks",
                               retargets=retargets)
            tick = ctx.seen_tick[det.object_id]
            if tick != seen:
                seen = tick
                # the hand closes on the item's base frame
                new_goal = det.pose.position + prior.grasp_offset
                if goal is not None and horizontal_distance(new_goal, goal) > RETARGET:
                    retargets += 1
                    ctx.emit("retarget", target=det.object_id, position=det.pose.position.tolist(),
                             vision_tick=ctx.vision_ticks)
                goal = new_goal
        # count force ticks, not control ticks: several may land between two control ticks
        for t, _, f in list(ctx.history)[-4:]:
            if last_force_t is not None and t <= last_force_t:
                continue
            last_force_t = t
            pull = float(np.linalg.norm(np.asarray(f) - baseline))
            streak = streak + 1 if pull > RELEASE_FORCE else 0
        if streak >= RELEASE_TICKS:
            break
        if goal is None:
            yield HOLD
            continue
        goal = np.clip(goal, ctx.limits.lower, ctx.limits.upper)
        yield Command(TwistCommand(velocity_toward(ctx, goal, 0.05)))
        guard_force(ctx, 0.85)
    release_force = float(np.linalg.norm(ctx.force - baseline))
    yield from operate_gripper(ctx, 1.0)
    yield from move_to(ctx, np.minimum(ctx.ee_pose.position + UP * 0.05, ctx.limits.upper))
    return {"release_force": release_force, "retargets": retargets}
