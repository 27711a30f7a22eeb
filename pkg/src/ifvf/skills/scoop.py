"""Scoop granular material in dip-lift-transfer cycles.

Each cycle's load is the rise in static up-force after lifting a filled
spoon, measured against the empty-spoon baseline. Cycles stop once the
cumulative estimate is within half a nominal scoop of the target, which keeps
the final error below half a scoop whichever way the last decision falls.
"""

from __future__ import annotations

import numpy as np

from ..geometry import cross, quat_from_axis_angle, quat_multiply, quat_to_matrix
from ..robot import TwistCommand
from ..world import GRAVITY, UP
from .base import Command, SkillContext, SkillError, angular_toward, hold, move_to
from .pour import ReceptacleLost, SourceEmpty, velocity_toward_point

DIP_DEPTH = 0.05  # tip below the source rim, m
ABOVE = 0.03  # tip clearance over a rim while travelling
DUMP_ANGLE = 1.3  # rad
DUMP_RATE = 0.3  # rad/s
EMPTY_FRACTION = 0.3  # a cycle lighter than this share of a scoop means the source is empty
MAX_CYCLES = 20


class _Spoon:
    def __init__(self, ctx: SkillContext, spoon_id: str):
        self.ctx = ctx
        p = ctx.priors[spoon_id]
        tip = np.zeros(3) if p.spout_offset is None else np.asarray(p.spout_offset, float)
        self.r_ee = tip - p.grasp_offset
        self.capacity = p.scoop_capacity

    def tip(self) -> np.ndarray:
        return self.ctx.ee_pose.position + quat_to_matrix(self.ctx.ee_pose.orientation) @ self.r_ee

    def move_tip(self, goal, speed: float = 0.05, tol: float = 0.0015):
        yield from move_to(self.ctx, lambda: goal - quat_to_matrix(self.ctx.ee_pose.orientation) @ self.r_ee,
                           speed=speed, tol=tol)

    def rotate_about_tip(self, goal_q, rate: float):
        ctx = self.ctx
        pivot = self.tip()
        for _ in range(2000):
            omega = angular_toward(ctx, goal_q, rate)
            if float(np.linalg.norm(omega)) < 1e-3:
                return
            r = quat_to_matrix(ctx.ee_pose.orientation) @ self.r_ee
            v = -cross(omega, r) + velocity_toward_point(self.tip(), pivot, ctx.limits.max_linear)
            yield Command(TwistCommand(v, omega))
        raise SkillError("spoon rotation did not converge")


def _spoon_id(ctx: SkillContext, source: str) -> str:
    spoons = [p.id for p in ctx.priors.values() if p.scoop_capacity > 0 and p.id != source]
    if not spoons:
        raise SkillError("no spoon among the known objects")
    return spoons[0]


def _rim_point(ctx: SkillContext, object_id: str, lost, above: float) -> np.ndarray:
    if ctx.latest(object_id) is None or ctx.ticks_since_seen(object_id) > 2:
        raise lost(f"{object_id} not detected")
    det = ctx.latest(object_id)
    return det.pose.position + np.array([0.0, 0.0, ctx.priors[object_id].height + above])


def scoop(ctx: SkillContext, target_mass: float, source: str, receptacle: str):
    if target_mass <= 0.0:
        return {"estimated_mass": 0.0, "target_mass": float(target_mass), "cycles": 0}
    if not ctx.gripping:
        raise SkillError("spoon is not grasped", estimated_mass=0.0)
    spoon = _Spoon(ctx, _spoon_id(ctx, source))
    level_q = ctx.ee_pose.orientation.copy()
    over_source = _rim_point(ctx, source, SourceEmpty, ABOVE)
    _rim_point(ctx, receptacle, ReceptacleLost, ABOVE)
    yield from spoon.move_tip(over_source)
    yield from hold(ctx, 1.0)
    yield from hold(ctx, 2.0)
    empty = float(ctx.up_window(2.0).mean())
    total = 0.0
    cycles = []
    while total < target_mass - 0.5 * spoon.capacity and len(cycles) < MAX_CYCLES:
        over_source = _rim_point(ctx, source, SourceEmpty, ABOVE)
        yield from spoon.move_tip(over_source)
        yield from spoon.move_tip(over_source - UP * (ABOVE + DIP_DEPTH), speed=0.03)
        yield from hold(ctx, 0.2)
        yield from spoon.move_tip(over_source)
        yield from hold(ctx, 0.5)
        yield from hold(ctx, 1.5)
        load = (float(ctx.up_window(1.5).mean()) - empty) / GRAVITY
        if load < EMPTY_FRACTION * spoon.capacity:
            raise SourceEmpty(f"scoop {len(cycles) + 1} came up with {load * 1000:.1f} g",
                              estimated_mass=total, cycles=len(cycles))
        over_recv = _rim_point(ctx, receptacle, ReceptacleLost, ABOVE)
        yield from spoon.move_tip(over_source + UP * 0.02)
        yield from spoon.move_tip(over_recv + UP * 0.02)
        yield from spoon.move_tip(over_recv)
        axis = cross(UP, over_recv - over_source)
        axis = axis / np.linalg.norm(axis) if np.linalg.norm(axis) > 1e-9 else np.array([0.0, 1.0, 0.0])
        yield from spoon.rotate_about_tip(quat_multiply(quat_from_axis_angle(axis, DUMP_ANGLE), level_q), DUMP_RATE)
        yield from hold(ctx, 0.5)
        yield from spoon.rotate_about_tip(level_q, DUMP_RATE)
        total += load
        cycles.append(load)
        ctx.emit("scoop_cycle", load=load, total=total)
    return {"estimated_mass": total, "target_mass": float(target_mass), "cycles": len(cycles), "cycle_masses": cycles}
