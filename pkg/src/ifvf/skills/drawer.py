"""Drawer and door opening with mechanism discovery.

The handle is grasped and pulled along the nominal opening direction for a
short probe. The averaged force and torque at the end of the probe separate
the three mechanisms: a locked front resists with a force that climbs to the
probe cap, a linear drawer settles at its sliding friction with no lateral
load, and a hinged door bends away from the straight pull so a lateral force
(and the torque about the pull axis it produces at the sensor) appears.
"""

from __future__ import annotations

import numpy as np

from ..geometry import cross
from ..robot import CONTROL_DT, TwistCommand
from ..world import UP
from .base import (
    Command,
    ObjectLost,
    SkillContext,
    SkillError,
    average_force,
    guard_force,
    hold,
    move_to,
    operate_gripper,
)
from .manipulation import _opening, await_detection

PROBE_SECONDS = 2.0
PROBE_SPEED = 0.03
PROBE_CAP = 10.0  # N
LOCKED_FRACTION = 0.9  # of the cap, along the pull
LATERAL_HINGE = 1.0  # N
TORQUE_HINGE = 0.08  # N m about the pull axis
LATERAL_LINEAR = 0.5  # N
MIN_SLIDING = 1.0  # N: below this nothing resisted the pull at all
END_STOP_RISE = 4.0  # N above the sliding level
ADMITTANCE = 0.005  # m/s per N of lateral force
STEER = 0.005  # tangent rotation per N per control tick
OPEN_SPEED = 0.03


class HandleNotFound(SkillError):
    pass


class MechanismUndetermined(SkillError):
    pass


def classify(along: float, lateral: float, torque_axis: float) -> str | None:
    """Mechanism from the probe signature, or None when it is ambiguous."""
    if along >= LOCKED_FRACTION * PROBE_CAP and lateral < LATERAL_HINGE:
        return "locked"
    if lateral >= LATERAL_HINGE and torque_axis >= TORQUE_HINGE:
        return "hinged_door"
    if lateral < LATERAL_LINEAR and MIN_SLIDING <= along < LOCKED_FRACTION * PROBE_CAP:
        return "linear_pull"
    return None


def _horizontal(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float)
    out[2] = 0.0
    return out


def _probe(ctx: SkillContext, axis: np.ndarray, f0: np.ndarray, t0: np.ndarray):
    lateral_dir = cross(UP, axis)
    start = ctx.ee_pose.position.copy()
    along = lateral = torque_axis = 0.0
    for _ in range(int(round(PROBE_SECONDS / CONTROL_DT))):
        df = ctx.force - f0
        along = float(df @ axis)
        if float(np.linalg.norm(df)) >= PROBE_CAP:
            break
        yield Command(TwistCommand(axis * PROBE_SPEED))
        guard_force(ctx)
    yield from hold(ctx, 0.1)
    df = ctx.force - f0
    dt = ctx.wrench.torque - t0
    along = float(df @ axis)
    lateral = abs(float(df @ lateral_dir))
    torque_axis = abs(float(dt @ axis))
    moved = float(np.linalg.norm(ctx.ee_pose.position - start))
    return {"along": along, "lateral": lateral, "torque_axis": torque_axis, "pulled": moved}


def _open_linear(ctx: SkillContext, axis: np.ndarray, f0: np.ndarray, travel: float, start: np.ndarray):
    sliding = None
    for _ in range(int(round(2.0 * travel / OPEN_SPEED / CONTROL_DT))):
        along = float((ctx.force - f0) @ axis)
        if sliding is None:
            sliding = along
        if float((ctx.ee_pose.position - start) @ axis) >= travel or along >= sliding + END_STOP_RISE:
            return
        yield Command(TwistCommand(axis * OPEN_SPEED))
        guard_force(ctx)


def _open_hinged(ctx: SkillContext, axis: np.ndarray, f0: np.ndarray, sliding: float):
    """Follow the door's arc by yielding to the lateral force (admittance)."""
    tangent = _horizontal(axis)
    tangent /= np.linalg.norm(tangent)
    turned = 0.0
    peak_lateral = 0.0
    for _ in range(int(round(90.0 / CONTROL_DT))):
        df = _horizontal(ctx.force - f0)
        along = float(df @ tangent)
        lat = df - along * tangent
        peak_lateral = max(peak_lateral, float(np.linalg.norm(lat)))
        if along >= sliding + END_STOP_RISE or turned > np.pi:
            break
        # the handle sits against the force, so steer (and step) away from it
        new = tangent - STEER * lat
        new /= np.linalg.norm(new)
        turned += float(np.arccos(np.clip(new @ tangent, -1.0, 1.0)))
        tangent = new
        v = OPEN_SPEED * tangent - ADMITTANCE * lat
        yield Command(TwistCommand(v))
        guard_force(ctx)
    return {"door_angle": turned, "peak_lateral": peak_lateral}


def open_drawer(ctx: SkillContext, drawer: str):
    if ctx.gripping:
        raise SkillError("gripper is not free")
    prior = ctx.priors.get(drawer)
    if prior is None or prior.kind != "drawer":
        raise HandleNotFound(f"{drawer} is not a known drawer")
    try:
        yield from await_detection(ctx, drawer)
    except ObjectLost:
        raise HandleNotFound(f"handle of {drawer} not detected") from None
    axis = _horizontal(prior.pull_axis)
    axis /= np.linalg.norm(axis)
    handle = ctx.latest(drawer).pose.position.copy()
    yield from operate_gripper(ctx, _opening(prior.grasp_width))
    yield from move_to(ctx, handle + axis * 0.06)
    yield from move_to(ctx, handle, speed=0.02, tol=0.001)
    yield from operate_gripper(ctx, 0.0)
    if not ctx.gripping:
        raise HandleNotFound(f"could not close on the handle of {drawer}")
    f0 = yield from average_force(ctx, 0.5)
    t0 = ctx.wrench.torque.copy()
    start = ctx.ee_pose.position.copy()
    probe = yield from _probe(ctx, axis, f0, t0)
    mechanism = classify(probe["along"], probe["lateral"], probe["torque_axis"])
    ctx.emit("probe", mechanism=mechanism, **probe)
    measured = {"mechanism": mechanism, "probe": probe}
    if mechanism == "linear_pull":
        yield from _open_linear(ctx, axis, f0, prior.travel, start)
    elif mechanism == "hinged_door":
        measured.update((yield from _open_hinged(ctx, axis, f0, probe["along"])))
    measured["pulled"] = float(np.linalg.norm(ctx.ee_pose.position - start))
    yield from _let_go(ctx, prior)
    if mechanism is None:
        raise MechanismUndetermined("probe signature is ambiguous", **measured)
    if mechanism == "locked":
        raise SkillError(f"{drawer} is locked", **measured)
    return measured


def _let_go(ctx: SkillContext, prior):
    yield from operate_gripper(ctx, _opening(prior.grasp_width))
    back = ctx.ee_pose.position + UP * 0.05
    yield from move_to(ctx, np.minimum(back, ctx.limits.upper))
