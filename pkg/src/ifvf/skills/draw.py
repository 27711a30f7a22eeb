"""Trace a polyline with a held pen under normal-force control.

The tip advances along the path at a fixed tangential speed; height is not
taken from the waypoints alone but corrected by a PI loop on the measured
normal force, so an error in the assumed surface height or tilt only shifts
the working point of the loop.
"""

from __future__ import annotations

import numpy as np

from ..robot import CONTROL_DT, TwistCommand
from .base import Command, SkillContext, SkillError, guard_force, hold, move_to
from .motion import _check_reachable

DRAW_SPEED = 0.01  # m/s along the path
HOVER = 0.02  # m above the first waypoint
KP = 0.002  # m/s per N
KI = 0.001  # m/s per N s
TRACK_GAIN = 2.0  # 1/s, pulls the tip back onto the moving reference
LOSS_FORCE = 0.2  # fraction of pen_force below which contact counts as lost
LOSS_SECONDS = 0.5
TRACE_EVERY = 4  # control ticks between recorded trace points
SETTLE = 0.5  # s


class SurfaceLost(SkillError):
    pass


def _polyline(points: np.ndarray):
    seg = np.diff(points, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    return cum, seg, lengths


def _point_at(points, cum, seg, lengths, s: float):
    """Position and unit tangent at arc length `s`."""
    s = min(max(s, 0.0), cum[-1])
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(max(i, 0), len(seg) - 1)
    while lengths[i] <= 0 and i < len(seg) - 1:
        i += 1
    u = (s - cum[i]) / lengths[i] if lengths[i] > 0 else 0.0
    tangent = seg[i] / lengths[i] if lengths[i] > 0 else np.zeros(3)
    return points[i] + u * seg[i], tangent


def draw_path(ctx: SkillContext, waypoints, pen_force: float = 1.5):
    pts = np.asarray(waypoints, dtype=float)
    if pts.size == 0:
        return {"traced": [], "length": 0.0, "trace_duration": 0.0}
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise SkillError("waypoints must be 3-vectors")
    if not ctx.gripping:
        raise SkillError("pen is not grasped")
    pens = [p for p in ctx.priors.values() if p.class_label == "pen"]
    grasp = pens[0].grasp_offset if pens else np.array([0.0, 0.0, 0.1])
    for p in pts:
        _check_reachable(ctx, p + grasp)
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    cum, seg, lengths = _polyline(pts)
    total = float(cum[-1])

    def tip():
        return ctx.ee_pose.position - grasp

    yield from move_to(ctx, pts[0] + grasp + np.array([0.0, 0.0, HOVER]))
    yield from hold(ctx, 0.3)
    yield from hold(ctx, 0.5)
    baseline = float(ctx.up_window(0.5).mean())

    def contact() -> float:
        return baseline - ctx.up

    # touch down
    for _ in range(int(10.0 / CONTROL_DT)):
        if contact() >= 0.5 * pen_force:
            break
        xy = (pts[0] - tip()) * TRACK_GAIN
        yield Command(TwistCommand(np.array([xy[0], xy[1], -DRAW_SPEED])))
        guard_force(ctx)
    else:
        raise SurfaceLost("no surface below the first waypoint")

    # let the force loop settle on the first point before moving along the path
    integral = 0.0
    for _ in range(int(round(SETTLE / CONTROL_DT))):
        err = pen_force - contact()
        integral = float(np.clip(integral + err * CONTROL_DT, -5.0, 5.0))
        v = TRACK_GAIN * (pts[0] - tip())
        v[2] = -KP * err - KI * integral
        yield Command(TwistCommand(v))
        guard_force(ctx)

    lost = 0.0
    forces = []
    traced = [tip().tolist()]
    steps = int(np.ceil(total / (DRAW_SPEED * CONTROL_DT) - 1e-9))
    for i in range(1, steps + 1):
        ref, tangent = _point_at(pts, cum, seg, lengths, total * i / steps)
        err = pen_force - contact()
        integral = float(np.clip(integral + err * CONTROL_DT, -5.0, 5.0))
        lost = lost + CONTROL_DT if contact() < LOSS_FORCE * pen_force else 0.0
        if lost > LOSS_SECONDS:
            raise SurfaceLost(f"pen lost contact for {lost:.2f} s", traced=traced, length=total)
        v = DRAW_SPEED * tangent + TRACK_GAIN * (ref - tip())
        # height follows the force loop rather than the reference
        v[2] = DRAW_SPEED * tangent[2] - KP * err - KI * integral
        forces.append(contact())
        if i % TRACE_EVERY == 0:
            traced.append(tip().tolist())
        yield Command(TwistCommand(v))
        guard_force(ctx)
    traced.append(tip().tolist())
    trace_duration = steps * CONTROL_DT
    lift = ctx.ee_pose.position + np.array([0.0, 0.0, HOVER])
    yield from move_to(ctx, np.minimum(lift, ctx.limits.upper))
    f = np.asarray(forces)
    return {"traced": traced, "length": total, "trace_duration": trace_duration,
            "force_mean": float(f.mean()), "force_min": float(f.min()), "force_max": float(f.max())}
