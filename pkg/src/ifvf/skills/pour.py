"""Pour a target mass using the change in gravity-compensated up-force.

While the held vessel is static its weight is carried entirely by the
gripper, so the global vertical force is F_up = m g and every gram that
leaves the vessel lowers F_up by 9.81 mN. The skill tilts about the pour
point (pivot compensation keeps the spout fixed over the receptacle), tracks
the estimate with a short linear regression and levels out early enough that
the flow still in progress lands on the target.
"""

from __future__ import annotations

import math

import numpy as np

from ..geometry import cross, quat_conjugate, quat_multiply, quat_to_matrix, quat_to_rotvec
from ..robot import TwistCommand
from ..world import GRAVITY, UP
from .base import (
    Command,
    SkillContext,
    SkillError,
    angular_toward,
    hold,
    horizontal_distance,
    move_to,
)


class SourceEmpty(SkillError):
    pass


class ReceptacleLost(SkillError):
    pass


CLEARANCE = 0.08  # spout height above the receptacle rim, m
ONSET = 0.005  # estimated mass that counts as flow onset, kg
ONSET_RATE = 0.002  # and the flow rate that must accompany it, kg/s
ONSET_TICKS = 4  # consecutive control ticks satisfying both
MAX_EXCESS_AT_ONSET = 0.2  # rad
WINDOW = 1.0  # regression window, s
LATENCY = 0.05  # filter + command delay, s
MAX_TILT = 2.4  # rad, about 137 deg
PLATEAU = 1.5  # s without progress at maximum tilt
MOVE_TOL = 0.03  # a detection this far from the goal means the receptacle moved, m
BACKOFF = 0.25  # tilt given back before translating to a moved receptacle, rad
LOST_TICKS = 2


def regression(ctx: SkillContext, seconds: float = WINDOW):
    """Least-squares line through the recent up-force: (value at the newest sample, slope)."""
    n = max(2, int(round(seconds * 100)))
    recent = list(ctx.history)[-n:]
    if len(recent) < 2:
        return ctx.up, 0.0
    t = np.fromiter((r[0] for r in recent), float, len(recent))
    y = np.fromiter((r[1] for r in recent), float, len(recent))
    t = t - t[-1]
    tm, ym = t.mean(), y.mean()
    var = float(((t - tm) ** 2).sum())
    slope = float(((t - tm) * (y - ym)).sum() / var) if var > 0 else 0.0
    return ym - slope * tm, slope


class _Pour:
    """Shared geometry and bookkeeping for one pour_to_mass invocation."""

    def __init__(self, ctx: SkillContext, source: str, receptacle: str, pitch_rate: float):
        self.ctx = ctx
        self.receptacle = receptacle
        ps = ctx.priors[source]
        if ps.spout_offset is None:
            raise SkillError(f"{source} has no spout", estimated_mass=0.0)
        self.prior_r = ctx.priors[receptacle]
        self.r_ee = np.asarray(ps.spout_offset, float) - np.asarray(ps.grasp_offset, float)
        self.level_q = ctx.ee_pose.orientation.copy()
        rot = quat_to_matrix(self.level_q)
        d = rot @ self.r_ee
        d[2] = 0.0
        d = d / np.linalg.norm(d)
        self.axis = cross(UP, d)
        self.rate = min(float(pitch_rate), ctx.limits.max_angular)
        reach = float(np.linalg.norm(self.r_ee))
        self.return_rate = min(0.9, ctx.limits.max_angular, 0.95 * ctx.limits.max_linear / reach)
        self.rate = min(self.rate, 0.95 * ctx.limits.max_linear / reach)
        self.goal = None
        self.samples = 0
        self.last_seen = -1
        self.retargets = 0

    # ---------------------------------------------------------- geometry
    def spout(self) -> np.ndarray:
        return self.ctx.ee_pose.position + quat_to_matrix(self.ctx.ee_pose.orientation) @ self.r_ee

    def tilt(self) -> float:
        """Signed pitch about the pour axis relative to the level pose."""
        rel = quat_multiply(self.ctx.ee_pose.orientation, quat_conjugate(self.level_q))
        return float(quat_to_rotvec(rel) @ self.axis)

    def pour_point(self) -> np.ndarray:
        return self.goal + np.array([0.0, 0.0, self.prior_r.height + CLEARANCE])

    def pivot_twist(self, omega: np.ndarray) -> TwistCommand:
        """Rotate by `omega` while servoing the spout onto the pour point."""
        r = quat_to_matrix(self.ctx.ee_pose.orientation) @ self.r_ee
        v = -cross(omega, r) + velocity_toward_point(self.spout(), self.pour_point(), self.ctx.limits.max_linear)
        return TwistCommand(v, omega)

    # ------------------------------------------------------------ vision
    def check_vision(self) -> bool:
        """Fold in a fresh detection; True when the receptacle has moved."""
        ctx = self.ctx
        if ctx.ticks_since_seen(self.receptacle) > LOST_TICKS:
            raise ReceptacleLost(f"{self.receptacle} not detected for {ctx.ticks_since_seen(self.receptacle)} vision ticks")
        seen = ctx.seen_tick.get(self.receptacle, -1)
        if seen == self.last_seen:
            return False
        self.last_seen = seen
        p = ctx.latest(self.receptacle).pose.position
        if self.goal is None:
            self.goal, self.samples = p.copy(), 1
            return False
        if horizontal_distance(p, self.goal) > MOVE_TOL:
            self.goal, self.samples = p.copy(), 1
            self.retargets += 1
            ctx.emit("retarget", target=self.receptacle, position=p.tolist(), vision_tick=ctx.vision_ticks)
            return True
        # stationary receptacle: average detections to beat pose noise
        self.samples += 1
        self.goal = self.goal + (p - self.goal) / self.samples
        return False

    # ----------------------------------------------------------- motions
    def align(self):
        ctx = self.ctx
        rot = quat_to_matrix(ctx.ee_pose.orientation)
        yield from move_to(ctx, lambda: self.pour_point() - rot @ self.r_ee, on_tick=self.check_vision)

    def level(self):
        """Return to the level pose about the spout."""
        ctx = self.ctx
        for _ in range(400):
            self.check_vision_safe()
            omega = angular_toward(ctx, self.level_q, self.return_rate)
            if float(np.linalg.norm(omega)) < 1e-3:
                return
            yield Command(self.pivot_twist(omega))

    def check_vision_safe(self):
        try:
            return self.check_vision()
        except ReceptacleLost:
            return False

    def rest_mass(self, baseline: float):
        yield from hold(self.ctx, 1.3)
        up = float(self.ctx.up_window(1.0).mean())
        return (baseline - up) / GRAVITY

    def tilt_phase(self, remaining: float, baseline: float):
        """Tilt until the predicted final mass reaches `remaining`.

        Returns ``(reason, estimate)`` with reason in {"done", "moved"}.
        """
        ctx = self.ctx
        streak = 0
        theta_det = excess_det = 0.0
        flowing = False
        stalled = 0.0
        omega_vec = self.axis * self.rate
        while True:
            moved = self.check_vision()
            value, slope = regression(ctx)
            est = (baseline - value) / GRAVITY
            q = -slope / GRAVITY
            theta = self.tilt()
            if moved:
                if flowing or est >= ONSET:
                    return "moved", est
                yield from self._backoff_and_translate(theta)
                streak = 0
                continue
            if not flowing:
                streak = streak + 1 if (est >= ONSET and q >= ONSET_RATE) else 0
                if streak >= ONSET_TICKS:
                    flowing = True
                    # early flow grows quadratically, so the excess tilt at detection is 2 w m / q
                    theta_det = theta
                    excess_det = min(MAX_EXCESS_AT_ONSET, 2.0 * self.rate * est / q)
                    ctx.emit("flow_onset", tilt=theta, estimate=est)
            if flowing:
                # residual after levelling out: the flow decays linearly to zero while the
                # excess tilt is given back at the return rate
                excess = theta - theta_det + excess_det
                predicted = est + q * LATENCY + q * excess / (2.0 * self.return_rate)
                if predicted >= remaining:
                    return "done", est
            if theta >= MAX_TILT:
                stalled += 0.025
                if stalled >= PLATEAU and (not flowing or q < 0.0005):
                    raise SourceEmpty("no further mass leaves the source", estimated_mass=max(0.0, est))
                yield Command(self.pivot_twist(np.zeros(3)))
            else:
                stalled = 0.0
                yield Command(self.pivot_twist(omega_vec))

    def _backoff_and_translate(self, theta: float):
        target = max(0.0, theta - BACKOFF)
        while self.tilt() > target + 0.01:
            yield Command(self.pivot_twist(-self.axis * self.return_rate))
        for _ in range(400):
            if float(np.linalg.norm(self.spout() - self.pour_point())) < 0.003:
                return
            self.check_vision()
            yield Command(self.pivot_twist(np.zeros(3)))
        raise SkillError("could not follow the receptacle")


def velocity_toward_point(current, goal, speed: float, gain: float = 2.0) -> np.ndarray:
    err = np.asarray(goal, float) - np.asarray(current, float)
    dist = float(np.linalg.norm(err))
    if dist < 1e-9:
        return np.zeros(3)
    return err / dist * min(speed, gain * dist)


def pour_to_mass(ctx: SkillContext, target_mass: float, source: str, receptacle: str,
                 pitch_rate: float = math.radians(4.0)):
    if target_mass <= 0.0:
        return {"estimated_mass": 0.0, "target_mass": float(target_mass), "segments": 0}
    if not ctx.gripping:
        raise SkillError(f"{source} is not grasped", estimated_mass=0.0)
    if ctx.latest(receptacle) is None:
        raise ReceptacleLost(f"{receptacle} has not been detected", estimated_mass=0.0)
    pour = _Pour(ctx, source, receptacle, pitch_rate)
    pour.check_vision()
    total = 0.0
    segments = 0
    while True:
        yield from pour.align()
        yield from hold(ctx, 0.3)
        yield from hold(ctx, 1.0)
        baseline = float(ctx.up_window(1.0).mean())
        segments += 1
        try:
            reason, _ = yield from pour.tilt_phase(target_mass - total, baseline)
        except SkillError as err:
            yield from pour.level()
            seg = yield from pour.rest_mass(baseline)
            err.measured.update(estimated_mass=total + seg, target_mass=float(target_mass),
                                segments=segments, retargets=pour.retargets)
            raise
        yield from pour.level()
        total += yield from pour.rest_mass(baseline)
        if reason == "done" or total >= target_mass:
            break
    return {"estimated_mass": total, "target_mass": float(target_mass), "segments": segments,
            "retargets": pour.retargets, "pitch_rate": float(pour.rate)}
