"""Deterministic multi-rate simulation loop.

The base clock runs at 1 kHz. Each tick processes, in order: world step,
force sensing, gripper, vision, control (skills), safety, logging. Topics fire
when ``tick % divisor == 0``, which makes the per-topic record counts over a
run of N ticks exact.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..errors import IFVFError
from ..geometry import Pose, quat_from_axis_angle, quat_from_rotvec, quat_multiply, quat_normalize
from ..robot import (
    CONTROL_DT,
    ZERO_TWIST,
    GRASP_FORCE_THRESHOLD,
    GRIPPER_DT,
    ForceLimitExceeded,
    apply_twist,
    check_workspace,
    opening_for_width,
    set_gripper,
    step_gripper,
)
from ..sensors import (
    RollingAverager,
    calibrate_gravity,
    detect_objects,
    raw_reading,
    read_wrench,
    wrench_to_global,
)
from ..skills import REGISTRY, validate_params
from ..skills.base import HOLD, Command, SafetyAbort, SkillContext, SkillError, SkillOutcome, SkillStatus
from ..world import WorldState
from . import truth
from .logs import DIVISORS, LogWriter, jsonable
from .scenario import ScenarioConfig

TICK_DT = 0.001
F_DIV, G_DIV, C_DIV, S_DIV, V_DIV = (DIVISORS[k] for k in ("force", "gripper", "control", "safety", "vision"))
SAFETY_STOP_FRACTION = 0.9


class Timeout(IFVFError):
    pass


def calibration_poses(position) -> list:
    """Six-orientation free-space routine: level, flipped, and +-90 deg about x and y."""
    ax = [(np.array([1.0, 0, 0]), 0.0), (np.array([1.0, 0, 0]), math.pi),
          (np.array([1.0, 0, 0]), math.pi / 2), (np.array([1.0, 0, 0]), -math.pi / 2),
          (np.array([0, 1.0, 0]), math.pi / 2), (np.array([0, 1.0, 0]), -math.pi / 2)]
    return [Pose(np.asarray(position, dtype=float), quat_from_axis_angle(a, ang)) for a, ang in ax]


class SkillRunner:
    """Steps one skill generator at control ticks and turns its ending into an outcome."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.gen = None
        self.name = None
        self.params = None
        self.step_id = None
        self.start_tick = 0
        self.snap = None
        self.pending: SkillError | None = None
        self.trace: list = []
        self.outcome: SkillOutcome | None = None

    @property
    def active(self) -> bool:
        return self.gen is not None

    def start(self, name: str, params: dict, step_id: str | None = None) -> None:
        sim = self.sim
        entry = REGISTRY[name]
        params = validate_params(entry.spec, params)
        self.name, self.params, self.step_id = name, params, step_id
        self.start_tick = sim.tick
        self.snap = truth.snapshot(sim.world, name, params)
        self.trace = []
        self.outcome = None
        self.pending = None
        sim.ctx.baseline_force = sim.ctx.force.copy()
        sim.log.record(sim.tick, "skill", {"event": "start", "skill": name, "params": params, "step": step_id})
        self.gen = entry.fn(sim.ctx, **params)

    def abort(self, exc: SkillError) -> None:
        if self.gen is not None and self.pending is None:
            self.pending = exc

    def step(self) -> Command:
        try:
            if self.pending is not None:
                exc, self.pending = self.pending, None
                cmd = self.gen.throw(exc)
            else:
                cmd = next(self.gen)
        except StopIteration as stop:
            self._finish(SkillStatus.SUCCEEDED, dict(stop.value or {}), None)
            return HOLD
        except SkillError as err:
            self._finish(err.status, dict(err.measured), f"{type(err).__name__}: {err}")
            return HOLD
        self._flush_events()
        if self.name == "draw_path":
            self._trace_pen()
        return cmd if cmd is not None else HOLD

    def _trace_pen(self) -> None:
        w = self.sim.world
        if w.held_object is None:
            return
        tip = w.objects[w.held_object].pose.position
        if tip[2] <= w.support_height(tip[0], tip[1]):
            self.trace.append([float(tip[0]), float(tip[1])])

    def _flush_events(self) -> None:
        ctx = self.sim.ctx
        for kind, data in ctx.events:
            self.sim.log.record(self.sim.tick, "skill", {"event": kind, "skill": self.name, "step": self.step_id, **data})
        ctx.events.clear()

    def _finish(self, status: SkillStatus, measured: dict, error: str | None) -> None:
        sim = self.sim
        self._flush_events()
        gt, post = truth.annotate(sim.world, self.name, self.params, self.snap, status.value, measured)
        measured = {**measured, **gt}
        if self.name == "draw_path":
            measured["trace_truth"] = self.trace
        duration = (sim.tick - self.start_tick) * TICK_DT
        self.outcome = SkillOutcome(status, jsonable(measured), duration, (self.start_tick, sim.tick), error)
        sim.log.record(sim.tick, "skill", {"event": "end", "skill": self.name, "step": self.step_id,
                                           "outcome": self.outcome.to_dict(), "postcondition": post})
        self.gen = None


class Driver:
    """Decides which skill runs next; the simulation asks it at every control tick."""

    done = False
    status = "idle"

    def control(self, sim: "Simulation") -> Command:
        return HOLD


class IdleDriver(Driver):
    pass


class SkillDriver(Driver):
    """Runs a single skill invocation."""

    def __init__(self, name: str, params: dict):
        self.name = name
        self.params = params
        self.started = False
        self.outcome = None

    def control(self, sim):
        runner = sim.runner
        if not self.started:
            self.started = True
            runner.start(self.name, self.params, "s1")
        if runner.active:
            cmd = runner.step()
            if not runner.active:
                self.outcome = runner.outcome
                self.done = True
                self.status = runner.outcome.status.value
            return cmd
        return HOLD


class Simulation:
    def __init__(self, config: ScenarioConfig, log_enabled: bool = True, seed: int | None = None):
        if seed is not None:
            config = config.with_seed(seed)
        self.config = config
        self.world = config.build_world()
        self.robot = config.build_robot()
        self.limits = config.limits()
        self.noise = config.noise()
        self.model = config.force_model()
        self.cam_est, self.cam_true = config.cameras()
        self.classes = config.vision_classes()
        ss = np.random.SeedSequence(config.seed)
        streams = ss.spawn(4)
        self.rng_force, self.rng_vision, self.rng_kin, self.rng_calib = (np.random.default_rng(s) for s in streams)
        self.ctx = SkillContext(config.priors(), self.limits)
        self.ctx.classes = set(self.classes)
        self.ctx.resources = {"camera_position": self.cam_est.camera_position}
        self.log = LogWriter({"scenario": config.to_dict(), "seed": config.seed}, enabled=log_enabled)
        self.averager = RollingAverager()
        self.runner = SkillRunner(self)
        self.tick = 0
        self.violations = 0
        self.safety_stops = 0
        self.guard_stops = 0
        self.max_interaction = 0.0
        self.finished = False
        self.status = "running"
        self.calibration = self._calibrate()
        self.world.set_ee(self.robot.ee_pose)
        held = config.data["robot"]["held"]
        if held is not None:
            self._attach(held)
        self.reported = self._report_pose()
        self.ctx.ee_pose = self.reported

    # ------------------------------------------------------------ setup
    def _calibrate(self):
        model, noise = self.model, self.noise
        poses = calibration_poses(self.robot.ee_pose.position)
        n = self.config.data["sensors"]["calibration_samples"]
        readings = []
        empty = WorldState()
        for p in poses:
            samples = [raw_reading(empty, p, noise, self.rng_calib, model) for _ in range(n)]
            f = np.mean([s.force for s in samples], axis=0)
            t = np.mean([s.torque for s in samples], axis=0)
            readings.append(type(samples[0])(f, t, samples[0].frame, 0.0))
        return calibrate_gravity(poses, readings)

    def _attach(self, oid: str) -> None:
        """Start the run with `oid` already in the gripper, hanging level from the TCP."""
        w = self.world
        obj = w.objects[oid]
        obj.pose = Pose(self.robot.ee_pose.position - obj.grasp_offset, obj.pose.orientation)
        w.grasp("object", oid)
        opening = opening_for_width(obj.grasp_width)
        self.robot = replace(self.robot, gripper_opening=opening, gripper_target=0.0,
                             gripper_force=self.robot.gripper_force_limit)
        self.ctx.gripper_opening = opening
        self.ctx.gripper_force = self.robot.gripper_force

    def _report_pose(self) -> Pose:
        n = self.rng_kin.normal(size=6)
        true = self.robot.ee_pose
        pos = true.position + n[:3] * self.noise.sigma_ee_position
        q = quat_normalize(quat_multiply(quat_from_rotvec(n[3:] * self.noise.sigma_angle), true.orientation))
        return Pose(pos, q)

    # ------------------------------------------------------------ ticks
    def step(self, driver: Driver) -> None:
        k = self.tick
        w = self.world
        if k > 0:
            w.step(TICK_DT)
            w.sim_time = k * TICK_DT
            if w.events:
                for kind, ev in w.events:
                    self.log.record(k, "event", {"event": kind, "target": ev.target_id, "at_time": ev.at_time,
                                                 "pose": ev.new_pose.to_dict()})
                w.events.clear()
        if k % F_DIV == 0:
            self._force(k)
        if k % G_DIV == 0:
            self._gripper(k)
        if k % V_DIV == 0:
            self._vision(k)
        if k % C_DIV == 0:
            self._control(k, driver)
        if k % S_DIV == 0:
            self._safety(k)
        self.tick = k + 1

    def _force(self, k: int) -> None:
        t = k * TICK_DT
        raw = read_wrench(self.world, self.robot.ee_pose, self.calibration, self.noise, t, self.rng_force,
                          self.model, reported_orientation=self.reported.orientation)
        g = wrench_to_global(self.averager.push(raw), self.reported)
        ctx = self.ctx
        ctx.wrench = g
        ctx.history.append((t, float(g.force[2]), g.force))
        self.log.record(k, "force", {"f": g.force, "tau": g.torque})

    def _gripper(self, k: int) -> None:
        w = self.world
        r = self.robot
        contact = None
        cand = None
        if w.held_object is not None:
            contact = opening_for_width(w.objects[w.held_object].grasp_width)
        elif w.held_handle is not None:
            contact = opening_for_width(w.drawers[w.held_handle].handle_width)
        elif r.gripper_target < r.gripper_opening:
            cand = w.grasp_candidate(r.ee_pose.position)
            if cand is not None:
                contact = opening_for_width(cand[2])
        self.robot = r = step_gripper(r, GRIPPER_DT, contact)
        holding = w.held_object is not None or w.held_handle is not None
        rec = {"opening": r.gripper_opening, "force": r.gripper_force}
        if not holding and cand is not None and r.gripper_force >= GRASP_FORCE_THRESHOLD:
            w.grasp(cand[0], cand[1])
            rec["event"] = {"event": "grasp", "target": cand[1], "kind": cand[0]}
        elif holding and r.gripper_opening > contact + 1e-9:
            rec["event"] = {"event": "release", "target": w.release()}
        self.ctx.gripper_opening = r.gripper_opening
        self.ctx.gripper_force = r.gripper_force
        self.log.record(k, "gripper", rec)

    def _vision(self, k: int) -> None:
        t = k * TICK_DT
        dets = detect_objects(self.world, self.classes, self.cam_est, self.noise, t, self.rng_vision, self.cam_true)
        ctx = self.ctx
        ctx.vision_ticks += 1
        for d in dets:
            prior = ctx.priors.get(d.object_id)
            if prior is not None and prior.class_label == d.class_label:
                ctx.detections[d.object_id] = d
                ctx.seen_tick[d.object_id] = ctx.vision_ticks
        self.log.record(k, "vision", {"t": t, "detections": [d.to_dict() for d in dets]})

    def _control(self, k: int, driver: Driver) -> None:
        self.reported = self._report_pose()
        ctx = self.ctx
        ctx.t = k * TICK_DT
        ctx.tick = k
        ctx.ee_pose = self.reported
        cmd = HOLD if driver.done else driver.control(self)
        if cmd.gripper is not None:
            g = cmd.gripper
            try:
                self.robot = set_gripper(self.robot, g.opening, g.force, g.speed, self.limits)
            except (ForceLimitExceeded, ValueError) as exc:
                self.runner.abort(SafetyAbort(str(exc)))
        self._move(cmd)
        tw = self.robot.commanded_twist
        self.log.record(k, "control", {"twist": tw.to_dict(), "ee": self.reported.to_dict(),
                                       "ee_true": self.robot.ee_pose.position})

    def _move(self, cmd: Command) -> None:
        """Apply the clamped twist unless it would push contact force past the stop threshold.

        The 10 Hz monitor alone is too slow for stiff contacts, so the motion
        primitive itself refuses a step that raises the force above the limit.
        """
        w = self.world
        before = self.robot
        f0 = float(np.linalg.norm(w.interaction_force()))
        self.robot = apply_twist(before, cmd.twist, CONTROL_DT, self.limits)
        w.set_ee(self.robot.ee_pose, float(np.linalg.norm(self.robot.commanded_twist.angular)))
        f1 = float(np.linalg.norm(w.interaction_force()))
        if f1 > SAFETY_STOP_FRACTION * self.limits.max_force and f1 > f0:
            self.robot = replace(before, commanded_twist=ZERO_TWIST)
            w.set_ee(before.ee_pose, 0.0)
            self.guard_stops += 1
            self.runner.abort(SafetyAbort(f"motion refused: contact force would reach {f1:.1f} N"))

    def _safety(self, k: int) -> None:
        w = self.world
        lim = self.limits
        f = float(np.linalg.norm(w.interaction_force()))
        self.max_interaction = max(self.max_interaction, f)
        violations = []
        if not check_workspace(self.robot.ee_pose, lim):
            violations.append("workspace")
        if f > lim.max_force:
            violations.append("force")
        if self.robot.gripper_force > lim.max_force:
            violations.append("gripper_force")
        self.violations += len(violations)
        stop = f > SAFETY_STOP_FRACTION * lim.max_force
        if stop and self.runner.active:
            self.safety_stops += 1
            self.runner.abort(SafetyAbort(f"safety monitor stop at {f:.1f} N"))
        self.log.record(k, "safety", {"force": f, "violations": violations, "stop": stop})

    # ------------------------------------------------------------ running
    def run(self, driver: Driver, max_time: float | None = None) -> str:
        limit = int(round((self.config.data["timeout"] if max_time is None else max_time) / TICK_DT))
        while not driver.done and self.tick < limit:
            self.step(driver)
        # finish the tick window up to the next control boundary so runs end cleanly
        while driver.done and self.tick % C_DIV:
            self.step(driver)
        if driver.done:
            self.status = driver.status
        else:
            self.status = "timeout"
        self.finished = True
        return self.status

    def run_ticks(self, n: int, driver: Driver | None = None) -> None:
        driver = driver or IdleDriver()
        for _ in range(n):
            self.step(driver)

    def log_text(self) -> str:
        return self.log.text(self.tick, self.status)
