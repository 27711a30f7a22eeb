"""Simulated force/torque transducer and object-pose detector.

Sign convention: a WrenchReading reports the wrench the sensor exerts on
everything distal to it (tool + payload). Holding a mass m level therefore
reads +m*g along global z, so the global z component is the upward support
force F_up used for quasi-static mass estimation. A surface pushing up on the
payload lowers F_up; pulling a handle toward the robot reads force along the
pull direction.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import IFVFError
from .geometry import (
    Pose,
    apply_transform,
    cross,
    invert_transform,
    is_rigid,
    quat_to_matrix,
)
from .world import GRAVITY, UP, WorldState

FORCE_DT = 0.01
VISION_PERIOD = 3.0
OCCLUSION_RADIUS = 0.12


class WrongFrame(IFVFError):
    pass


class MixedFrames(IFVFError):
    pass


class DegenerateRoutine(IFVFError):
    pass


class Frame(str, enum.Enum):
    SENSOR_LOCAL = "sensor_local"
    ROBOT_BASE = "robot_base"


@dataclass(frozen=True)
class WrenchReading:
    force: np.ndarray
    torque: np.ndarray
    frame: Frame
    timestamp: float

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3)
        t = np.asarray(self.torque, dtype=float).reshape(3)
        if not math.isfinite(float(f.sum() + t.sum())):
            raise ValueError("wrench must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)
        object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def up(self) -> float:
        """Global vertical support force; meaningful for robot_base readings."""
        return float(self.force[2])

    def to_dict(self) -> dict:
        return {"force": [float(v) for v in self.force], "torque": [float(v) for v in self.torque],
                "frame": self.frame.value, "t": self.timestamp}


@dataclass(frozen=True)
class CalibrationState:
    bias_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tool_mass: float = 0.0
    tool_com: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.tool_mass < 0:
            raise ValueError("tool_mass must be non-negative")
        for name in ("bias_force", "bias_torque", "tool_com"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    def gravity_wrench(self, rotation: np.ndarray):
        """Tool weight as seen in the sensor frame for a sensor->base rotation."""
        f = rotation.T @ (UP * self.tool_mass * GRAVITY)
        return f, cross(self.tool_com, f)

    def to_dict(self) -> dict:
        return {"bias_force": self.bias_force.tolist(), "bias_torque": self.bias_torque.tolist(),
                "tool_mass": self.tool_mass, "tool_com": self.tool_com.tolist()}


@dataclass(frozen=True)
class NoiseModel:
    sigma_force: float = 0.1
    sigma_torque: float = 0.005
    sigma_pose: float = 0.005
    sigma_angle: float = 0.0005
    sigma_ee_position: float = 0.0002
    misdetect_prob: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_force", "sigma_torque", "sigma_pose", "sigma_angle", "sigma_ee_position"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.misdetect_prob <= 1.0:
            raise ValueError("misdetect_prob must lie in [0, 1]")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, seed)


@dataclass(frozen=True)
class ForceSensorModel:
    """Physical properties of the transducer and the tool mounted on it."""

    tool_mass: float = 0.9
    tool_com: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.04]))
    bias_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # TCP -> sensor origin, in the end-effector frame
    sensor_offset: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.16]))
    c_slosh: float = 0.6

    def __post_init__(self):
        for name in ("tool_com", "bias_force", "bias_torque", "sensor_offset"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))


@dataclass(frozen=True)
class PoseDetection:
    object_id: str
    class_label: str
    pose: Pose
    timestamp: float
    confidence: float = 1.0

    def to_dict(self) -> dict:
        return {"id": self.object_id, "class": self.class_label, "pose": self.pose.to_dict(),
                "t": self.timestamp, "confidence": self.confidence}


@dataclass(frozen=True)
class CameraCalibration:
    T_CA: np.ndarray
    T_AR: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.T_CA, dtype=float)
        b = np.asarray(self.T_AR, dtype=float)
        if not (is_rigid(a, 1e-6) and is_rigid(b, 1e-6)):
            raise ValueError("calibration transforms must be rigid")
        object.__setattr__(self, "T_CA", a)
        object.__setattr__(self, "T_AR", b)

    @classmethod
    def from_poses(cls, camera_in_base: Pose, tag_in_base: Pose) -> "CameraCalibration":
        t_ar = tag_in_base.as_matrix()
        t_ca = invert_transform(t_ar) @ camera_in_base.as_matrix()
        return cls(t_ca, t_ar)

    @property
    def camera_to_base_matrix(self) -> np.ndarray:
        return self.T_AR @ self.T_CA

    @property
    def camera_position(self) -> np.ndarray:
        return self.camera_to_base_matrix[:3, 3].copy()


def camera_to_base(p_camera, calib: CameraCalibration) -> np.ndarray:
    """P^R = T_AR (T_CA P^C)."""
    return apply_transform(calib.T_AR, apply_transform(calib.T_CA, p_camera))


def base_to_camera(p_base, calib: CameraCalibration) -> np.ndarray:
    return apply_transform(invert_transform(calib.T_CA), apply_transform(invert_transform(calib.T_AR), p_base))


# ---------------------------------------------------------------- force/torque
def true_sensor_wrench(world: WorldState, ee_pose: Pose, model: ForceSensorModel):
    """Noise-free, uncompensated sensor-local wrench."""
    rot = quat_to_matrix(ee_pose.orientation)
    s = ee_pose.position + rot @ model.sensor_offset
    tool_c = s + rot @ model.tool_com
    f_tool = UP * (model.tool_mass * GRAVITY)
    force = f_tool.copy()
    torque = cross(tool_c - s, f_tool)
    if world.held_object is not None:
        obj = world.objects[world.held_object]
        m = world.payload_mass()
        # dynamic load that breaks the quasi-static assumption at high rotation rates
        f_pay = UP * (m * GRAVITY + model.c_slosh * world.ee_angular_speed * m)
        c = obj.pose.transform_point([0.0, 0.0, obj.height / 2.0])
        force += f_pay
        torque += cross(c - s, f_pay)
    points, forces = world.interaction()
    for p, f in zip(points, forces):
        force -= f
        torque -= cross(p - s, f)
    return rot.T @ force, rot.T @ torque


def read_wrench(world: WorldState, ee_pose: Pose, calib: CalibrationState, noise: NoiseModel,
                t: float, rng: np.random.Generator | None = None,
                model: ForceSensorModel | None = None, reported_orientation=None) -> WrenchReading:
    """Gravity-compensated, sensor-local wrench sample."""
    model = model or ForceSensorModel()
    f, tau = true_sensor_wrench(world, ee_pose, model)
    f = f + model.bias_force
    tau = tau + model.bias_torque
    if rng is not None:
        n = rng.normal(size=6)
        f = f + n[:3] * noise.sigma_force
        tau = tau + n[3:] * noise.sigma_torque
    q = ee_pose.orientation if reported_orientation is None else reported_orientation
    gf, gt = calib.gravity_wrench(quat_to_matrix(q))
    return WrenchReading(f - calib.bias_force - gf, tau - calib.bias_torque - gt, Frame.SENSOR_LOCAL, t)


def raw_reading(world: WorldState, ee_pose: Pose, noise: NoiseModel, rng, model: ForceSensorModel, t=0.0):
    """Uncompensated sample, as consumed by the calibration routine."""
    return read_wrench(world, ee_pose, CalibrationState(), noise, t, rng, model)


def wrench_to_global(reading: WrenchReading, ee_pose: Pose) -> WrenchReading:
    """F_global = R_ee->base F_local (and likewise for torque)."""
    if reading.frame is not Frame.SENSOR_LOCAL:
        raise WrongFrame(f"expected sensor_local, got {reading.frame.value}")
    r = quat_to_matrix(ee_pose.orientation)
    return WrenchReading(r @ reading.force, r @ reading.torque, Frame.ROBOT_BASE, reading.timestamp)


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def calibrate_gravity(poses, readings, max_condition: float = 1e6) -> CalibrationState:
    """Fit sensor bias and tool mass/centre of mass from free-space readings.

    Each reading is the raw sensor-local wrench at the matching pose. The
    force model f = m R^T (g z) + b and torque model t = c x f_tool + b_t are
    linear in (m, b) and (c, b_t); both are solved by least squares. The
    sequential one-axis-at-a-time zeroing procedure is the special case of a
    routine made of axis-aligned orientations.
    """
    if len(poses) != len(readings):
        raise ValueError("one reading per pose is required")
    if len(poses) < 3:
        raise DegenerateRoutine(f"need at least 3 orientations, got {len(poses)}")
    a_f, y_f = [], []
    for pose, rd in zip(poses, readings):
        g_local = quat_to_matrix(pose.orientation).T @ (UP * GRAVITY)
        a_f.append(np.column_stack([g_local, np.eye(3)]))
        y_f.append(rd.force)
    a_f = np.vstack(a_f)
    y_f = np.concatenate(y_f)
    if np.linalg.matrix_rank(a_f) < 4 or np.linalg.cond(a_f) > max_condition:
        raise DegenerateRoutine("orientations do not determine mass and bias")
    sol, *_ = np.linalg.lstsq(a_f, y_f, rcond=None)
    mass, bias_f = float(sol[0]), sol[1:]

    a_t, y_t = [], []
    for pose, rd in zip(poses, readings):
        f_tool = quat_to_matrix(pose.orientation).T @ (UP * GRAVITY * mass)
        a_t.append(np.hstack([-_skew(f_tool), np.eye(3)]))
        y_t.append(rd.torque)
    a_t = np.vstack(a_t)
    y_t = np.concatenate(y_t)
    if np.linalg.matrix_rank(a_t) < 6 or np.linalg.cond(a_t) > max_condition:
        raise DegenerateRoutine("orientations do not determine the centre of mass")
    sol_t, *_ = np.linalg.lstsq(a_t, y_t, rcond=None)
    return CalibrationState(bias_force=bias_f, bias_torque=sol_t[3:], tool_mass=max(mass, 0.0), tool_com=sol_t[:3])


def rolling_average(window) -> WrenchReading:
    window = list(window)
    if len(window) != 5:
        raise ValueError("rolling average needs exactly five readings")
    return _mean_reading(window)


def _mean_reading(window) -> WrenchReading:
    frame = window[0].frame
    if any(r.frame is not frame for r in window):
        raise MixedFrames("window mixes frames")
    f = np.mean([r.force for r in window], axis=0)
    t = np.mean([r.torque for r in window], axis=0)
    return WrenchReading(f, t, frame, max(r.timestamp for r in window))


class RollingAverager:
    """Force-node filter publishing the mean over the last five samples."""

    def __init__(self, size: int = 5):
        self.buf = deque(maxlen=size)

    def push(self, reading: WrenchReading) -> WrenchReading:
        self.buf.append(reading)
        return _mean_reading(self.buf)


# ---------------------------------------------------------------------- vision
def is_occluded(ee_position: np.ndarray, target: np.ndarray, camera: np.ndarray,
                radius: float = OCCLUSION_RADIUS) -> bool:
    if np.linalg.norm(ee_position - target) > radius:
        return False
    ray = target - camera
    s = float((ee_position - camera) @ ray) / float(ray @ ray)
    return 0.0 < s < 1.0


def detect_objects(world: WorldState, classes, camera_calib: CameraCalibration, noise: NoiseModel,
                   t: float, rng: np.random.Generator | None = None,
                   true_calib: CameraCalibration | None = None) -> list:
    """One vision tick: noisy poses of the requested classes that are in view.

    Detections are synthesised in the camera frame with the true extrinsics
    and mapped back with `camera_calib`, so a calibration error shows up as a
    systematic offset exactly as it would on hardware.
    """
    classes = set(classes)
    true_calib = true_calib or camera_calib
    cam = true_calib.camera_position
    ee = world.ee_pose.position
    out = []
    candidates = [(o.id, o.class_label, o.pose, o.center, o.similar_shape) for o in world.objects.values()
                  if not o.held_by_robot and world.is_visible(o.id)]
    candidates += [(d.object_id, d.class_label, d.handle_pose, d.handle_pose.position, ()) for d in world.drawers.values()]
    for oid, label, pose, center, similar in candidates:
        if rng is not None:
            u = rng.random()
            n = rng.normal(size=3)
            pick = rng.random()
        else:
            u, n, pick = 1.0, np.zeros(3), 0.0
        if label not in classes and not any(s in classes for s in similar):
            continue
        if is_occluded(ee, center, cam):
            continue
        reported = label
        confidence = 0.95
        if u < noise.misdetect_prob:
            if not similar:
                continue
            reported = sorted(similar)[int(pick * len(similar)) % len(similar)]
            confidence = 0.6
        if reported not in classes:
            continue
        p_cam = base_to_camera(pose.position, true_calib) + n * noise.sigma_pose
        p = camera_to_base(p_cam, camera_calib)
        out.append(PoseDetection(oid, reported, Pose(p, pose.orientation), t, confidence))
    return out
