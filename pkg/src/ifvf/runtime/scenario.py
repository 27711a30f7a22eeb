"""Scenario files: versioned JSON describing a world, its noise and a task.

Loading normalises the document (every default filled in) so the echoed
header of a run log fully determines that run.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import IFVFError
from ..geometry import Pose, matrix_to_quat
from ..robot import RobotState, SafetyLimits
from ..sensors import CameraCalibration, ForceSensorModel, NoiseModel
from ..skills.base import ObjectPrior
from ..world import (
    ContainerState,
    DisturbanceEvent,
    DrawerState,
    HandState,
    ObjectState,
    Surface,
    WorldState,
)

SCHEMA_VERSION = 1
SUPPORTED_VERSIONS = {1}
DATA_DIR = Path(__file__).resolve().parent.parent / "data"
SCENARIO_DIR = DATA_DIR / "scenarios"


class ScenarioError(IFVFError):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnresolvedReference(ScenarioError):
    pass


class UnsupportedSchemaVersion(ScenarioError):
    pass


OBJECT_DEFAULTS = {
    "orientation": [1.0, 0.0, 0.0, 0.0],
    "mass": 0.2,
    "height": 0.1,
    "graspable": True,
    "grasp_offset": [0.0, 0.0, 0.05],
    "grasp_width": 0.04,
    "spout_offset": None,
    "scoop_capacity": 0.0,
    "contact_stiffness": 3000.0,
    "inside": None,
    "similar_shape": [],
    "container": None,
    "hand": None,
}
CONTAINER_DEFAULTS = {"capacity": 0.5, "content_mass": 0.0, "content_kind": "none", "k_flow": 0.05,
                      "theta_full": 0.35, "theta_empty": 1.4, "rim_radius": 0.03}
HAND_DEFAULTS = {"pull_force": 4.0, "pull_direction": [0.0, 1.0, 0.0], "grasp_radius": 0.03, "ramp_rate": 6.0}
DRAWER_DEFAULTS = {"class": "drawer", "mechanism": "linear_pull", "pull_axis": [-1.0, 0.0, 0.0], "travel": 0.3,
                   "hinge": None, "max_angle": math.pi / 2, "friction": 4.0, "handle_width": 0.02,
                   "grasp_stiffness": 800.0}
NOISE_DEFAULTS = {"sigma_force": 0.1, "sigma_torque": 0.005, "sigma_pose": 0.005, "sigma_angle": 0.0005,
                  "sigma_ee_position": 0.0002, "misdetect_prob": 0.02}
FORCE_DEFAULTS = {"tool_mass": 0.9, "tool_com": [0.0, 0.0, 0.04], "bias_force": [0.3, -0.2, 0.5],
                  "bias_torque": [0.01, 0.02, -0.01], "sensor_offset": [0.0, 0.0, 0.16], "c_slosh": 0.6}
CAMERA_DEFAULTS = {"position": [1.5, 0.0, 0.9], "look_at": [0.5, 0.0, 0.0],
                   "tag_position": [0.9, -0.4, 0.0], "error_translation": [0.0, 0.0, 0.0]}
LIMIT_DEFAULTS = {"max_linear": 0.05, "max_angular": math.radians(60.0), "max_force": 20.0,
                  "workspace": [[0.0, 1.1], [-0.3, 0.3], [0.0, 1.0]]}


def _fill(d: dict | None, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in (d or {}).items():
        out[k] = v
    return out


def normalise(data: dict) -> dict:
    if not isinstance(data, dict):
        raise ParseError("scenario must be a JSON object")
    version = data.get("schema_version")
    if version is None:
        raise UnsupportedSchemaVersion("missing schema_version header")
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedSchemaVersion(f"schema_version {version} not supported")
    world = data.get("world", {})
    objects = []
    for o in world.get("objects", []):
        if "id" not in o or "class" not in o or "position" not in o:
            raise ParseError(f"object entry needs id, class and position: {o}")
        full = _fill(o, OBJECT_DEFAULTS)
        if full["container"] is not None:
            full["container"] = _fill(full["container"], CONTAINER_DEFAULTS)
        if full["hand"] is not None:
            full["hand"] = _fill(full["hand"], HAND_DEFAULTS)
            full["graspable"] = False
        objects.append(full)
    drawers = []
    for d in world.get("drawers", []):
        if "id" not in d or "handle" not in d:
            raise ParseError(f"drawer entry needs id and handle: {d}")
        drawers.append(_fill(d, DRAWER_DEFAULTS))
    surfaces = [_fill(s, {"slope": [0.0, 0.0]}) for s in world.get("surfaces", [])]
    robot = data.get("robot", {})
    sensors = data.get("sensors", {})
    norm = {
        "schema_version": version,
        "name": data.get("name", "unnamed"),
        "seed": int(data.get("seed", 0)),
        "timeout": float(data.get("timeout", 600.0)),
        "world": {"table_height": float(world.get("table_height", 0.0)), "objects": objects,
                  "drawers": drawers, "surfaces": surfaces},
        "robot": {"home": robot.get("home", [0.35, 0.0, 0.45]), "held": robot.get("held"),
                  "limits": _fill(robot.get("limits"), LIMIT_DEFAULTS)},
        "sensors": {"noise": _fill(sensors.get("noise"), NOISE_DEFAULTS),
                    "force": _fill(sensors.get("force"), FORCE_DEFAULTS),
                    "camera": _fill(sensors.get("camera"), CAMERA_DEFAULTS),
                    "calibration_samples": int(sensors.get("calibration_samples", 100)),
                    "classes": sensors.get("classes")},
        "disturbances": [dict(d) for d in data.get("disturbances", [])],
        "task": data.get("task", {}),
        "assets": data.get("assets", {}),
        "metrics": data.get("metrics", []),
    }
    _resolve(norm)
    return norm


def _resolve(norm: dict) -> None:
    ids = [o["id"] for o in norm["world"]["objects"]] + [d["id"] for d in norm["world"]["drawers"]]
    if len(ids) != len(set(ids)):
        raise ScenarioError("duplicate object ids")
    known = set(ids)
    drawer_ids = {d["id"] for d in norm["world"]["drawers"]}
    for o in norm["world"]["objects"]:
        if o["inside"] is not None and o["inside"] not in drawer_ids:
            raise UnresolvedReference(f"object {o['id']} inside unknown drawer {o['inside']}")
    for d in norm["disturbances"]:
        if d.get("target") not in known - drawer_ids:
            raise UnresolvedReference(f"disturbance targets unknown object {d.get('target')!r}")
        if "at_time" not in d or ("position" in d) == ("offset" in d):
            raise ParseError(f"disturbance needs at_time and exactly one of position or offset: {d}")
    held = norm["robot"]["held"]
    if held is not None and held not in known - drawer_ids:
        raise UnresolvedReference(f"robot holds unknown object {held!r}")
    for name, surf in norm["assets"].get("surfaces", {}).items():
        ref = surf.get("object")
        if ref is not None and ref not in known:
            raise UnresolvedReference(f"drawing surface {name} refers to unknown object {ref!r}")


@dataclass
class ScenarioConfig:
    data: dict
    source: str = "<memory>"

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def task(self) -> dict:
        return self.data["task"]

    def with_seed(self, seed: int) -> "ScenarioConfig":
        d = copy.deepcopy(self.data)
        d["seed"] = int(seed)
        return ScenarioConfig(d, self.source)

    def with_task(self, task: dict) -> "ScenarioConfig":
        d = copy.deepcopy(self.data)
        d["task"] = task
        return ScenarioConfig(d, self.source)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    # ------------------------------------------------------------- builders
    def limits(self) -> SafetyLimits:
        lim = self.data["robot"]["limits"]
        return SafetyLimits(lim["max_linear"], lim["max_angular"], lim["max_force"],
                            tuple(tuple(b) for b in lim["workspace"]))

    def noise(self) -> NoiseModel:
        return NoiseModel(seed=self.seed, **self.data["sensors"]["noise"])

    def force_model(self) -> ForceSensorModel:
        return ForceSensorModel(**self.data["sensors"]["force"])

    def cameras(self):
        """(estimated, true) camera calibrations."""
        cam = self.data["sensors"]["camera"]
        pose = _look_at(np.array(cam["position"], dtype=float), np.array(cam["look_at"], dtype=float))
        tag = Pose(np.array(cam["tag_position"], dtype=float))
        true = CameraCalibration.from_poses(pose, tag)
        err = np.array(cam["error_translation"], dtype=float)
        est = CameraCalibration.from_poses(pose.translated(err), tag)
        return est, true

    def build_world(self) -> WorldState:
        w = self.data["world"]
        objects, containers, hands = {}, {}, {}
        for o in w["objects"]:
            pose = Pose(np.array(o["position"], dtype=float), np.array(o["orientation"], dtype=float))
            objects[o["id"]] = ObjectState(
                id=o["id"], class_label=o["class"], pose=pose, graspable=bool(o["graspable"]),
                mass=float(o["mass"]), height=float(o["height"]),
                grasp_offset=np.array(o["grasp_offset"], dtype=float), grasp_width=float(o["grasp_width"]),
                spout_offset=None if o["spout_offset"] is None else np.array(o["spout_offset"], dtype=float),
                scoop_capacity=float(o["scoop_capacity"]), contact_stiffness=float(o["contact_stiffness"]),
                inside=o["inside"], similar_shape=tuple(o["similar_shape"]))
            if o["container"] is not None:
                c = o["container"]
                containers[o["id"]] = ContainerState(o["id"], float(c["capacity"]), float(c["content_mass"]),
                                                     c["content_kind"], float(c["k_flow"]), float(c["theta_full"]),
                                                     float(c["theta_empty"]), float(c["rim_radius"]))
            elif o["scoop_capacity"] > 0:
                containers[o["id"]] = ContainerState(o["id"], float(o["scoop_capacity"]), 0.0, "none",
                                                     k_flow=2.0, theta_full=0.5, theta_empty=1.0, rim_radius=0.01)
            if o["hand"] is not None:
                h = o["hand"]
                hands[o["id"]] = HandState(o["id"], float(h["pull_force"]), np.array(h["pull_direction"], dtype=float),
                                           float(h["grasp_radius"]), float(h["ramp_rate"]))
        drawers = {}
        for d in w["drawers"]:
            drawers[d["id"]] = DrawerState(
                object_id=d["id"], mechanism=d["mechanism"], handle_pose=Pose(np.array(d["handle"], dtype=float)),
                class_label=d["class"], pull_axis=np.array(d["pull_axis"], dtype=float), travel=float(d["travel"]),
                hinge=None if d["hinge"] is None else np.array(d["hinge"], dtype=float),
                max_angle=float(d["max_angle"]), friction=float(d["friction"]),
                handle_width=float(d["handle_width"]), grasp_stiffness=float(d["grasp_stiffness"]))
        surfaces = [Surface(s["id"], np.array(s["center"], dtype=float), np.array(s["size"], dtype=float),
                            float(s["height"]), np.array(s["slope"], dtype=float)) for s in w["surfaces"]]
        schedule = [DisturbanceEvent(float(d["at_time"]), d["target"],
                                     Pose(np.array(d.get("position", d.get("offset")), dtype=float),
                                          np.array(d.get("orientation", [1.0, 0.0, 0.0, 0.0]), dtype=float)),
                                     relative="offset" in d)
                    for d in self.data["disturbances"]]
        world = WorldState(objects=objects, containers=containers, drawers=drawers, surfaces=surfaces,
                           hands=hands, table_height=w["table_height"], schedule=schedule)
        return world

    def build_robot(self) -> RobotState:
        home = self.data["robot"]["home"]
        pose = Pose.from_dict(home) if isinstance(home, dict) else Pose(np.array(home, dtype=float))
        n = self.data["sensors"]["noise"]
        return RobotState(ee_pose=pose, angle_noise_sigma=n["sigma_angle"], position_noise_sigma=n["sigma_ee_position"])

    def priors(self) -> dict:
        out = {}
        for o in self.data["world"]["objects"]:
            c = o["container"]
            out[o["id"]] = ObjectPrior(
                id=o["id"], class_label=o["class"], kind="hand" if o["hand"] else "object",
                height=float(o["height"]), mass=float(o["mass"]),
                grasp_offset=np.array(o["grasp_offset"], dtype=float), grasp_width=float(o["grasp_width"]),
                spout_offset=None if o["spout_offset"] is None else np.array(o["spout_offset"], dtype=float),
                rim_radius=float(c["rim_radius"]) if c else 0.03, scoop_capacity=float(o["scoop_capacity"]))
        for d in self.data["world"]["drawers"]:
            out[d["id"]] = ObjectPrior(id=d["id"], class_label=d["class"], kind="drawer",
                                       grasp_width=float(d["handle_width"]),
                                       pull_axis=np.array(d["pull_axis"], dtype=float), travel=float(d["travel"]))
        return out

    def vision_classes(self) -> set:
        classes = self.data["sensors"]["classes"]
        if classes is not None:
            return set(classes)
        labels = {o["class"] for o in self.data["world"]["objects"]}
        labels |= {d["class"] for d in self.data["world"]["drawers"]}
        return labels


def _look_at(position: np.ndarray, target: np.ndarray) -> Pose:
    z = target - position
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(position, matrix_to_quat(np.column_stack([x, y, z])))


def parse_scenario(text: str, source: str = "<memory>") -> ScenarioConfig:
    if not text.strip():
        raise ParseError("empty scenario file", 1, 1)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return ScenarioConfig(normalise(data), source)


def load_scenario(path) -> ScenarioConfig:
    p = Path(path)
    if not p.exists() and (SCENARIO_DIR / p).exists():
        p = SCENARIO_DIR / p
    if not p.exists() and (SCENARIO_DIR / f"{p}.scn").exists():
        p = SCENARIO_DIR / f"{p}.scn"
    return parse_scenario(p.read_text(), str(p))


def shipped_scenarios() -> list:
    return sorted(SCENARIO_DIR.glob("*.scn"))
