"""Skill library: specs plus generator implementations, addressable by name."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .base import (
    ParamType,
    SafetyAbort,
    SkillContext,
    SkillError,
    SkillOutcome,
    SkillSpec,
    SkillStatus,
)
from .draw import SurfaceLost, draw_path
from .drawer import HandleNotFound, MechanismUndetermined, open_drawer
from .manipulation import GraspFailed, NoContact, pick, place
from .handover import HandLost, handover
from .motion import move_relative, move_to_pose, rotate_gripper
from .pour import ReceptacleLost, SourceEmpty, pour_to_mass
from .scoop import scoop


class UnknownSkill(SkillError):
    pass


class InvalidParameters(SkillError):
    pass


@dataclass(frozen=True)
class RegisteredSkill:
    spec: SkillSpec
    fn: Callable
    defaults: dict


S, STR, P, REF, PTS = ParamType.SCALAR, ParamType.STRING, ParamType.POSE, ParamType.OBJECT_REF, ParamType.POINTS


def _entry(name, params, required, pre, channels, fn, defaults=None):
    return RegisteredSkill(SkillSpec(name, params, tuple(required), tuple(pre), frozenset(channels)), fn, defaults or {})


_ENTRIES = [
    _entry("pour_to_mass", {"target_mass": S, "source": REF, "receptacle": REF, "pitch_rate": S},
           ["target_mass", "source", "receptacle"],
           [{"held": "source"}, {"detected": "receptacle"}], {"force", "vision"}, pour_to_mass,
           {"pitch_rate": math.radians(4.0)}),
    _entry("scoop", {"target_mass": S, "source": REF, "receptacle": REF}, ["target_mass", "source", "receptacle"],
           [{"held": "spoon"}, {"detected": "source"}, {"detected": "receptacle"}], {"force", "vision"}, scoop),
    _entry("handover", {"item": REF}, ["item"], [{"held": "item"}, {"class": "hand"}], {"force", "vision"}, handover),
    _entry("draw_path", {"waypoints": PTS, "pen_force": S}, ["waypoints"], [{"held": "pen"}], {"force"}, draw_path,
           {"pen_force": 1.5}),
    _entry("pick", {"object": REF}, ["object"], [{"detected": "object"}, {"gripper": "free"}],
           {"force", "vision"}, pick),
    _entry("place", {"object": REF, "target_pose": P}, ["object", "target_pose"], [{"held": "object"}],
           {"force"}, place),
    _entry("open_drawer", {"drawer": REF}, ["drawer"], [{"detected": "drawer"}, {"gripper": "free"}],
           {"force", "vision"}, open_drawer),
    _entry("move_to", {"position": P, "speed": S}, ["position"], [], set(), move_to_pose, {"speed": 0.05}),
    _entry("move_relative", {"offset": P, "speed": S}, ["offset"], [], set(), move_relative, {"speed": 0.05}),
    _entry("rotate_gripper", {"angle": S, "rate": S}, ["angle"], [], set(), rotate_gripper,
           {"rate": math.radians(30.0)}),
]

REGISTRY = {e.spec.name: e for e in _ENTRIES}


def skill_names() -> list:
    return list(REGISTRY)


def _array(value, name: str) -> np.ndarray:
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise InvalidParameters(f"{name} must be numeric") from None


def _coerce(ptype: ParamType, value, name: str):
    if ptype is ParamType.SCALAR:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise InvalidParameters(f"{name} must be a finite number")
        return float(value)
    if ptype in (ParamType.STRING, ParamType.OBJECT_REF):
        if not isinstance(value, str) or not value:
            raise InvalidParameters(f"{name} must be a non-empty string")
        return value
    if ptype is ParamType.POSE:
        arr = _array(value, name).reshape(-1)
        if arr.size not in (3, 7) or not np.all(np.isfinite(arr)):
            raise InvalidParameters(f"{name} must be a position (3) or pose (7) vector")
        return [float(v) for v in arr]
    if ptype is ParamType.POINTS:
        arr = _array(value, name)
        if arr.size == 0:
            return []
        if arr.ndim != 2 or arr.shape[1] not in (2, 3) or not np.all(np.isfinite(arr)):
            raise InvalidParameters(f"{name} must be a list of 2- or 3-vectors")
        return arr.tolist()
    raise InvalidParameters(f"unsupported parameter type {ptype}")


def validate_params(spec: SkillSpec, params: dict) -> dict:
    """Check a parameter map against a spec; returns defaults merged with coerced values."""
    params = dict(params or {})
    unknown = set(params) - set(spec.parameters)
    if unknown:
        raise InvalidParameters(f"{spec.name}: unknown parameters {sorted(unknown)}")
    missing = [k for k in spec.required if k not in params]
    if missing:
        raise InvalidParameters(f"{spec.name}: missing parameters {missing}")
    entry = REGISTRY.get(spec.name)
    out = dict(entry.defaults) if entry is not None else {}
    for k, v in params.items():
        out[k] = _coerce(spec.parameters[k], v, k)
    return out


def get_skill(name: str) -> RegisteredSkill:
    if name not in REGISTRY:
        raise UnknownSkill(f"no skill named {name!r}")
    return REGISTRY[name]


__all__ = [
    "REGISTRY", "RegisteredSkill", "SkillContext", "SkillSpec", "SkillOutcome", "SkillStatus", "SkillError",
    "SafetyAbort", "UnknownSkill", "InvalidParameters", "ReceptacleLost", "SourceEmpty", "GraspFailed",
    "NoContact", "HandleNotFound", "MechanismUndetermined", "HandLost", "SurfaceLost",
    "get_skill", "skill_names", "validate_params",
]
