"""Ground-truth annotation of skill outcomes.

Skills only see sensors. When a skill ends, the runtime compares world state
before and after it to attach true quantities (poured mass, mechanism, ...)
and to evaluate the skill's postcondition predicate. None of this is fed back
to the skills.
"""

from __future__ import annotations

import math

import numpy as np

from ..geometry import quat_multiply, quat_conjugate, quat_to_rotvec, tilt_angle
from ..world import WorldState


def _content(world: WorldState, oid) -> float:
    c = world.containers.get(oid)
    return 0.0 if c is None else c.content_mass


def snapshot(world: WorldState, skill: str, params: dict) -> dict:
    snap = {"spill": world.spill, "t": world.sim_time}
    if skill in ("pour_to_mass", "scoop"):
        snap["receptacle"] = _content(world, params.get("receptacle"))
    return snap


def annotate(world: WorldState, skill: str, params: dict, snap: dict, status: str, measured: dict):
    """Returns (truth dict merged into measured, postcondition bool)."""
    truth: dict = {}
    post = True
    if skill in ("pour_to_mass", "scoop"):
        rec = params.get("receptacle")
        truth["poured_mass" if skill == "pour_to_mass" else "scooped_mass"] = _content(world, rec) - snap["receptacle"]
        truth["spilled_mass"] = world.spill - snap["spill"]
        if skill == "pour_to_mass":
            src = params.get("source")
            obj = world.objects.get(src)
            cont = world.containers.get(src)
            flowing = bool(obj is not None and cont is not None and cont.content_mass > 0
                           and tilt_angle(obj.pose.orientation) > cont.critical_tilt)
            post = not flowing
            truth["source_remaining"] = _content(world, src)
        else:
            post = truth["scooped_mass"] > 0.0 or float(params.get("target_mass", 0.0)) <= 0.0
    elif skill == "pick":
        post = world.held_object == params.get("object")
        truth["held"] = world.held_object
    elif skill == "place":
        oid = params.get("object")
        obj = world.objects.get(oid)
        if obj is not None:
            p = obj.pose.position
            rest = world.support_height(p[0], p[1])
            truth["rest_height"] = float(p[2])
            post = (world.held_object != oid) and abs(p[2] - rest) < 1e-3
        else:
            post = False
    elif skill == "open_drawer":
        dr = world.drawers.get(params.get("drawer"))
        if dr is not None:
            truth["open_fraction"] = dr.open_fraction
            truth["true_mechanism"] = dr.mechanism.value
            post = dr.open_fraction >= 0.9 and measured.get("mechanism") == dr.mechanism.value
        else:
            post = False
    elif skill == "handover":
        item = params.get("item")
        post = any(h.holding == item for h in world.hands.values())
    elif skill == "draw_path":
        post = world.held_object is not None
    elif skill in ("move_to", "move_relative"):
        goal = measured.get("goal")
        truth["final_position"] = world.ee_pose.position.tolist()
        post = goal is not None and float(np.linalg.norm(world.ee_pose.position - np.asarray(goal))) < 0.005
    elif skill == "rotate_gripper":
        goal = measured.get("goal_orientation")
        if goal is not None:
            d = quat_to_rotvec(quat_multiply(np.asarray(goal), quat_conjugate(world.ee_pose.orientation)))
            post = float(np.linalg.norm(d)) < math.radians(1.0)
        else:
            post = False
    return truth, bool(post)
