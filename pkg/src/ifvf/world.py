"""Ground-truth simulated kitchen.

The world is a stepped, single-threaded simulation. Everything the skills are
allowed to know reaches them through the sensor models; the world itself is
only read directly by the sensors, the safety monitor and the metric code.
"""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IFVFError
from .geometry import Pose, cross, quat_from_axis_angle, rotate, tilt_angle

GRAVITY = 9.81
UP = np.array([0.0, 0.0, 1.0])


class UnknownTarget(IFVFError):
    pass


class TargetHeld(IFVFError):
    pass


class ContentKind(str, enum.Enum):
    LIQUID = "liquid"
    GRANULAR = "granular"
    NONE = "none"


class Mechanism(str, enum.Enum):
    LINEAR_PULL = "linear_pull"
    HINGED_DOOR = "hinged_door"
    LOCKED = "locked"


@dataclass
class ObjectState:
    id: str
    class_label: str
    pose: Pose
    graspable: bool = True
    held_by_robot: bool = False
    mass: float = 0.0
    height: float = 0.1
    grasp_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    grasp_width: float = 0.04
    spout_offset: np.ndarray | None = None
    scoop_capacity: float = 0.0
    contact_stiffness: float = 3000.0
    inside: str | None = None
    similar_shape: tuple = ()
    held_by_hand: bool = False

    @property
    def grasp_point(self) -> np.ndarray:
        return self.pose.transform_point(self.grasp_offset)

    @property
    def center(self) -> np.ndarray:
        return self.pose.position + np.array([0.0, 0.0, self.height / 2.0])


@dataclass
class ContainerState:
    object_id: str
    capacity: float
    content_mass: float = 0.0
    content_kind: ContentKind = ContentKind.NONE
    k_flow: float = 0.05
    theta_full: float = 0.35
    theta_empty: float = 1.4
    rim_radius: float = 0.03

    def __post_init__(self):
        self.content_kind = ContentKind(self.content_kind)
        if self.content_mass <= 0.0:
            self.content_mass = 0.0
            self.content_kind = ContentKind.NONE

    @property
    def fill_fraction(self) -> float:
        if self.capacity <= 0.0:
            return 0.0
        return min(1.0, self.content_mass / self.capacity)

    @property
    def critical_tilt(self) -> float:
        return self.theta_empty - (self.theta_empty - self.theta_full) * self.fill_fraction

    def add(self, mass: float, kind: ContentKind) -> None:
        if mass <= 0.0:
            return
        if self.content_kind is ContentKind.NONE:
            self.content_kind = ContentKind(kind)
        self.content_mass += mass

    def remove(self, mass: float) -> None:
        self.content_mass -= mass
        if self.content_mass <= 1e-15:
            self.content_mass = 0.0
            self.content_kind = ContentKind.NONE


def transfer_contents(source: ContainerState, tilt: float, tilt_rate: float, dt: float):
    """Mass leaving `source` over `dt` at the given tilt.

    Quasi-static flow law: rate = k_flow * max(0, tilt - critical_tilt(fill)).
    `tilt_rate` is accepted for interface stability; the law ignores it.
    Returns ``(mass_out, updated_container)`` without mutating `source`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    excess = tilt - source.critical_tilt
    if source.content_mass <= 0.0 or excess <= 0.0:
        return 0.0, replace(source)
    mass_out = min(source.content_mass, source.k_flow * excess * dt)
    updated = replace(source)
    updated.remove(mass_out)
    return mass_out, updated


@dataclass
class DrawerState:
    object_id: str
    mechanism: Mechanism
    handle_pose: Pose
    open_fraction: float = 0.0
    class_label: str = "drawer"
    pull_axis: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    travel: float = 0.3
    hinge: np.ndarray | None = None
    max_angle: float = math.pi / 2
    friction: float = 4.0
    handle_width: float = 0.02
    grasp_stiffness: float = 800.0
    held: bool = False
    grip_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_handle: np.ndarray | None = None
    _sign: float = 1.0

    def __post_init__(self):
        self.mechanism = Mechanism(self.mechanism)
        self.pull_axis = np.asarray(self.pull_axis, dtype=float)
        self.pull_axis = self.pull_axis / np.linalg.norm(self.pull_axis)
        if self.base_handle is None:
            self.base_handle = self.handle_pose.position.copy()
        if self.mechanism is Mechanism.HINGED_DOOR:
            if self.hinge is None:
                raise ValueError(f"hinged drawer {self.object_id} needs a hinge position")
            self.hinge = np.asarray(self.hinge, dtype=float)
            r0 = self.base_handle - self.hinge
            tangent = cross(UP, r0)
            self._sign = 1.0 if tangent @ self.pull_axis >= 0 else -1.0

    @property
    def q_max(self) -> float:
        if self.mechanism is Mechanism.HINGED_DOOR:
            return self.max_angle
        if self.mechanism is Mechanism.LINEAR_PULL:
            return self.travel
        return 0.0

    @property
    def q(self) -> float:
        return self.open_fraction * self.q_max

    def handle_at(self, q: float) -> np.ndarray:
        if self.mechanism is Mechanism.HINGED_DOOR:
            r0 = self.base_handle - self.hinge
            return self.hinge + rotate(quat_from_axis_angle(UP, self._sign * q), r0)
        if self.mechanism is Mechanism.LINEAR_PULL:
            return self.base_handle + self.pull_axis * q
        return self.base_handle.copy()

    def handle_tangent(self, q: float) -> np.ndarray:
        if self.mechanism is Mechanism.HINGED_DOOR:
            t = self._sign * cross(UP, self.handle_at(q) - self.hinge)
            return t / np.linalg.norm(t)
        return self.pull_axis.copy()

    def spring_force(self, grip_point: np.ndarray, q: float | None = None) -> np.ndarray:
        """Force the gripper applies to the handle through the grasp compliance."""
        h = self.handle_at(self.q if q is None else q)
        return self.grasp_stiffness * (grip_point - self.grip_offset - h)

    def settle(self, grip_point: np.ndarray) -> None:
        """Quasi-static update of the mechanism under the gripper's pull."""
        if self.mechanism is Mechanism.LOCKED:
            return
        qmax = self.q_max

        def gen_force(q):
            return float(self.spring_force(grip_point, q) @ self.handle_tangent(q))

        q0 = self.q
        g0 = gen_force(q0)
        if g0 > self.friction and q0 < qmax:
            lo, hi, target = q0, qmax, self.friction
        elif g0 < -self.friction and q0 > 0.0:
            lo, hi, target = 0.0, q0, -self.friction
        else:
            return
        if target > 0 and gen_force(hi) >= target:
            q_new = hi
        elif target < 0 and gen_force(lo) <= target:
            q_new = lo
        else:
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if gen_force(mid) > target:
                    lo = mid
                else:
                    hi = mid
            q_new = 0.5 * (lo + hi)
        self.open_fraction = min(1.0, max(0.0, q_new / qmax))
        self.handle_pose = Pose(self.handle_at(self.q), self.handle_pose.orientation)


@dataclass
class Surface:
    id: str
    center: np.ndarray
    size: np.ndarray
    height: float
    slope: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def height_at(self, x: float, y: float) -> float | None:
        dx = x - self.center[0]
        dy = y - self.center[1]
        if abs(dx) > self.size[0] / 2 or abs(dy) > self.size[1] / 2:
            return None
        return self.height + self.slope[0] * dx + self.slope[1] * dy


@dataclass
class HandState:
    object_id: str
    pull_force: float = 4.0
    pull_direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    grasp_radius: float = 0.03
    ramp_rate: float = 6.0
    gripping: str | None = None
    holding: str | None = None
    current_pull: float = 0.0


@dataclass(frozen=True)
class DisturbanceEvent:
    at_time: float
    target_id: str
    new_pose: Pose
    relative: bool = False  # new_pose.position is an offset from wherever the target is

    def __post_init__(self):
        if self.at_time < 0:
            raise ValueError("at_time must be non-negative")

    def resolve(self, current: Pose) -> "DisturbanceEvent":
        if not self.relative:
            return self
        return DisturbanceEvent(self.at_time, self.target_id,
                                Pose(current.position + self.new_pose.position, current.orientation))


@dataclass
class WorldState:
    objects: dict = field(default_factory=dict)
    containers: dict = field(default_factory=dict)
    drawers: dict = field(default_factory=dict)
    surfaces: list = field(default_factory=list)
    hands: dict = field(default_factory=dict)
    sim_time: float = 0.0
    table_height: float = 0.0
    spill: float = 0.0
    ee_pose: Pose = field(default_factory=Pose)
    ee_angular_speed: float = 0.0
    held_object: str | None = None
    held_handle: str | None = None
    schedule: list = field(default_factory=list)
    events: list = field(default_factory=list)
    _hold_offset: Pose | None = None
    _ee_dirty: bool = True
    _inside_base: dict = field(default_factory=dict)
    _tick: int = 0
    _flow_cache: tuple | None = None

    def __post_init__(self):
        self.schedule = sorted(self.schedule, key=lambda e: e.at_time)
        for ev in self.schedule:
            if ev.target_id not in self.objects:
                raise UnknownTarget(ev.target_id)
        for obj in self.objects.values():
            if obj.inside is not None and obj.id not in self._inside_base:
                self._inside_base[obj.id] = obj.pose.position.copy()

    # ---------------------------------------------------------------- queries
    def total_content_mass(self) -> float:
        return sum(c.content_mass for c in self.containers.values()) + self.spill

    def payload_mass(self) -> float:
        if self.held_object is None:
            return 0.0
        m = self.objects[self.held_object].mass
        c = self.containers.get(self.held_object)
        return m + (c.content_mass if c else 0.0)

    def support_height(self, x: float, y: float) -> float:
        h = self.table_height
        for s in self.surfaces:
            hs = s.height_at(x, y)
            if hs is not None and hs > h:
                h = hs
        return h

    def is_visible(self, object_id: str) -> bool:
        obj = self.objects[object_id]
        if obj.inside is None:
            return True
        return self.drawers[obj.inside].open_fraction >= 0.5

    def pour_point(self, object_id: str) -> np.ndarray | None:
        obj = self.objects[object_id]
        if obj.spout_offset is None:
            return None
        return obj.pose.transform_point(obj.spout_offset)

    def receptacle_under(self, point: np.ndarray, exclude: str) -> str | None:
        best, best_d = None, None
        for cid, c in self.containers.items():
            if cid == exclude:
                continue
            obj = self.objects[cid]
            rim = obj.pose.position[2] + obj.height
            if point[2] < rim - 1e-9:
                continue
            d = math.hypot(point[0] - obj.pose.position[0], point[1] - obj.pose.position[1])
            if d <= c.rim_radius and (best_d is None or d < best_d):
                best, best_d = cid, d
        return best

    def grasp_candidate(self, tcp: np.ndarray, tolerance: float = 0.025):
        """Nearest graspable thing whose grasp point lies within `tolerance` of the TCP.

        Returns ``(kind, id, width)`` with kind in {"object", "handle"}, or None.
        """
        best = None
        best_d = tolerance
        for obj in self.objects.values():
            if not obj.graspable or obj.held_by_robot or obj.held_by_hand:
                continue
            if obj.inside is not None and not self.is_visible(obj.id):
                continue
            d = float(np.linalg.norm(obj.grasp_point - tcp))
            if d <= best_d:
                best, best_d = ("object", obj.id, obj.grasp_width), d
        for dr in self.drawers.values():
            d = float(np.linalg.norm(dr.handle_pose.position - tcp))
            if d <= best_d:
                best, best_d = ("handle", dr.object_id, dr.handle_width), d
        return best

    def interaction(self):
        """External wrench acting on gripper + payload, as (points, forces) in world frame."""
        points, forces = [], []
        tcp = self.ee_pose.position
        if self.held_object is not None:
            obj = self.objects[self.held_object]
            base = obj.pose.position
            pen = self.support_height(base[0], base[1]) - base[2]
            if pen > 0:
                points.append(base.copy())
                forces.append(UP * obj.contact_stiffness * pen)
            for hand in self.hands.values():
                if hand.gripping == obj.id and hand.current_pull > 0:
                    points.append(obj.pose.position.copy())
                    forces.append(hand.pull_direction * hand.current_pull)
        if self.held_handle is not None:
            dr = self.drawers[self.held_handle]
            points.append(tcp.copy())
            forces.append(-dr.spring_force(tcp))
        return points, forces

    def interaction_force(self) -> np.ndarray:
        _, forces = self.interaction()
        if not forces:
            return np.zeros(3)
        return np.sum(forces, axis=0)

    # ------------------------------------------------------------- mutations
    def set_ee(self, pose: Pose, angular_speed: float = 0.0) -> None:
        self.ee_pose = pose
        self.ee_angular_speed = angular_speed
        self._ee_dirty = True
        self._follow()

    def _follow(self) -> None:
        if not self._ee_dirty:
            return
        self._ee_dirty = False
        if self.held_object is not None and self._hold_offset is not None:
            self.objects[self.held_object].pose = self.ee_pose.compose(self._hold_offset)
            self._scoop_check()
        if self.held_handle is not None:
            dr = self.drawers[self.held_handle]
            dr.settle(self.ee_pose.position)
            self._move_contents(dr)
        for hand in self.hands.values():
            self._hand_contact(hand)

    def _move_contents(self, dr: DrawerState) -> None:
        if dr.mechanism is not Mechanism.LINEAR_PULL:
            return
        for oid, base in self._inside_base.items():
            obj = self.objects[oid]
            if obj.inside == dr.object_id:
                obj.pose = Pose(base + dr.pull_axis * dr.q, obj.pose.orientation)

    def grasp(self, kind: str, target: str) -> None:
        if kind == "object":
            if self.held_object is not None:
                raise TargetHeld(f"already holding {self.held_object}")
            obj = self.objects[target]
            obj.held_by_robot = True
            obj.inside = None
            self._inside_base.pop(target, None)
            self.held_object = target
            # the grasp snaps the object's grasp point onto the TCP
            # but never pushes it into the surface it stands on
            pos = obj.pose.position + (self.ee_pose.position - obj.grasp_point)
            pos[2] = max(pos[2], self.support_height(pos[0], pos[1]))
            snapped = Pose(pos, obj.pose.orientation)
            obj.pose = snapped
            self._hold_offset = self.ee_pose.inverse().compose(snapped)
        else:
            dr = self.drawers[target]
            self.held_handle = target
            dr.held = True
            # closing fingers centre on the handle, so the grasp itself is unloaded
            dr.grip_offset = self.ee_pose.position - dr.handle_pose.position

    def release(self) -> str | None:
        released = None
        if self.held_object is not None:
            obj = self.objects[self.held_object]
            obj.held_by_robot = False
            released = obj.id
            taken = False
            for hand in self.hands.values():
                if hand.gripping == obj.id:
                    hand.holding = obj.id
                    obj.held_by_hand = True
                    taken = True
            if not taken:
                # released objects come to rest on the support below them
                base = obj.pose.position
                h = self.support_height(base[0], base[1])
                obj.pose = Pose(np.array([base[0], base[1], h]), _yaw_only(obj.pose.orientation))
            self.held_object = None
            self._hold_offset = None
        if self.held_handle is not None:
            self.drawers[self.held_handle].held = False
            released = released or self.held_handle
            self.held_handle = None
        return released

    def _scoop_check(self) -> None:
        obj = self.objects[self.held_object]
        if obj.scoop_capacity <= 0 or obj.spout_offset is None:
            return
        spoon = self.containers.get(obj.id)
        if spoon is None or spoon.content_mass > 0.5 * obj.scoop_capacity:
            return
        tip = obj.pose.transform_point(obj.spout_offset)
        for cid, c in self.containers.items():
            if cid == obj.id or c.content_kind is not ContentKind.GRANULAR:
                continue
            src = self.objects[cid]
            d = math.hypot(tip[0] - src.pose.position[0], tip[1] - src.pose.position[1])
            rim = src.pose.position[2] + src.height
            if d <= c.rim_radius and tip[2] <= rim - 0.03 and tip[2] >= src.pose.position[2]:
                amount = min(obj.scoop_capacity - spoon.content_mass, c.content_mass)
                if amount > 0:
                    kind = c.content_kind
                    c.remove(amount)
                    spoon.add(amount, kind)
                return

    def _hand_contact(self, hand: HandState) -> None:
        if hand.gripping is not None or hand.holding is not None or self.held_object is None:
            return
        item = self.objects[self.held_object]
        hpos = self.objects[hand.object_id].pose.position
        if np.linalg.norm(item.pose.position - hpos) <= hand.grasp_radius:
            hand.gripping = item.id

    def apply_disturbance_inplace(self, event: DisturbanceEvent) -> None:
        obj = self.objects.get(event.target_id)
        if obj is None:
            raise UnknownTarget(event.target_id)
        if obj.held_by_robot:
            raise TargetHeld(event.target_id)
        obj.pose = event.new_pose
        self._flow_cache = None
        if obj.inside is not None:
            obj.inside = None
            self._inside_base.pop(obj.id, None)
        for hand in self.hands.values():
            if hand.object_id == obj.id and hand.holding is not None:
                held = self.objects[hand.holding]
                held.pose = Pose(event.new_pose.position.copy(), held.pose.orientation)
        self._ee_dirty = True

    def step(self, dt: float) -> None:
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.sim_time += dt
        self._tick += 1
        while self.schedule and self.schedule[0].at_time <= self.sim_time + 1e-12:
            ev = self.schedule.pop(0)
            if ev.target_id in self.objects:
                ev = ev.resolve(self.objects[ev.target_id].pose)
            try:
                self.apply_disturbance_inplace(ev)
                self.events.append(("disturbance", ev))
            except TargetHeld:
                self.events.append(("disturbance_rejected", ev))
        self._follow()
        if self.held_object is not None:
            self._flow(dt)
        for hand in self.hands.values():
            if hand.gripping is not None and hand.holding is None and hand.current_pull < hand.pull_force:
                hand.current_pull = min(hand.pull_force, hand.current_pull + hand.ramp_rate * dt)
            if hand.holding is not None:
                held = self.objects[hand.holding]
                hpos = self.objects[hand.object_id].pose.position
                if not np.array_equal(held.pose.position, hpos):
                    held.pose = Pose(hpos.copy(), held.pose.orientation)

    def _flow(self, dt: float) -> None:
        src = self.containers.get(self.held_object)
        if src is None or src.content_mass <= 0.0:
            return
        obj = self.objects[self.held_object]
        if obj.spout_offset is None:
            return
        cache = self._flow_cache
        if cache is None or cache[0] is not obj.pose:
            # poses only change at control ticks; reuse the geometry in between
            cache = self._flow_cache = (obj.pose, tilt_angle(obj.pose.orientation), None, False)
        tilt = cache[1]
        if tilt <= src.critical_tilt:
            return
        if not cache[3]:
            point = obj.pose.transform_point(obj.spout_offset)
            cache = self._flow_cache = (obj.pose, tilt, self.receptacle_under(point, exclude=obj.id), True)
        dest = cache[2]
        excess = tilt - src.critical_tilt
        mass_out = min(src.content_mass, src.k_flow * excess * dt)
        kind = src.content_kind
        src.remove(mass_out)
        if dest is None:
            self.spill += mass_out
        else:
            self.containers[dest].add(mass_out, kind)


def _yaw_only(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return quat_from_axis_angle(UP, yaw)


def step_world(state: WorldState, dt: float) -> WorldState:
    """Pure step: returns a new state advanced by `dt`."""
    new = copy.deepcopy(state)
    new.step(dt)
    return new


def apply_disturbance(state: WorldState, event: DisturbanceEvent) -> WorldState:
    new = copy.deepcopy(state)
    new.apply_disturbance_inplace(event)
    return new
