"""Poses, unit quaternions (w, x, y, z) and homogeneous rigid transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_TOL = 1e-9


def cross(a, b) -> np.ndarray:
    """3-vector cross product; much cheaper than np.cross for single vectors."""
    a0, a1, a2 = a[0], a[1], a[2]
    b0, b1, b2 = b[0], b[1], b[2]
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # canonical hemisphere keeps logs and comparisons stable
    if q[0] < 0.0:
        q = -q
    return q


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0 or angle == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    s = math.sin(angle / 2.0) / n
    return np.array([math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rotvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = math.sqrt(float(v @ v))
    if angle < 1e-15:
        return np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]) / math.sqrt(1.0 + 0.25 * angle * angle)
    return quat_from_axis_angle(v, angle)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    vn = math.sqrt(q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    if vn < 1e-15:
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(vn, q[0])
    return q[1:] * (angle / vn)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(np.array(q))


def rotate(q: np.ndarray, v) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def tilt_angle(q: np.ndarray) -> float:
    """Angle between the frame's z axis and world up."""
    w, x, y, _ = q
    c = 1 - 2 * (x * x + y * y)
    return math.acos(max(-1.0, min(1.0, c)))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        if abs(math.sqrt(float(q @ q)) - 1.0) > QUAT_TOL:
            q = quat_normalize(q)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_xyz(cls, x: float, y: float, z: float, orientation=None) -> "Pose":
        return cls(np.array([x, y, z], dtype=float),
                   np.array([1.0, 0.0, 0.0, 0.0]) if orientation is None else orientation)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def transform_point(self, local) -> np.ndarray:
        return self.position + self.rotation @ np.asarray(local, dtype=float)

    def compose(self, other: "Pose") -> "Pose":
        """self * other, with `other` expressed in this frame."""
        return Pose(self.transform_point(other.position),
                    quat_normalize(quat_multiply(self.orientation, other.orientation)))

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.orientation)
        return Pose(-(quat_to_matrix(qc) @ self.position), qc)

    def translated(self, delta) -> "Pose":
        return Pose(self.position + np.asarray(delta, dtype=float), self.orientation)

    def as_matrix(self) -> np.ndarray:
        return make_transform(self.rotation, self.position)

    def to_dict(self) -> dict:
        return {"position": [float(v) for v in self.position],
                "orientation": [float(v) for v in self.orientation]}

    @classmethod
    def from_dict(cls, d) -> "Pose":
        if isinstance(d, (list, tuple)):
            return cls(np.asarray(d, dtype=float))
        return cls(np.asarray(d["position"], dtype=float),
                   np.asarray(d.get("orientation", [1.0, 0.0, 0.0, 0.0]), dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position)
                    and np.array_equal(self.orientation, other.orientation))

    def __hash__(self):
        return hash((tuple(self.position), tuple(self.orientation)))


def make_transform(rotation, translation) -> np.ndarray:
    t = np.eye(4)
    t[:3, :3] = rotation
    t[:3, 3] = translation
    return t


def invert_transform(t: np.ndarray) -> np.ndarray:
    r = t[:3, :3]
    out = np.eye(4)
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ t[:3, 3]
    return out


def apply_transform(t: np.ndarray, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return t[:3, :3] @ p + t[:3, 3]


def is_rigid(t: np.ndarray, tol: float = 1e-9) -> bool:
    t = np.asarray(t, dtype=float)
    if t.shape != (4, 4) or not np.allclose(t[3], [0, 0, 0, 1], atol=tol):
        return False
    r = t[:3, :3]
    return bool(np.allclose(r.T @ r, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) < tol)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    return quat_normalize(rng.normal(size=4))
