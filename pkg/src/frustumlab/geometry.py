"""Coordinate frames, rigid transforms, unit quaternions, and the
transmission-model pinhole projection used by every other module.

Conventions
-----------
- millimeters everywhere; degrees at API boundaries, radians internally
- X-ray camera frame: origin at the source, +z along the source-to-detector
  axis, detector plane at z = f
- a ``RigidTransform`` maps points expressed in ``from_frame`` into
  ``to_frame``; composition is checked against the frame labels
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import BehindSource, FrameMismatch

_ORTHO_TOL = 1e-9


class FrameId(str, Enum):
    """Named coordinate frames of the operating-room rig."""

    OR = "OR"  # shared room anchor
    X = "X"    # X-ray source
    H = "H"    # visual tracker on the gantry
    IR = "IR"  # external infrared tracker (offline calibration only)
    S = "S"    # surgeon headset
    I = "I"    # interactive image plane
    D = "D"    # detector
    P = "P"    # phantom
    T = "T"    # virtual tool


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("zero vector has no direction")
    return v / n


def _skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _nearest_rotation(r: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3)."""
    u, _, vt = np.linalg.svd(r)
    return u @ vt


# ---------------------------------------------------------------------------
# Unit quaternions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UnitQuaternion:
    """Unit quaternion (scalar s, vector v), canonicalized so s >= 0.

    q and -q encode the same rotation; the constructor flips the sign so
    quaternion equality is testable.
    """

    s: float
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(3)
        s = float(self.s)
        norm2 = s * s + float(v @ v)
        if abs(norm2 - 1.0) > 1e-12:
            raise ValueError(f"quaternion norm^2 = {norm2!r}, expected 1 within 1e-12")
        if s < 0.0:
            s, v = -s, -v
        elif s == 0.0:
            nz = v[np.nonzero(v)[0]]
            if nz.size and nz[0] < 0.0:
                v = -v
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.v[0], self.v[1], self.v[2]])

    @property
    def angle_deg(self) -> float:
        """Rotation angle in [0, 180] degrees."""
        return math.degrees(2.0 * math.atan2(float(np.linalg.norm(self.v)), self.s))

    @property
    def axis(self) -> np.ndarray:
        """Rotation axis; (0, 0, 1) by convention for the identity."""
        n = float(np.linalg.norm(self.v))
        if n < 1e-15:
            return np.array([0.0, 0.0, 1.0])
        return self.v / n


def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    s = a.s * b.s - float(a.v @ b.v)
    v = a.s * b.v + b.s * a.v + np.cross(a.v, b.v)
    arr = np.array([s, v[0], v[1], v[2]])
    arr /= np.linalg.norm(arr)
    return UnitQuaternion(arr[0], arr[1:])


def quat_from_axis_angle(axis, angle_deg: float) -> UnitQuaternion:
    half = math.radians(angle_deg) / 2.0
    return UnitQuaternion(math.cos(half), math.sin(half) * _unit(axis))


def quat_from_rotation(r) -> UnitQuaternion:
    """Rotation matrix to quaternion (Shepperd's branch selection)."""
    r = np.asarray(r, dtype=float)
    t = float(np.trace(r))
    if t > 0.0:
        w = math.sqrt(1.0 + t) / 2.0
        s4 = 4.0 * w
        q = np.array(
            [w, (r[2, 1] - r[1, 2]) / s4, (r[0, 2] - r[2, 0]) / s4, (r[1, 0] - r[0, 1]) / s4]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        x = math.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) / 2.0
        s4 = 4.0 * x
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s4
        q[1 + i] = x
        q[1 + j] = (r[j, i] + r[i, j]) / s4
        q[1 + k] = (r[k, i] + r[i, k]) / s4
    q /= np.linalg.norm(q)
    return UnitQuaternion(q[0], q[1:])


def rotation_from_quat(q: UnitQuaternion) -> np.ndarray:
    s, (x, y, z) = q.s, q.v
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - s * z), 2 * (x * z + s * y)],
            [2 * (x * y + s * z), 1 - 2 * (x * x + z * z), 2 * (y * z - s * x)],
            [2 * (x * z - s * y), 2 * (y * z + s * x), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# Rotation-matrix helpers
# ---------------------------------------------------------------------------


def rotation_from_rotvec(w) -> np.ndarray:
    """Matrix exponential of a rotation vector (radians)."""
    w = np.asarray(w, dtype=float).reshape(3)
    angle = float(np.linalg.norm(w))
    k = _skew(w)
    if angle < 1e-12:
        return np.eye(3) + k + 0.5 * (k @ k)
    k = k / angle
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_about(axis, angle_deg: float) -> np.ndarray:
    """Rotation matrix about an arbitrary axis, angle in degrees."""
    return rotation_from_rotvec(_unit(axis) * math.radians(angle_deg))


def rotation_angle_deg(r) -> float:
    """Rotation angle of a matrix in [0, 180] degrees."""
    return quat_from_rotation(r).angle_deg


def rotation_axis(r) -> np.ndarray:
    return quat_from_rotation(r).axis


def relative_rotation_angle_deg(r1, r2) -> float:
    """Angle of the rotation taking r1 to r2."""
    return rotation_angle_deg(np.asarray(r1).T @ np.asarray(r2))


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) map taking points in ``from_frame`` to ``to_frame``.

    ``rotation`` is a 3x3 orthonormal matrix, ``translation`` is in mm.
    """

    rotation: np.ndarray
    translation: np.ndarray
    from_frame: FrameId
    to_frame: FrameId

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("rotation matrix is not orthonormal within 1e-9")
        if abs(float(np.linalg.det(r)) - 1.0) > 1e-9:
            raise ValueError("rotation matrix must have det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "from_frame", FrameId(self.from_frame))
        object.__setattr__(self, "to_frame", FrameId(self.to_frame))

    def apply(self, x) -> np.ndarray:
        """Map a point (or an (N, 3) batch) into ``to_frame``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.rotation @ x + self.translation
        return x @ self.rotation.T + self.translation

    @property
    def quaternion(self) -> UnitQuaternion:
        return quat_from_rotation(self.rotation)

    @classmethod
    def identity(cls, from_frame: FrameId, to_frame: FrameId | None = None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), from_frame, to_frame or from_frame)

    @classmethod
    def from_quat(cls, q: UnitQuaternion, t, from_frame: FrameId, to_frame: FrameId) -> "RigidTransform":
        return cls(rotation_from_quat(q), t, from_frame, to_frame)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: maps b.from_frame into a.to_frame.

    Re-orthonormalizes the rotation product so arbitrarily long chains do
    not accumulate drift.
    """
    if a.from_frame != b.to_frame:
        raise FrameMismatch(
            f"cannot chain {b.from_frame.value}->{b.to_frame.value} "
            f"into {a.from_frame.value}->{a.to_frame.value}",
            expected=a.from_frame.value,
            got=b.to_frame.value,
        )
    r = _nearest_rotation(a.rotation @ b.rotation)
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(r, t, b.from_frame, a.to_frame)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation), t.to_frame, t.from_frame)


# ---------------------------------------------------------------------------
# Camera model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    """Ideal transmission pinhole: f is the source-to-detector distance (mm)."""

    f: float
    pixel_pitch: float
    principal_point: np.ndarray  # (2,) pixels
    image_size: np.ndarray       # (2,) pixels, (width, height)

    def __post_init__(self):
        pp = np.asarray(self.principal_point, dtype=float).reshape(2)
        size = np.asarray(self.image_size, dtype=float).reshape(2)
        if not self.f > 0.0:
            raise ValueError("focal length must be positive")
        if not self.pixel_pitch > 0.0:
            raise ValueError("pixel pitch must be positive")
        if np.any(pp < 0.0) or np.any(pp > size):
            raise ValueError("principal point outside image bounds")
        object.__setattr__(self, "f", float(self.f))
        object.__setattr__(self, "pixel_pitch", float(self.pixel_pitch))
        object.__setattr__(self, "principal_point", pp)
        object.__setattr__(self, "image_size", size)

    @property
    def focal_px(self) -> float:
        return self.f / self.pixel_pitch

    def matrix(self) -> np.ndarray:
        fp = self.focal_px
        cx, cy = self.principal_point
        return np.array([[fp, 0.0, cx], [0.0, fp, cy], [0.0, 0.0, 1.0]])

    def contains_pixel(self, p) -> bool:
        p = np.asarray(p, dtype=float).reshape(2)
        return bool(np.all(p >= 0.0) and np.all(p <= self.image_size))


@dataclass(frozen=True, eq=False)
class Ray:
    """Half-line from ``origin`` along the unit vector ``direction`` (OR frame)."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "direction", _unit(self.direction))

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction

    def distance_to_point(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.origin
        return float(np.linalg.norm(d - (d @ self.direction) * self.direction))


def project(k: CameraIntrinsics, pose: RigidTransform, x) -> np.ndarray:
    """Project an OR-frame point to detector pixels.

    ``pose`` must map OR -> X. Transmission model: any point with positive
    depth along the source-to-detector axis projects, regardless of which
    side of the detector it lies on.

    Raises BehindSource when the depth is <= 0.
    """
    if pose.from_frame != FrameId.OR or pose.to_frame != FrameId.X:
        raise FrameMismatch(
            f"projection pose must map OR->X, got "
            f"{pose.from_frame.value}->{pose.to_frame.value}"
        )
    cam = pose.apply(x)
    depth = float(cam[2])
    if depth <= 0.0:
        raise BehindSource(f"point depth {depth:.6g} mm is behind the X-ray source")
    fp = k.focal_px
    return np.array(
        [
            fp * cam[0] / depth + k.principal_point[0],
            fp * cam[1] / depth + k.principal_point[1],
        ]
    )
