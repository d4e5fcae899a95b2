"""Clinical coordinate constructions and outcome metrics: anterior pelvic
plane, cup abduction/anteversion in the radiographic convention, safe-zone
check, and the K-wire-in-tube error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CollinearLandmarks, DegenerateProjection, InvalidParams, NoCrossing
from .geometry import _unit
from .planning import Trajectory3D

DEFAULT_WIRE_RADIUS = 1.4  # mm, half of the 2.8 mm K-wire
MIN_LANDMARK_TRIANGLE_AREA = 1.0  # mm^2


@dataclass(frozen=True, eq=False)
class APPFrame:
    """Anterior pelvic plane frame: origin at the ASIS midpoint, lateral
    x, anterior y, longitudinal z (right-handed orthonormal triad)."""

    origin: np.ndarray
    lateral: np.ndarray       # x
    anterior: np.ndarray      # y, normal to the landmark plane
    longitudinal: np.ndarray  # z

    def __post_init__(self):
        for name in ("origin", "lateral", "anterior", "longitudinal"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        basis = np.column_stack([self.lateral, self.anterior, self.longitudinal])
        if not np.allclose(basis.T @ basis, np.eye(3), atol=1e-9):
            raise InvalidParams("APP axes must be orthonormal")
        if np.linalg.det(basis) < 0.0:
            raise InvalidParams("APP axes must form a right-handed triad")


@dataclass(frozen=True)
class CupOrientation:
    """Acetabular cup angles (degrees, radiographic convention)."""

    abduction: float
    anteversion: float

    def __post_init__(self):
        if not (0.0 <= self.abduction <= 90.0):
            raise InvalidParams(f"abduction {self.abduction} outside [0, 90] deg")
        if not (-90.0 <= self.anteversion <= 90.0):
            raise InvalidParams(f"anteversion {self.anteversion} outside [-90, 90] deg")


@dataclass(frozen=True)
class SafeZone:
    """Closed intervals for acceptable cup angles."""

    abduction_min: float = 30.0
    abduction_max: float = 50.0
    anteversion_min: float = 5.0
    anteversion_max: float = 25.0


DEFAULT_SAFE_ZONE = SafeZone()


@dataclass(frozen=True, eq=False)
class TubePhantomSpec:
    """Straight tube surrogate for a bone corridor (end-point axis, mm)."""

    axis_start: np.ndarray
    axis_end: np.ndarray
    diameter: float

    def __post_init__(self):
        start = np.asarray(self.axis_start, dtype=float).reshape(3)
        end = np.asarray(self.axis_end, dtype=float).reshape(3)
        if self.diameter <= 0.0:
            raise InvalidParams("tube diameter must be positive")
        if np.linalg.norm(end - start) == 0.0:
            raise InvalidParams("tube axis must have positive length")
        object.__setattr__(self, "axis_start", start)
        object.__setattr__(self, "axis_end", end)

    @property
    def axis_direction(self) -> np.ndarray:
        return _unit(self.axis_end - self.axis_start)


def app_from_landmarks(asis_left, asis_right, pubis) -> APPFrame:
    """Build the APP frame from the two ASIS landmarks and the pubis.

    x = left-to-right ASIS direction; z = component of (ASIS midpoint -
    pubis) orthogonal to x; y = z cross x (anterior plane normal).
    """
    left = np.asarray(asis_left, dtype=float).reshape(3)
    right = np.asarray(asis_right, dtype=float).reshape(3)
    pub = np.asarray(pubis, dtype=float).reshape(3)
    area = 0.5 * float(np.linalg.norm(np.cross(right - left, pub - left)))
    if area <= MIN_LANDMARK_TRIANGLE_AREA:
        raise CollinearLandmarks(
            f"landmark triangle area {area:.3g} mm^2 too small to define a plane"
        )
    lateral = _unit(right - left)
    mid = 0.5 * (left + right)
    up = mid - pub
    longitudinal = _unit(up - float(up @ lateral) * lateral)
    anterior = np.cross(longitudinal, lateral)
    return APPFrame(mid, lateral, anterior, longitudinal)


def cup_angles(cup_axis, app: APPFrame) -> CupOrientation:
    """Radiographic cup angles of a unit axis with respect to the APP.

    anteversion = asin(axis . anterior); abduction = in-plane angle of the
    axis projection from the longitudinal direction. The axis is
    canonicalized to point laterally (x-component >= 0) first.
    """
    axis = np.asarray(cup_axis, dtype=float).reshape(3)
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > 1e-6:
        raise InvalidParams(f"cup axis must be unit length, |axis| = {norm!r}")
    axis = axis / norm
    if float(axis @ app.lateral) < 0.0:
        axis = -axis
    ay = float(axis @ app.anterior)
    if abs(ay) > 1.0 - 1e-9:
        raise DegenerateProjection("cup axis is normal to the APP; abduction is undefined")
    anteversion = math.degrees(math.asin(max(-1.0, min(1.0, ay))))
    abduction = math.degrees(math.atan2(float(axis @ app.lateral), float(axis @ app.longitudinal)))
    return CupOrientation(abduction, anteversion)


def axis_from_angles(abduction: float, anteversion: float, app: APPFrame) -> np.ndarray:
    """Unit cup axis realizing the given angles; exact inverse of cup_angles."""
    abd = math.radians(abduction)
    ant = math.radians(anteversion)
    return (
        math.sin(abd) * math.cos(ant) * app.lateral
        + math.sin(ant) * app.anterior
        + math.cos(abd) * math.cos(ant) * app.longitudinal
    )


def in_safe_zone(cup: CupOrientation, zone: SafeZone = DEFAULT_SAFE_ZONE) -> bool:
    """Closed-interval membership in the configured safe zone."""
    return (
        zone.abduction_min <= cup.abduction <= zone.abduction_max
        and zone.anteversion_min <= cup.anteversion <= zone.anteversion_max
    )


@dataclass(frozen=True)
class KwireError:
    """Wire-to-tube-center distances at the tube end planes (mm)."""

    entry_dist: float
    exit_dist: float
    mean: float
    breached: bool


def kwire_error(
    wire: Trajectory3D, tube: TubePhantomSpec, wire_radius: float = DEFAULT_WIRE_RADIUS
) -> KwireError:
    """Distance of the wire line from the tube axis endpoints, measured in
    the planes normal to the tube axis at each end.

    ``breached`` flags either distance exceeding diameter/2 - wire_radius.
    Raises NoCrossing when the wire runs within 1 degree of the end planes.
    """
    ahat = tube.axis_direction
    cos_angle = float(wire.direction @ ahat)
    if abs(cos_angle) < math.cos(math.radians(89.0)):
        raise NoCrossing(
            "wire is near-perpendicular to the tube axis and does not cross the end planes"
        )
    dists = []
    for end in (tube.axis_start, tube.axis_end):
        t = float((end - wire.point) @ ahat) / cos_angle
        crossing = wire.point_at(t)
        dists.append(float(np.linalg.norm(crossing - end)))
    entry_dist, exit_dist = dists
    clearance = tube.diameter / 2.0 - wire_radius
    return KwireError(
        entry_dist=entry_dist,
        exit_dist=exit_dist,
        mean=0.5 * (entry_dist + exit_dist),
        breached=bool(max(entry_dist, exit_dist) > clearance),
    )
