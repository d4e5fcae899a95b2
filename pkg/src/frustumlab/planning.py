"""Intra-operative planning on frustum images.

Two schemes:

1. virtual-tool projection into every frustum plus an alignment-consensus
   score (the human does the 6-DoF manipulation; this module only scores);
2. 2D annotations back-projected to rays, landmark triangulation as the
   closest point to N rays, and entry/exit plane-intersection trajectory
   reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindSource, CoplanarViews, InsufficientData, InvalidParams, ParallelRays
from .frustum import FlyingFrustum, frustum_project
from .geometry import FrameId, Ray, RigidTransform, _unit, invert, project

RAY_PARALLEL_TOL_DEG = 0.1
PLANE_PARALLEL_TOL_DEG = 0.1

ENTRY = "entry"
EXIT = "exit"


def landmark_label(name: str) -> str:
    return f"landmark:{name}"


@dataclass(frozen=True, eq=False)
class Annotation:
    """A clicked 2D point on one acquisition image (detector-scale pixels)."""

    frustum_id: str
    point: np.ndarray
    label: str  # "entry", "exit", or "landmark:<name>"
    author: str = "user"
    timestamp_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(2))


@dataclass(frozen=True, eq=False)
class Trajectory3D:
    """A 3D line with an anchor point, unit direction, and a quality residual (mm)."""

    point: np.ndarray
    direction: np.ndarray
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))
        object.__setattr__(self, "direction", _unit(self.direction))
        if self.residual < 0.0:
            raise InvalidParams("residual must be non-negative")

    def point_at(self, t: float) -> np.ndarray:
        return self.point + t * self.direction


_TOOL_TEMPLATES = {
    "kwire": {"points": [(0.0, 0.0, 0.0), (0.0, 0.0, 150.0)], "diameter": 2.8},
    "drill": {"points": [(0.0, 0.0, 0.0), (0.0, 0.0, 110.0), (0.0, 0.0, 220.0)], "diameter": 6.0},
    "impactor_cup": {"points": [(0.0, 0.0, 0.0), (0.0, 0.0, 350.0)], "diameter": 50.0},
}


@dataclass(frozen=True, eq=False)
class VirtualTool:
    """Rigid tool model: points in the tool frame plus a tool->OR pose.

    Model points run along the tool axis (+z); for a K-wire the default
    length is 150 mm at 2.8 mm diameter.
    """

    model_points: np.ndarray  # (N, 3), tool frame
    pose: RigidTransform      # T -> OR
    kind: str = "kwire"
    diameter: float = 2.8

    def __post_init__(self):
        pts = np.asarray(self.model_points, dtype=float).reshape(-1, 3)
        if len(pts) < 2:
            raise InvalidParams("a tool needs at least two model points")
        if self.pose.from_frame != FrameId.T or self.pose.to_frame != FrameId.OR:
            raise InvalidParams("tool pose must map T->OR")
        object.__setattr__(self, "model_points", pts)

    def points_in_or(self) -> np.ndarray:
        return self.pose.apply(self.model_points)

    @property
    def axis_in_or(self) -> np.ndarray:
        return self.pose.rotation[:, 2].copy()


def make_tool(kind: str, pose: RigidTransform) -> VirtualTool:
    if kind not in _TOOL_TEMPLATES:
        raise InvalidParams(f"unknown tool kind {kind!r}", known=sorted(_TOOL_TEMPLATES))
    spec = _TOOL_TEMPLATES[kind]
    return VirtualTool(np.asarray(spec["points"]), pose, kind=kind, diameter=spec["diameter"])


def ray_from_annotation(fr: FlyingFrustum, ann: Annotation) -> Ray:
    """Back-project an annotated pixel to the source-to-landmark ray in OR.

    The direction is K^-1 [u v 1] rotated into the OR frame; it always has
    a positive component along the viewing axis.
    """
    if ann.frustum_id != fr.image_ref.handle:
        raise InvalidParams(
            f"annotation references {ann.frustum_id!r}, frustum is {fr.image_ref.handle!r}"
        )
    k = fr.intrinsics
    if not k.contains_pixel(ann.point):
        raise ValueError(f"annotation pixel {ann.point.tolist()} outside image bounds")
    pitch_over_f = k.pixel_pitch / k.f
    d_cam = np.array(
        [
            (ann.point[0] - k.principal_point[0]) * pitch_over_f,
            (ann.point[1] - k.principal_point[1]) * pitch_over_f,
            1.0,
        ]
    )
    direction = fr.source_pose.rotation @ d_cam
    return Ray(fr.source_pose.translation, direction)


def triangulate(rays: list[Ray]) -> tuple[np.ndarray, float]:
    """Closest point to N >= 2 rays.

    Solves the stacked normal equations of
    min_x sum_i || (I - u_i u_i^T) x - (I - u_i u_i^T) c_i ||^2
    in closed form; the residual is the RMS point-to-line distance in mm.
    """
    if len(rays) < 2:
        raise InsufficientData(f"triangulation needs >= 2 rays, got {len(rays)}")
    dirs = np.stack([r.direction for r in rays])
    dots = np.abs(np.clip(dirs @ dirs.T, -1.0, 1.0))
    iu = np.triu_indices(len(rays), k=1)
    max_angle = math.degrees(math.acos(float(dots[iu].min())))
    if max_angle <= RAY_PARALLEL_TOL_DEG:
        raise ParallelRays(
            f"all rays within {max_angle:.4f} deg of parallel", max_angle_deg=max_angle
        )
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for r in rays:
        p = np.eye(3) - np.outer(r.direction, r.direction)
        a += p
        b += p @ r.origin
    sigmas = np.linalg.svd(a, compute_uv=False)
    if sigmas[-1] < 1e-9 * sigmas[0]:
        raise ParallelRays("triangulation system is rank-deficient")
    x = np.linalg.solve(a, b)
    sq = sum(r.distance_to_point(x) ** 2 for r in rays)
    return x, math.sqrt(sq / len(rays))


def _plane_normal(entry: Ray, exit_: Ray, which: str) -> np.ndarray:
    n = np.cross(entry.direction, exit_.direction)
    norm = float(np.linalg.norm(n))
    if norm < math.sin(math.radians(RAY_PARALLEL_TOL_DEG)):
        raise ParallelRays(f"entry and exit rays of view {which} are (near-)parallel")
    return n / norm


def trajectory_from_rays(
    entry_i: Ray, exit_i: Ray, entry_j: Ray, exit_j: Ray
) -> Trajectory3D:
    """Trajectory as the intersection of the two per-view planes.

    Each view's entry/exit rays span a plane; the planes intersect along
    d = (u1i x u2i) x (u1j x u2j). The anchor is the triangulated entry
    landmark; the direction is oriented from entry to exit whenever the
    exit point triangulates (colocated exit rays leave the canonical sign).
    """
    n_i = _plane_normal(entry_i, exit_i, "i")
    n_j = _plane_normal(entry_j, exit_j, "j")
    d = np.cross(n_i, n_j)
    norm = float(np.linalg.norm(d))
    if norm < math.sin(math.radians(PLANE_PARALLEL_TOL_DEG)):
        raise CoplanarViews("the two annotation planes are (near-)parallel")
    d = d / norm
    entry_point, entry_res = triangulate([entry_i, entry_j])
    residual = entry_res
    try:
        exit_point, exit_res = triangulate([exit_i, exit_j])
    except ParallelRays:
        exit_point = None
    else:
        residual = max(entry_res, exit_res)
        if float(d @ (exit_point - entry_point)) < 0.0:
            d = -d
    return Trajectory3D(entry_point, d, residual)


def trajectory_from_frustum_pair(
    entry_i: Annotation,
    exit_i: Annotation,
    entry_j: Annotation,
    exit_j: Annotation,
    fr_i: FlyingFrustum,
    fr_j: FlyingFrustum,
) -> Trajectory3D:
    return trajectory_from_rays(
        ray_from_annotation(fr_i, entry_i),
        ray_from_annotation(fr_i, exit_i),
        ray_from_annotation(fr_j, entry_j),
        ray_from_annotation(fr_j, exit_j),
    )


@dataclass(frozen=True, eq=False)
class ToolProjection:
    """Per-frustum projection of a tool: NaN pixels where the point is
    behind the source, mirrored in the ``visible`` mask."""

    pixels: np.ndarray  # (N, 2) near-plane pixels
    visible: np.ndarray  # (N,) bool


def project_tool(tool: VirtualTool, frustums: list[FlyingFrustum]) -> list[ToolProjection]:
    """Project every tool model point into every frustum (near-plane pixels).

    Points behind a source are flagged per point, never fatal.
    """
    world = tool.points_in_or()
    out = []
    for fr in frustums:
        pixels = np.full((len(world), 2), np.nan)
        visible = np.zeros(len(world), dtype=bool)
        for i, p in enumerate(world):
            try:
                pixels[i] = frustum_project(fr, p)
            except BehindSource:
                continue
            visible[i] = True
        out.append(ToolProjection(pixels, visible))
    return out


def _point_polyline_distance(p: np.ndarray, poly: np.ndarray) -> float:
    if len(poly) == 1:
        return float(np.linalg.norm(p - poly[0]))
    best = math.inf
    for a, b in zip(poly[:-1], poly[1:]):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def consensus_residual(
    tool: VirtualTool,
    targets: list[np.ndarray],
    frustums: list[FlyingFrustum],
) -> float:
    """Mean detector-plane distance (mm) between the projected tool and the
    per-frustum target polylines.

    Distances are measured at detector scale and converted to mm via the
    pixel pitch, then averaged over frustums. Zero iff the projected tool
    lies on every target; consensus across >= 2 frustums is the 2D
    equivalent of 3D alignment.
    """
    if len(targets) != len(frustums):
        raise InvalidParams("one target polyline per frustum is required")
    if len(frustums) < 2:
        raise InsufficientData("alignment consensus needs >= 2 frustums with targets")
    world = tool.points_in_or()
    per_frustum = []
    for fr, target in zip(frustums, targets):
        poly = np.asarray(target, dtype=float).reshape(-1, 2)
        if len(poly) == 0:
            raise InvalidParams("empty target polyline")
        dists = []
        pose_or_to_x = invert(fr.source_pose)
        for p in world:
            try:
                px = project(fr.intrinsics, pose_or_to_x, p)
            except BehindSource:
                continue
            dists.append(_point_polyline_distance(px, poly))
        if not dists:
            raise BehindSource("entire tool is behind the source in one frustum")
        per_frustum.append(fr.intrinsics.pixel_pitch * float(np.mean(dists)))
    return float(np.mean(per_frustum))
