"""The flying-frustum model: per-acquisition viewing pyramid, near-plane
image placement and scaling, frustum-to-frustum alignment guidance, and
coverage of multiple interlocking frustums.

The frustum is the full pyramid of vision with its apex at the X-ray
source, extending through the detector; the image can be displayed on any
cross-section (near plane) at distance n from the source, 0 <= n <= f.
Near-plane scaling is applied about the principal point so the scaled
image stays on the geometric cross-section of the pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import FrameMismatch, NearPlaneOutOfRange
from .geometry import (
    CameraIntrinsics,
    FrameId,
    RigidTransform,
    invert,
    project,
    quat_from_rotation,
)


@dataclass(frozen=True)
class ImageRef:
    """Opaque handle for one acquisition image; ``path`` resolves to a PNG
    or raw 8-bit grayscale file when a rendered image exists."""

    handle: str
    timestamp_ms: int = 0
    path: str | None = None


@dataclass(frozen=True, eq=False)
class FlyingFrustum:
    """One X-ray acquisition: intrinsics, measured source pose in the OR
    frame, image handle, and the user-adjustable near-plane distance n."""

    intrinsics: CameraIntrinsics
    source_pose: RigidTransform  # X -> OR at acquisition time
    image_ref: ImageRef
    n: float

    def __post_init__(self):
        if (
            self.source_pose.from_frame != FrameId.X
            or self.source_pose.to_frame != FrameId.OR
        ):
            raise FrameMismatch(
                "frustum source pose must map X->OR, got "
                f"{self.source_pose.from_frame.value}->{self.source_pose.to_frame.value}"
            )
        _check_near_plane(self.n, self.intrinsics.f)
        object.__setattr__(self, "n", float(self.n))

    @property
    def scale(self) -> float:
        """Near-plane scale factor s = n / f."""
        return self.n / self.intrinsics.f

    @property
    def viewing_axis(self) -> np.ndarray:
        """Source-to-detector direction in OR coordinates (third rotation column)."""
        return self.source_pose.rotation[:, 2].copy()

    @property
    def source_position(self) -> np.ndarray:
        return self.source_pose.translation.copy()

    def with_near_plane(self, n: float) -> "FlyingFrustum":
        return replace(self, n=n)


def _check_near_plane(n: float, f: float) -> None:
    if not (0.0 <= n <= f):
        raise NearPlaneOutOfRange(f"near plane n = {n!r} outside [0, {f}]", n=n, f=f)


def image_pose(fr: FlyingFrustum) -> RigidTransform:
    """Pose of the interactive image plane in the OR frame.

    The image keeps the source orientation and is pushed n mm along the
    viewing axis: t_I = t_X + n * (third column of R_X).
    """
    _check_near_plane(fr.n, fr.intrinsics.f)
    pose = fr.source_pose
    return RigidTransform(
        pose.rotation,
        pose.translation + fr.n * pose.rotation[:, 2],
        FrameId.I,
        FrameId.OR,
    )


def _scale_about_principal_point(x, fr: FlyingFrustum) -> np.ndarray:
    pp = fr.intrinsics.principal_point
    return pp + fr.scale * (np.asarray(x, dtype=float).reshape(2) - pp)


def scale_to_near_plane(x_i, fr: FlyingFrustum) -> np.ndarray:
    """Map acquisition-image pixels onto the near plane: x_f = pp + (n/f)(x_i - pp)."""
    _check_near_plane(fr.n, fr.intrinsics.f)
    x_i = np.asarray(x_i, dtype=float).reshape(2)
    if not fr.intrinsics.contains_pixel(x_i):
        raise ValueError(f"pixel {x_i.tolist()} outside image bounds")
    return _scale_about_principal_point(x_i, fr)


def frustum_project(fr: FlyingFrustum, x) -> np.ndarray:
    """Project an OR-frame point onto the frustum's near plane (pixels).

    Equals the detector-scale projection followed by central scaling by
    n/f about the principal point; at n = f it reduces to the plain
    projection. Raises BehindSource for non-positive depth.
    """
    _check_near_plane(fr.n, fr.intrinsics.f)
    px = project(fr.intrinsics, invert(fr.source_pose), x)
    return _scale_about_principal_point(px, fr)


@dataclass(frozen=True, eq=False)
class FrustumAlignment:
    """How far the current C-arm pose is from a target view."""

    rot_offset: float       # degrees
    trans_offset: float     # mm
    axis_hint: np.ndarray   # unit rotation axis to correct about


def alignment_to(current: FlyingFrustum, target: FlyingFrustum) -> FrustumAlignment:
    """Quantify the repositioning needed to bring ``current`` onto ``target``."""
    from .geometry import compose

    delta = compose(invert(target.source_pose), current.source_pose)
    q = quat_from_rotation(delta.rotation)
    return FrustumAlignment(
        rot_offset=q.angle_deg,
        trans_offset=float(np.linalg.norm(delta.translation)),
        axis_hint=q.axis,
    )


def frustum_contains(fr: FlyingFrustum, points) -> np.ndarray:
    """Vectorized membership test against the (unbounded) viewing pyramid.

    A point is inside iff its depth is positive and it projects within the
    image bounds at detector scale; bounds are inclusive.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pose = fr.source_pose
    cam = (pts - pose.translation) @ pose.rotation  # rows: R^T (p - t)
    z = cam[:, 2]
    ok = z > 0.0
    fp = fr.intrinsics.focal_px
    cx, cy = fr.intrinsics.principal_point
    w, h = fr.intrinsics.image_size
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fp * cam[:, 0] / z + cx
        v = fp * cam[:, 1] / z + cy
    ok &= (u >= 0.0) & (u <= w) & (v >= 0.0) & (v <= h)
    return ok


@dataclass(frozen=True, eq=False)
class CoverageReport:
    """Monte-Carlo coverage of a box by one or more frustums."""

    covered_fraction: float
    per_frustum: tuple[float, ...]
    pairwise: dict[tuple[int, int], float]
    n_samples: int


def interlock(
    frustums: list[FlyingFrustum],
    box_min,
    box_max,
    n_samples: int = 200_000,
    seed: int = 2026,
) -> CoverageReport:
    """Estimate which fraction of an axis-aligned box each frustum (and each
    frustum pair) can see. Seeded Monte Carlo, >= 1e5 samples by default."""
    if not frustums:
        raise ValueError("need at least one frustum")
    if n_samples < 100_000:
        raise ValueError("coverage estimate needs >= 1e5 samples")
    lo = np.asarray(box_min, dtype=float).reshape(3)
    hi = np.asarray(box_max, dtype=float).reshape(3)
    if np.any(hi <= lo):
        raise ValueError("box_max must exceed box_min on every axis")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_samples, 3))
    masks = np.stack([frustum_contains(fr, pts) for fr in frustums])
    covered = float(masks.any(axis=0).mean())
    per_frustum = tuple(float(m.mean()) for m in masks)
    pairwise = {
        (i, j): float((masks[i] & masks[j]).mean())
        for i in range(len(frustums))
        for j in range(i + 1, len(frustums))
    }
    return CoverageReport(covered, per_frustum, pairwise, n_samples)
