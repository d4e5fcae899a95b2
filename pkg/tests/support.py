"""Shared helpers for the test suite: random rigid motions and a standard
two-view rig used by the planning round trips."""

from __future__ import annotations

import numpy as np

from frustumlab import (
    CameraIntrinsics,
    FlyingFrustum,
    FrameId,
    ImageRef,
    RigidTransform,
    UnitQuaternion,
    look_at_pose,
    rotation_from_quat,
)

INTRINSICS = CameraIntrinsics(
    f=980.0, pixel_pitch=0.25, principal_point=(512.0, 512.0), image_size=(1024, 1024)
)


def rand_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random rotation matrix (normalized 4-normal quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return rotation_from_quat(UnitQuaternion(q[0], q[1:]))


def rand_pose(
    rng: np.random.Generator,
    from_frame: FrameId = FrameId.OR,
    to_frame: FrameId = FrameId.OR,
    trans_scale: float = 100.0,
) -> RigidTransform:
    return RigidTransform(
        rand_rotation(rng),
        rng.uniform(-trans_scale, trans_scale, size=3),
        from_frame,
        to_frame,
    )


def make_frustum(
    source_position,
    target,
    handle: str = "shot-000",
    n: float | None = None,
    intrinsics: CameraIntrinsics = INTRINSICS,
    timestamp_ms: int = 0,
) -> FlyingFrustum:
    pose = look_at_pose(source_position, target)
    return FlyingFrustum(
        intrinsics, pose, ImageRef(handle, timestamp_ms), intrinsics.f if n is None else n
    )


def two_view_rig(center=(0.0, 0.0, 0.0), distance: float = 600.0):
    """Two frustums ~90 degrees apart, both aimed at ``center``."""
    center = np.asarray(center, dtype=float)
    fr_a = make_frustum(center + np.array([0.0, -distance, 0.0]), center, handle="shot-000")
    fr_b = make_frustum(center + np.array([-distance, 0.0, 0.0]), center, handle="shot-001", timestamp_ms=1)
    return fr_a, fr_b
