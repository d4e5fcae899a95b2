import numpy as np
import pytest

from frustumlab import (
    BehindSource,
    FlyingFrustum,
    FrameId,
    ImageRef,
    NearPlaneOutOfRange,
    RigidTransform,
    alignment_to,
    frustum_contains,
    frustum_project,
    image_pose,
    interlock,
    invert,
    project,
    rotation_about,
    scale_to_near_plane,
)
from support import INTRINSICS, make_frustum, rand_pose


def identity_frustum(n: float) -> FlyingFrustum:
    pose = RigidTransform.identity(FrameId.X, FrameId.OR)
    return FlyingFrustum(INTRINSICS, pose, ImageRef("shot-000"), n)


def eq8_oracle(fr: FlyingFrustum, x) -> np.ndarray:
    """Independent full-matrix oracle: scale(n/f about the principal point)
    times K times [R|t], applied homogeneously in one product."""
    s = fr.n / fr.intrinsics.f
    cx, cy = fr.intrinsics.principal_point
    scale = np.array([[s, 0.0, (1.0 - s) * cx], [0.0, s, (1.0 - s) * cy], [0.0, 0.0, 1.0]])
    pose = invert(fr.source_pose)
    rt = np.hstack([pose.rotation, pose.translation.reshape(3, 1)])
    p = scale @ fr.intrinsics.matrix() @ rt
    y = p @ np.append(np.asarray(x, dtype=float), 1.0)
    return y[:2] / y[2]


def halfspace_oracle(fr: FlyingFrustum, pts: np.ndarray) -> np.ndarray:
    """Analytic pyramid membership: positive depth and four side planes."""
    pose = fr.source_pose
    cam = (pts - pose.translation) @ pose.rotation
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    fp = fr.intrinsics.focal_px
    cx, cy = fr.intrinsics.principal_point
    w, h = fr.intrinsics.image_size
    return (
        (z > 0)
        & (fp * x + cx * z >= 0)
        & (fp * x - (w - cx) * z <= 0)
        & (fp * y + cy * z >= 0)
        & (fp * y - (h - cy) * z <= 0)
    )


class TestImagePose:
    def test_n_zero_collapses_onto_source(self):
        rng = np.random.default_rng(0)
        pose = rand_pose(rng, FrameId.X, FrameId.OR, trans_scale=500.0)
        fr = FlyingFrustum(INTRINSICS, pose, ImageRef("shot-000"), 0.0)
        out = image_pose(fr)
        np.testing.assert_allclose(out.rotation, pose.rotation, atol=1e-12)
        np.testing.assert_allclose(out.translation, pose.translation, atol=1e-12)
        assert out.from_frame == FrameId.I and out.to_frame == FrameId.OR

    def test_identity_pose_offsets_along_z(self):
        fr = identity_frustum(700.0)
        out = image_pose(fr)
        np.testing.assert_allclose(out.translation, (0.0, 0.0, 700.0), atol=1e-12)

    def test_n_equal_f_reaches_detector_plane(self):
        rng = np.random.default_rng(1)
        pose = rand_pose(rng, FrameId.X, FrameId.OR, trans_scale=500.0)
        fr = FlyingFrustum(INTRINSICS, pose, ImageRef("shot-000"), INTRINSICS.f)
        out = image_pose(fr)
        along_axis = (out.translation - pose.translation) @ pose.rotation[:, 2]
        assert along_axis == pytest.approx(INTRINSICS.f, abs=1e-9)

    def test_translation_linear_in_n(self):
        rng = np.random.default_rng(2)
        pose = rand_pose(rng, FrameId.X, FrameId.OR, trans_scale=500.0)
        dn = 1.0
        for n in (0.0, 100.0, 500.0, INTRINSICS.f - dn):
            lo = image_pose(FlyingFrustum(INTRINSICS, pose, ImageRef("s"), n))
            hi = image_pose(FlyingFrustum(INTRINSICS, pose, ImageRef("s"), n + dn))
            diff = (hi.translation - lo.translation) / dn
            np.testing.assert_allclose(diff, pose.rotation[:, 2], atol=1e-9)

    def test_near_plane_range_enforced(self):
        pose = RigidTransform.identity(FrameId.X, FrameId.OR)
        with pytest.raises(NearPlaneOutOfRange):
            FlyingFrustum(INTRINSICS, pose, ImageRef("s"), -1.0)
        with pytest.raises(NearPlaneOutOfRange):
            FlyingFrustum(INTRINSICS, pose, ImageRef("s"), INTRINSICS.f + 1.0)


class TestNearPlaneScaling:
    def test_n_equal_f_is_identity(self):
        fr = identity_frustum(INTRINSICS.f)
        x = np.array([123.0, 857.0])
        np.testing.assert_allclose(scale_to_near_plane(x, fr), x, atol=1e-12)

    def test_principal_point_is_fixed(self):
        for n in (0.0, 10.0, 490.0, 980.0):
            fr = identity_frustum(n)
            out = scale_to_near_plane(INTRINSICS.principal_point, fr)
            np.testing.assert_allclose(out, INTRINSICS.principal_point, atol=1e-12)

    def test_half_f_halves_offsets(self):
        fr = identity_frustum(INTRINSICS.f / 2.0)
        x = INTRINSICS.principal_point + np.array([100.0, 0.0])
        out = scale_to_near_plane(x, fr)
        np.testing.assert_allclose(out - INTRINSICS.principal_point, (50.0, 0.0), atol=1e-12)

    def test_rejects_out_of_bounds_pixels(self):
        fr = identity_frustum(500.0)
        with pytest.raises(ValueError):
            scale_to_near_plane((-5.0, 10.0), fr)


class TestFrustumProject:
    def test_n_equal_f_matches_plain_projection(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            fr = make_frustum(rng.uniform(-800, 800, 3), rng.uniform(-50, 50, 3))
            x = rng.uniform(-100.0, 100.0, size=3)
            expected = project(fr.intrinsics, invert(fr.source_pose), x)
            np.testing.assert_allclose(frustum_project(fr, x), expected, atol=1e-12)

    def test_principal_ray_fixed_for_every_n(self):
        for n in (0.0, 50.0, 423.0, 980.0):
            fr = make_frustum((0.0, -600.0, 0.0), (0.0, 0.0, 0.0), n=n)
            out = frustum_project(fr, (0.0, 0.0, 0.0))
            np.testing.assert_allclose(out, INTRINSICS.principal_point, atol=1e-9)

    def test_matches_explicit_matrix_oracle(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 100:
            pose = rand_pose(rng, FrameId.X, FrameId.OR, trans_scale=400.0)
            n = rng.uniform(0.0, INTRINSICS.f)
            fr = FlyingFrustum(INTRINSICS, pose, ImageRef("s"), n)
            x = rng.uniform(-400.0, 400.0, size=3)
            cam = invert(pose).apply(x)
            if cam[2] <= 1.0:
                continue
            np.testing.assert_allclose(frustum_project(fr, x), eq8_oracle(fr, x), atol=1e-9)
            checked += 1

    def test_central_scaling_property(self):
        rng = np.random.default_rng(5)
        fr_full = make_frustum((200.0, -500.0, 100.0), (0.0, 0.0, 0.0))
        pp = INTRINSICS.principal_point
        for _ in range(20):
            x = rng.uniform(-80.0, 80.0, size=3)
            at_f = frustum_project(fr_full, x)
            for n in (1.0, 123.0, 490.0, 979.0, 980.0):
                fr = fr_full.with_near_plane(n)
                out = frustum_project(fr, x)
                np.testing.assert_allclose(out - pp, (n / INTRINSICS.f) * (at_f - pp), atol=1e-12)

    def test_behind_source_propagates(self):
        fr = make_frustum((0.0, -600.0, 0.0), (0.0, 0.0, 0.0), n=300.0)
        with pytest.raises(BehindSource):
            frustum_project(fr, (0.0, -700.0, 0.0))


class TestAlignment:
    def test_identical_frustums(self):
        fr = make_frustum((0.0, -600.0, 0.0), (0.0, 0.0, 0.0))
        out = alignment_to(fr, fr)
        assert out.rot_offset == pytest.approx(0.0, abs=1e-9)
        assert out.trans_offset == pytest.approx(0.0, abs=1e-9)

    def test_pure_rotation_about_z(self):
        pose = RigidTransform.identity(FrameId.X, FrameId.OR)
        current = FlyingFrustum(INTRINSICS, pose, ImageRef("a"), 500.0)
        rotated = RigidTransform(
            rotation_about((0, 0, 1), 30.0) @ pose.rotation, pose.translation, FrameId.X, FrameId.OR
        )
        target = FlyingFrustum(INTRINSICS, rotated, ImageRef("b"), 500.0)
        out = alignment_to(current, target)
        assert out.rot_offset == pytest.approx(30.0, abs=1e-9)
        assert out.trans_offset == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(np.abs(out.axis_hint), (0, 0, 1), atol=1e-9)

    def test_matches_relative_pose_decomposition_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            a = FlyingFrustum(INTRINSICS, rand_pose(rng, FrameId.X, FrameId.OR), ImageRef("a"), 100.0)
            b = FlyingFrustum(INTRINSICS, rand_pose(rng, FrameId.X, FrameId.OR), ImageRef("b"), 100.0)
            out = alignment_to(a, b)
            # independent decomposition: angle from the trace, offset from the
            # homogeneous-matrix product
            ha = np.eye(4)
            ha[:3, :3], ha[:3, 3] = a.source_pose.rotation, a.source_pose.translation
            hb = np.eye(4)
            hb[:3, :3], hb[:3, 3] = b.source_pose.rotation, b.source_pose.translation
            delta = np.linalg.inv(hb) @ ha
            cos_angle = np.clip((np.trace(delta[:3, :3]) - 1.0) / 2.0, -1.0, 1.0)
            assert out.rot_offset == pytest.approx(np.degrees(np.arccos(cos_angle)), abs=1e-9)
            assert out.trans_offset == pytest.approx(np.linalg.norm(delta[:3, 3]), abs=1e-9)

    def test_symmetric_offsets(self):
        rng = np.random.default_rng(7)
        a = FlyingFrustum(INTRINSICS, rand_pose(rng, FrameId.X, FrameId.OR), ImageRef("a"), 10.0)
        b = FlyingFrustum(INTRINSICS, rand_pose(rng, FrameId.X, FrameId.OR), ImageRef("b"), 10.0)
        ab, ba = alignment_to(a, b), alignment_to(b, a)
        assert ab.rot_offset == pytest.approx(ba.rot_offset, abs=1e-9)
        assert ab.trans_offset == pytest.approx(ba.trans_offset, abs=1e-9)


class TestContainmentAndInterlock:
    def test_containment_matches_halfspace_oracle_and_projection(self):
        rng = np.random.default_rng(8)
        fr = make_frustum((150.0, -550.0, 80.0), (0.0, 0.0, 0.0))
        pts = rng.uniform(-900.0, 900.0, size=(10_000, 3))
        ours = frustum_contains(fr, pts)
        oracle = halfspace_oracle(fr, pts)
        np.testing.assert_array_equal(ours, oracle)
        # spot-check equivalence with in-bounds projection at n = f
        for p in pts[:300]:
            try:
                px = project(fr.intrinsics, invert(fr.source_pose), p)
                projected_in = fr.intrinsics.contains_pixel(px)
            except BehindSource:
                projected_in = False
            assert projected_in == bool(frustum_contains(fr, p)[0])

    def test_single_frustum_fully_containing_box(self):
        fr = make_frustum((0.0, -600.0, 0.0), (0.0, 0.0, 0.0))
        report = interlock([fr], (-50.0, -50.0, -50.0), (50.0, 50.0, 50.0))
        assert report.covered_fraction == pytest.approx(1.0, abs=0.01)

    def test_two_identical_frustums_overlap_equals_own_coverage(self):
        fr = make_frustum((0.0, -400.0, 0.0), (0.0, 0.0, 0.0))
        report = interlock([fr, fr], (-150.0, -150.0, -150.0), (150.0, 150.0, 150.0))
        assert 0.0 < report.per_frustum[0] < 1.0
        assert report.pairwise[(0, 1)] == pytest.approx(report.per_frustum[0], abs=0.01)
        assert report.per_frustum[1] == report.per_frustum[0]

    def test_opposite_half_spaces(self):
        seeing = make_frustum((0.0, -600.0, 0.0), (0.0, 0.0, 0.0), handle="a")
        blind = make_frustum((0.0, -600.0, 0.0), (0.0, -1200.0, 0.0), handle="b")
        both = interlock([seeing, blind], (-60.0, -60.0, -60.0), (60.0, 60.0, 60.0))
        alone = interlock([seeing], (-60.0, -60.0, -60.0), (60.0, 60.0, 60.0))
        assert both.per_frustum[1] == 0.0
        assert both.covered_fraction == pytest.approx(alone.covered_fraction, abs=1e-12)
        assert both.pairwise[(0, 1)] == 0.0

    def test_interlock_is_seeded(self):
        fr = make_frustum((0.0, -500.0, 0.0), (0.0, 0.0, 0.0))
        a = interlock([fr], (-100.0, -100.0, -100.0), (100.0, 100.0, 100.0), seed=5)
        b = interlock([fr], (-100.0, -100.0, -100.0), (100.0, 100.0, 100.0), seed=5)
        assert a.covered_fraction == b.covered_fraction
