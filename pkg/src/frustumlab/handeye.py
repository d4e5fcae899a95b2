"""Offline co-calibration of the X-ray source with the gantry-mounted
visual tracker by solving AX = XB over paired relative motions.

The rotation is recovered first from a stacked 4Nx4 linear system over
unit quaternions (smallest-singular-vector solution of min ||Mq|| subject
to ||q|| = 1), then the translation from the stacked least-squares system
(R_A - I) t_X = R_X t_B - t_A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMotion, InsufficientData, InvalidParams
from .geometry import (
    FrameId,
    RigidTransform,
    UnitQuaternion,
    _skew,
    _unit,
    compose,
    invert,
    quat_from_rotation,
    relative_rotation_angle_deg,
    rotation_angle_deg,
    rotation_from_quat,
    rotation_from_rotvec,
)

AXIS_PARALLEL_TOL_DEG = 1.0     # minimum spread between rotation axes
TRANSLATION_RANK_TOL = 1e-6     # sigma_min threshold of the stacked (R_A - I)


@dataclass(frozen=True, eq=False)
class PosePair:
    """One (A, B) pair of relative motions over the same time interval.

    ``a`` is the relative X-ray-source motion (X -> X), ``b`` the relative
    tracker motion (H -> H). For congruent screw motions the rotation
    angles agree up to noise.
    """

    a: RigidTransform
    b: RigidTransform

    @property
    def angle_gap_deg(self) -> float:
        return abs(rotation_angle_deg(self.a.rotation) - rotation_angle_deg(self.b.rotation))


@dataclass(frozen=True)
class NoiseModel:
    """Axis-angle rotation noise (deg, per-axis std) and translation noise
    (mm, per-axis std) applied on the left of each motion."""

    rot_sigma: float = 0.0
    trans_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rot_sigma < 0.0 or self.trans_sigma < 0.0:
            raise InvalidParams("noise sigmas must be non-negative")


@dataclass(frozen=True)
class MotionRange:
    """Uniform sampling ranges for synthetic motions: rotation angle in
    degrees, per-axis translation in mm."""

    rot: float = 60.0
    trans: float = 150.0


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Estimated tracker-to-source transform with RMS self-consistency residuals."""

    x: RigidTransform               # H -> X
    rotation_residual: float        # degrees, RMS over pairs
    translation_residual: float     # mm, RMS over pairs
    n_pairs: int

    def __post_init__(self):
        if self.rotation_residual < 0.0 or self.translation_residual < 0.0:
            raise InvalidParams("residuals must be non-negative")


def _rotation_axes(pairs: list[PosePair]) -> np.ndarray:
    """Axes of the A motions with a meaningful rotation (angle > ~1e-6 deg)."""
    axes = []
    for p in pairs:
        q = quat_from_rotation(p.a.rotation)
        if q.angle_deg > 1e-6:
            axes.append(q.axis)
    return np.asarray(axes).reshape(-1, 3)


def _check_axis_spread(pairs: list[PosePair]) -> None:
    axes = _rotation_axes(pairs)
    if len(axes) < 2:
        raise DegenerateMotion("need at least two pairs with non-trivial rotations")
    dots = np.abs(np.clip(axes @ axes.T, -1.0, 1.0))
    np.fill_diagonal(dots, 1.0)
    max_angle = math.degrees(math.acos(float(dots.min())))
    if max_angle <= AXIS_PARALLEL_TOL_DEG:
        raise DegenerateMotion(
            f"all rotation axes within {max_angle:.3f} deg of each other; "
            "the rotation null space is not one-dimensional"
        )


def solve_rotation(pairs: list[PosePair]) -> UnitQuaternion:
    """Rotation part of AX = XB as the least-singular right vector of the
    stacked per-pair 4x4 blocks

        [[s_A - s_B,  (v_A - v_B)^T],
         [v_A - v_B,  (s_A - s_B) I_3 + [v_A + v_B]_x]]

    acting on q = [s_X, v_X].
    """
    if len(pairs) < 2:
        raise InsufficientData(f"need >= 2 pose pairs, got {len(pairs)}")
    _check_axis_spread(pairs)
    blocks = []
    for p in pairs:
        qa = quat_from_rotation(p.a.rotation)
        qb = quat_from_rotation(p.b.rotation)
        ds = qa.s - qb.s
        dv = qa.v - qb.v
        block = np.zeros((4, 4))
        block[0, 0] = ds
        block[0, 1:] = dv
        block[1:, 0] = dv
        block[1:, 1:] = ds * np.eye(3) + _skew(qa.v + qb.v)
        blocks.append(block)
    m = np.vstack(blocks)
    _, _, vt = np.linalg.svd(m)
    q = vt[-1]
    q = q / np.linalg.norm(q)
    return UnitQuaternion(q[0], q[1:])


def solve_translation(pairs: list[PosePair], r_x: np.ndarray) -> np.ndarray:
    """Translation part of AX = XB, stacked least squares with the rotation fixed."""
    if len(pairs) < 2:
        raise InsufficientData(f"need >= 2 pose pairs, got {len(pairs)}")
    r_x = np.asarray(r_x, dtype=float)
    lhs = np.vstack([p.a.rotation - np.eye(3) for p in pairs])
    rhs = np.concatenate([r_x @ p.b.translation - p.a.translation for p in pairs])
    sigma_min = float(np.linalg.svd(lhs, compute_uv=False)[-1])
    if sigma_min <= TRANSLATION_RANK_TOL:
        raise DegenerateMotion(
            f"translation system is rank-deficient (sigma_min = {sigma_min:.3e}); "
            "motions do not excite all three axes"
        )
    t, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return t


def calibrate(pairs: list[PosePair]) -> CalibrationResult:
    """Full disentangled solve: rotation first, then translation, plus RMS residuals."""
    q = solve_rotation(pairs)
    r_x = rotation_from_quat(q)
    t_x = solve_translation(pairs, r_x)
    rot_sq = 0.0
    trans_sq = 0.0
    for p in pairs:
        rot_sq += relative_rotation_angle_deg(p.a.rotation @ r_x, r_x @ p.b.rotation) ** 2
        gap = p.a.rotation @ t_x + p.a.translation - r_x @ p.b.translation - t_x
        trans_sq += float(gap @ gap)
    n = len(pairs)
    x = RigidTransform(r_x, t_x, FrameId.H, FrameId.X)
    return CalibrationResult(x, math.sqrt(rot_sq / n), math.sqrt(trans_sq / n), n)


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return _unit(v)


def _perturb(t: RigidTransform, noise: NoiseModel, rng: np.random.Generator) -> RigidTransform:
    # draws happen unconditionally so the stream is identical across sigma choices
    w = rng.normal(0.0, math.radians(noise.rot_sigma), size=3)
    dt = rng.normal(0.0, noise.trans_sigma, size=3)
    return RigidTransform(
        rotation_from_rotvec(w) @ t.rotation, t.translation + dt, t.from_frame, t.to_frame
    )


def generate_pose_pairs(
    ground_truth_x: RigidTransform,
    n: int,
    motion_range: MotionRange = MotionRange(),
    noise: NoiseModel = NoiseModel(),
) -> list[PosePair]:
    """Synthetic stand-in for a tracked recording session.

    Random A motions are drawn uniformly within ``motion_range``; each B is
    constructed as X^-1 A X from the ground truth before noise is applied
    independently to both sides. Deterministic under ``noise.seed``.
    """
    if n < 2:
        raise InsufficientData(f"need n >= 2, got {n}")
    if motion_range.rot <= 0.0:
        raise InvalidParams("motion_range.rot must be positive")
    rng = np.random.default_rng(noise.seed)
    x_inv = invert(ground_truth_x)
    pairs = []
    for _ in range(n):
        axis = _random_unit(rng)
        angle = rng.uniform(0.0, math.radians(motion_range.rot))
        r = rotation_from_rotvec(axis * angle)
        t = rng.uniform(-motion_range.trans, motion_range.trans, size=3)
        a = RigidTransform(r, t, FrameId.X, FrameId.X)
        b = compose(compose(x_inv, a), ground_truth_x)
        pairs.append(PosePair(_perturb(a, noise, rng), _perturb(b, noise, rng)))
    return pairs


@dataclass(frozen=True)
class SamplingRow:
    """Aggregate calibration quality for one subsample size."""

    n: int
    mean_rot_err: float
    sd_rot_err: float
    mean_trans_err: float
    sd_trans_err: float
    mean_rot_residual: float
    mean_trans_residual: float
    n_degenerate: int


def _mean_sd(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), sd


def sampling_experiment(
    pairs: list[PosePair],
    sample_sizes: list[int],
    repeats: int,
    ground_truth_x: RigidTransform | None = None,
    seed: int = 0,
) -> list[SamplingRow]:
    """Subsample-and-calibrate sweep over the pose-pair set.

    For each N, ``repeats`` random subsets are calibrated. Errors are
    reported against the ground truth when it is known, otherwise the RMS
    residuals stand in; residuals are reported alongside either way.
    Degenerate draws are excluded from the statistics and counted.
    """
    if repeats < 1:
        raise InvalidParams("repeats must be >= 1")
    if max(sample_sizes) > len(pairs):
        raise InvalidParams(
            f"largest sample size {max(sample_sizes)} exceeds the {len(pairs)} available pairs"
        )
    rng = np.random.default_rng(seed)
    rows = []
    for n in sample_sizes:
        rot_errs: list[float] = []
        trans_errs: list[float] = []
        rot_res: list[float] = []
        trans_res: list[float] = []
        degenerate = 0
        for _ in range(repeats):
            idx = np.sort(rng.choice(len(pairs), size=n, replace=False))
            subset = [pairs[i] for i in idx]
            try:
                result = calibrate(subset)
            except (DegenerateMotion, InsufficientData):
                degenerate += 1
                continue
            if ground_truth_x is not None:
                rot_errs.append(
                    relative_rotation_angle_deg(result.x.rotation, ground_truth_x.rotation)
                )
                trans_errs.append(
                    float(np.linalg.norm(result.x.translation - ground_truth_x.translation))
                )
            else:
                rot_errs.append(result.rotation_residual)
                trans_errs.append(result.translation_residual)
            rot_res.append(result.rotation_residual)
            trans_res.append(result.translation_residual)
        mean_rot, sd_rot = _mean_sd(rot_errs)
        mean_trans, sd_trans = _mean_sd(trans_errs)
        rows.append(
            SamplingRow(
                n=int(n),
                mean_rot_err=mean_rot,
                sd_rot_err=sd_rot,
                mean_trans_err=mean_trans,
                sd_trans_err=sd_trans,
                mean_rot_residual=_mean_sd(rot_res)[0],
                mean_trans_residual=_mean_sd(trans_res)[0],
                n_degenerate=degenerate,
            )
        )
    return rows
