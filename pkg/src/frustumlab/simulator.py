"""The virtual operating room: phantoms with ground truth, a noisy
localizer standing in for room-level visual tracking, a virtual C-arm that
produces synthetic annotated acquisitions, and the event-sourced Session
that records everything for deterministic replay.

A shot's *measured* source pose is what the planning pipeline sees:
the true pose corrupted by the localizer error and by the session's
calibration error. The true pose is kept alongside purely for evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .clinical import (
    APPFrame,
    TubePhantomSpec,
    app_from_landmarks,
    axis_from_angles,
    cup_angles,
    in_safe_zone,
    kwire_error,
)
from .errors import (
    BehindSource,
    CollinearLandmarks,
    CorruptLog,
    FrameMismatch,
    InsufficientData,
    InvalidParams,
    NotFound,
)
from .frustum import FlyingFrustum, ImageRef, image_pose
from .geometry import (
    CameraIntrinsics,
    FrameId,
    Ray,
    RigidTransform,
    _unit,
    compose,
    invert,
    project,
    rotation_from_rotvec,
)
from .handeye import CalibrationResult
from .planning import (
    ENTRY,
    EXIT,
    Annotation,
    Trajectory3D,
    landmark_label,
    ray_from_annotation,
    trajectory_from_frustum_pair,
    triangulate,
)
from .serialization import canonical_json

DOSE_PER_SHOT = 0.1275  # cGy*cm^2 bookkeeping constant per acquisition

DEFAULT_INTRINSICS = CameraIntrinsics(
    f=980.0, pixel_pitch=0.25, principal_point=(512.0, 512.0), image_size=(1024, 1024)
)


# ---------------------------------------------------------------------------
# Phantoms
# ---------------------------------------------------------------------------


class PhantomKind(str, Enum):
    TUBE_IN_CUBE = "tube_in_cube"
    PELVIS_LANDMARKS = "pelvis_landmarks"


PELVIS_LANDMARK_NAMES = ("asis_left", "asis_right", "pubis", "acetabulum")


@dataclass(frozen=True, eq=False)
class Phantom:
    """Synthetic landmark model with ground-truth geometry (phantom frame)."""

    kind: PhantomKind
    landmarks: dict[str, np.ndarray]
    tube: TubePhantomSpec | None
    pose: RigidTransform  # P -> OR

    def __post_init__(self):
        if (self.tube is not None) != (self.kind == PhantomKind.TUBE_IN_CUBE):
            raise InvalidParams("tube present iff kind is tube_in_cube")
        if len(set(self.landmarks)) != len(self.landmarks):
            raise InvalidParams("landmark names must be unique")
        if self.pose.from_frame != FrameId.P or self.pose.to_frame != FrameId.OR:
            raise InvalidParams("phantom pose must map P->OR")

    def landmark_in_or(self, name: str) -> np.ndarray:
        return self.pose.apply(self.landmarks[name])

    def tube_in_or(self) -> TubePhantomSpec:
        if self.tube is None:
            raise InvalidParams("phantom has no tube")
        return TubePhantomSpec(
            self.pose.apply(self.tube.axis_start),
            self.pose.apply(self.tube.axis_end),
            self.tube.diameter,
        )

    def app_in_or(self) -> APPFrame:
        return app_from_landmarks(
            self.landmark_in_or("asis_left"),
            self.landmark_in_or("asis_right"),
            self.landmark_in_or("pubis"),
        )


def build_phantom(kind, pose: RigidTransform | None = None, **params) -> Phantom:
    """Construct a phantom with documented default geometry.

    tube_in_cube: cube corner landmarks plus tube end-ring centers
    (default 10 mm diameter, 80 mm length inside a 120 mm cube).
    pelvis_landmarks: two ASIS, pubis, acetabulum center.
    """
    kind = PhantomKind(kind)
    pose = pose or RigidTransform.identity(FrameId.P, FrameId.OR)
    if kind == PhantomKind.TUBE_IN_CUBE:
        cube = float(params.pop("cube_size", 120.0))
        length = float(params.pop("tube_length", 80.0))
        diameter = float(params.pop("tube_diameter", 10.0))
        if params:
            raise InvalidParams(f"unknown params {sorted(params)} for tube_in_cube")
        if cube <= 0.0 or length <= 0.0 or diameter <= 0.0:
            raise InvalidParams("cube_size, tube_length and tube_diameter must be positive")
        if length > cube:
            raise InvalidParams("tube cannot be longer than the cube")
        half = cube / 2.0
        landmarks = {
            f"corner_{i}{j}{k}": np.array(
                [(-half, half)[i], (-half, half)[j], (-half, half)[k]]
            )
            for i in (0, 1)
            for j in (0, 1)
            for k in (0, 1)
        }
        landmarks["tube_entry"] = np.array([-length / 2.0, 0.0, 0.0])
        landmarks["tube_exit"] = np.array([length / 2.0, 0.0, 0.0])
        tube = TubePhantomSpec(landmarks["tube_entry"], landmarks["tube_exit"], diameter)
        return Phantom(kind, landmarks, tube, pose)

    defaults = {
        "asis_left": np.array([-110.0, 0.0, 0.0]),
        "asis_right": np.array([110.0, 0.0, 0.0]),
        "pubis": np.array([0.0, 5.0, -100.0]),
        "acetabulum": np.array([70.0, -10.0, -75.0]),
    }
    landmarks = {}
    for name in PELVIS_LANDMARK_NAMES:
        landmarks[name] = np.asarray(params.pop(name, defaults[name]), dtype=float).reshape(3)
    if params:
        raise InvalidParams(f"unknown params {sorted(params)} for pelvis_landmarks")
    try:
        app_from_landmarks(landmarks["asis_left"], landmarks["asis_right"], landmarks["pubis"])
    except CollinearLandmarks as exc:
        raise InvalidParams(f"pelvis landmarks are degenerate: {exc}") from exc
    return Phantom(kind, landmarks, None, pose)


# ---------------------------------------------------------------------------
# Localizer noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalizerModel:
    """Room-level localization noise with configurable mean error norms.

    Rotation: uniformly random axis, folded-Gaussian magnitude whose mean
    equals ``rot_noise_norm`` degrees. Translation: direction drawn from
    per-axis Gaussians (anisotropy per ``per_axis_trans``), folded-Gaussian
    magnitude whose mean equals ``trans_noise_norm`` mm.
    """

    rot_noise_norm: float = 0.75
    trans_noise_norm: float = 8.0
    per_axis_trans: tuple[float, float, float] = (4.0, 5.0, 4.8)
    seed: int = 0

    def __post_init__(self):
        if self.rot_noise_norm < 0.0 or self.trans_noise_norm < 0.0:
            raise InvalidParams("noise norms must be non-negative")
        per_axis = tuple(float(v) for v in self.per_axis_trans)
        if any(v < 0.0 for v in per_axis):
            raise InvalidParams("per-axis translation noise must be non-negative")
        if self.trans_noise_norm > 0.0:
            norm = math.sqrt(sum(v * v for v in per_axis))
            if abs(norm - self.trans_noise_norm) > 0.1 * self.trans_noise_norm:
                raise InvalidParams(
                    f"per-axis norm {norm:.3f} inconsistent with trans_noise_norm "
                    f"{self.trans_noise_norm} (10% tolerance)"
                )
        object.__setattr__(self, "per_axis_trans", per_axis)

    @classmethod
    def zero(cls, seed: int = 0) -> "LocalizerModel":
        return cls(0.0, 0.0, (0.0, 0.0, 0.0), seed)

    @classmethod
    def scaled(cls, rot_deg: float, trans_mm: float, seed: int = 0) -> "LocalizerModel":
        """Scale the default per-axis anisotropy to a new translation norm."""
        factor = trans_mm / 8.0
        return cls(rot_deg, trans_mm, (4.0 * factor, 5.0 * factor, 4.8 * factor), seed)


_HALF_NORMAL_SCALE = math.sqrt(math.pi / 2.0)  # E|N(0, s)| = s * sqrt(2/pi)


def sample_localizer_error(
    model: LocalizerModel, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One pose-error draw: (rotation matrix, translation vector).

    Draw counts are fixed so streams stay aligned across noise settings.
    """
    axis_raw = rng.normal(size=3)
    angle = abs(rng.normal(0.0, math.radians(model.rot_noise_norm) * _HALF_NORMAL_SCALE))
    dir_raw = rng.normal(0.0, 1.0, size=3) * np.asarray(model.per_axis_trans)
    magnitude = abs(rng.normal(0.0, model.trans_noise_norm * _HALF_NORMAL_SCALE))
    r = rotation_from_rotvec(_unit(axis_raw) * angle)
    if model.trans_noise_norm == 0.0:
        t = np.zeros(3)
    else:
        norm = float(np.linalg.norm(dir_raw))
        direction = dir_raw / norm if norm > 0.0 else np.array([1.0, 0.0, 0.0])
        t = magnitude * direction
    return r, t


def look_at_pose(source_position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """C-arm source pose (X->OR) with the viewing axis aimed at ``target``."""
    source = np.asarray(source_position, dtype=float).reshape(3)
    z = _unit(np.asarray(target, dtype=float).reshape(3) - source)
    up = _unit(up)
    if abs(float(up @ z)) > 0.999:
        up = _unit((0.0, 1.0, 0.0)) if abs(z[1]) < 0.9 else _unit((1.0, 0.0, 0.0))
    x = _unit(np.cross(up, z))
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), source, FrameId.X, FrameId.OR)


# ---------------------------------------------------------------------------
# Shots
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LandmarkObservation:
    """Projected landmark pixel (None when behind the source); visible iff
    in front of the source and inside the image bounds."""

    pixel: np.ndarray | None
    visible: bool


@dataclass(frozen=True, eq=False)
class SyntheticShot:
    """One synthetic acquisition: measured frustum, hidden true pose,
    scripted landmark observations, and dose bookkeeping."""

    shot_id: str
    index: int
    frustum: FlyingFrustum
    true_source_pose: RigidTransform
    landmarks: dict[str, LandmarkObservation]
    pixel_noise_sigma: float
    dose_units: float = DOSE_PER_SHOT


# ---------------------------------------------------------------------------
# Dict converters (persistence wire forms; rotations as full matrices so
# replayed values are bit-identical to the recorded ones)
# ---------------------------------------------------------------------------


def pose_to_dict(t: RigidTransform) -> dict:
    return {
        "rotation": t.rotation.tolist(),
        "translation": t.translation.tolist(),
        "from": t.from_frame.value,
        "to": t.to_frame.value,
    }


def pose_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(
        np.asarray(d["rotation"], dtype=float),
        np.asarray(d["translation"], dtype=float),
        FrameId(d["from"]),
        FrameId(d["to"]),
    )


def intrinsics_to_dict(k: CameraIntrinsics) -> dict:
    return {
        "f": k.f,
        "pixel_pitch": k.pixel_pitch,
        "principal_point": k.principal_point.tolist(),
        "image_size": k.image_size.tolist(),
    }


def intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        float(d["f"]), float(d["pixel_pitch"]), d["principal_point"], d["image_size"]
    )


def localizer_to_dict(m: LocalizerModel) -> dict:
    return {
        "rot_noise_norm": m.rot_noise_norm,
        "trans_noise_norm": m.trans_noise_norm,
        "per_axis_trans": list(m.per_axis_trans),
        "seed": m.seed,
    }


def localizer_from_dict(d: dict) -> LocalizerModel:
    return LocalizerModel(
        float(d["rot_noise_norm"]),
        float(d["trans_noise_norm"]),
        tuple(float(v) for v in d["per_axis_trans"]),
        int(d["seed"]),
    )


def phantom_to_dict(p: Phantom) -> dict:
    return {
        "kind": p.kind.value,
        "landmarks": {name: p.landmarks[name].tolist() for name in sorted(p.landmarks)},
        "tube": None
        if p.tube is None
        else {
            "axis_start": p.tube.axis_start.tolist(),
            "axis_end": p.tube.axis_end.tolist(),
            "diameter": p.tube.diameter,
        },
        "pose": pose_to_dict(p.pose),
    }


def phantom_from_dict(d: dict) -> Phantom:
    tube = d.get("tube")
    return Phantom(
        PhantomKind(d["kind"]),
        {name: np.asarray(v, dtype=float) for name, v in d["landmarks"].items()},
        None
        if tube is None
        else TubePhantomSpec(tube["axis_start"], tube["axis_end"], float(tube["diameter"])),
        pose_from_dict(d["pose"]),
    )


def calibration_to_dict(c: CalibrationResult) -> dict:
    return {
        "x": pose_to_dict(c.x),
        "rotation_residual": c.rotation_residual,
        "translation_residual": c.translation_residual,
        "n_pairs": c.n_pairs,
    }


def calibration_from_dict(d: dict) -> CalibrationResult:
    return CalibrationResult(
        pose_from_dict(d["x"]),
        float(d["rotation_residual"]),
        float(d["translation_residual"]),
        int(d["n_pairs"]),
    )


def shot_to_dict(s: SyntheticShot) -> dict:
    return {
        "shot_id": s.shot_id,
        "index": s.index,
        "source_pose": pose_to_dict(s.frustum.source_pose),
        "true_source_pose": pose_to_dict(s.true_source_pose),
        "n": s.frustum.n,
        "timestamp_ms": s.frustum.image_ref.timestamp_ms,
        "image_path": s.frustum.image_ref.path,
        "landmarks": {
            name: {
                "pixel": None if obs.pixel is None else obs.pixel.tolist(),
                "visible": obs.visible,
            }
            for name, obs in sorted(s.landmarks.items())
        },
        "pixel_noise_sigma": s.pixel_noise_sigma,
        "dose_units": s.dose_units,
    }


def shot_from_dict(d: dict, intrinsics: CameraIntrinsics) -> SyntheticShot:
    ref = ImageRef(d["shot_id"], int(d["timestamp_ms"]), d.get("image_path"))
    frustum = FlyingFrustum(intrinsics, pose_from_dict(d["source_pose"]), ref, float(d["n"]))
    landmarks = {
        name: LandmarkObservation(
            None if obs["pixel"] is None else np.asarray(obs["pixel"], dtype=float),
            bool(obs["visible"]),
        )
        for name, obs in d["landmarks"].items()
    }
    return SyntheticShot(
        shot_id=d["shot_id"],
        index=int(d["index"]),
        frustum=frustum,
        true_source_pose=pose_from_dict(d["true_source_pose"]),
        landmarks=landmarks,
        pixel_noise_sigma=float(d["pixel_noise_sigma"]),
        dose_units=float(d["dose_units"]),
    )


def annotation_to_dict(ann_id: str, ann: Annotation) -> dict:
    return {
        "id": ann_id,
        "frustum_id": ann.frustum_id,
        "point": ann.point.tolist(),
        "label": ann.label,
        "author": ann.author,
        "timestamp_ms": ann.timestamp_ms,
    }


def annotation_from_dict(d: dict) -> tuple[str, Annotation]:
    return d["id"], Annotation(
        frustum_id=d["frustum_id"],
        point=np.asarray(d["point"], dtype=float),
        label=d["label"],
        author=d["author"],
        timestamp_ms=int(d["timestamp_ms"]),
    )


def trajectory_to_dict(t: Trajectory3D) -> dict:
    return {
        "point": t.point.tolist(),
        "direction": t.direction.tolist(),
        "residual": t.residual,
    }


def trajectory_from_dict(d: dict) -> Trajectory3D:
    return Trajectory3D(
        np.asarray(d["point"], dtype=float),
        np.asarray(d["direction"], dtype=float),
        float(d["residual"]),
    )


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

SESSION_SCHEMA = "frustum-session/v1"


class Session:
    """Event-sourced record of one simulated procedure.

    All mutations append to the event log with a strictly increasing
    monotone timestamp (a simulator counter, not wall time); replaying the
    log reproduces the identical final state bit-exactly on serialization.
    """

    def __init__(
        self,
        session_id: str,
        phantom: Phantom,
        *,
        seed: int = 0,
        intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
        localizer: LocalizerModel | None = None,
        pixel_noise_sigma: float = 0.0,
        calibration_truth: RigidTransform | None = None,
        calibration: CalibrationResult | None = None,
        _replaying: bool = False,
    ):
        if int(seed) < 0:
            raise InvalidParams("session seed must be non-negative")
        truth = calibration_truth or RigidTransform.identity(FrameId.H, FrameId.X)
        if truth.from_frame != FrameId.H or truth.to_frame != FrameId.X:
            raise InvalidParams("calibration truth must map H->X")
        self.id = str(session_id)
        self.phantom = phantom
        self.seed = int(seed)
        self.intrinsics = intrinsics
        self.localizer = localizer or LocalizerModel.zero()
        self.pixel_noise_sigma = float(pixel_noise_sigma)
        self.calibration_truth = truth
        self.calibration = calibration or CalibrationResult(truth, 0.0, 0.0, 0)
        self.shots: list[SyntheticShot] = []
        self.annotations: dict[str, Annotation] = {}
        self._ann_index: dict[tuple[str, str], str] = {}
        self._ann_counter = 0
        self.plans: list[dict] = []
        self.events: list[dict] = []
        self.outcome: dict | None = None
        self.dose = 0.0
        self._clock = 0
        if not _replaying:
            self._append_event(
                "create",
                {"id": self.id, "phantom_kind": phantom.kind.value, "seed": self.seed},
            )

    # -- event plumbing ----------------------------------------------------

    def _append_event(self, event_type: str, data: dict) -> int:
        t = self._clock
        self.events.append({"t": t, "type": event_type, "data": data})
        self._clock += 1
        return t

    def _shot_by_id(self, frustum_id: str) -> SyntheticShot:
        for s in self.shots:
            if s.shot_id == frustum_id:
                return s
        raise NotFound(f"no shot {frustum_id!r} in session {self.id}")

    def _shot_by_index(self, index: int) -> SyntheticShot:
        if not 0 <= index < len(self.shots):
            raise NotFound(f"shot index {index} out of range (have {len(self.shots)})")
        return self.shots[index]

    # -- mutations ----------------------------------------------------------

    def acquire(
        self,
        commanded_pose: RigidTransform,
        localizer: LocalizerModel | None = None,
        pixel_noise_sigma: float | None = None,
        render_dir=None,
    ) -> SyntheticShot:
        """Take one synthetic X-ray from the commanded true source pose.

        The recorded frustum pose is the *measured* one: localizer error
        composed with the session's calibration error. Landmark pixels are
        the true projections plus Gaussian pixel noise; landmarks behind
        the source carry no pixel.
        """
        if commanded_pose.from_frame != FrameId.X or commanded_pose.to_frame != FrameId.OR:
            raise FrameMismatch("commanded pose must map X->OR")
        loc = localizer if localizer is not None else self.localizer
        sigma = self.pixel_noise_sigma if pixel_noise_sigma is None else float(pixel_noise_sigma)
        index = len(self.shots)
        shot_id = f"shot-{index:03d}"
        rng = np.random.default_rng([self.seed, index])
        r_err, t_err = sample_localizer_error(loc, rng)
        or_t_h_true = compose(commanded_pose, self.calibration_truth)
        or_t_h_meas = compose(
            RigidTransform(r_err, t_err, FrameId.OR, FrameId.OR), or_t_h_true
        )
        measured = compose(or_t_h_meas, invert(self.calibration.x))
        pose_or_to_x = invert(commanded_pose)
        landmarks: dict[str, LandmarkObservation] = {}
        for name in sorted(self.phantom.landmarks):
            noise = rng.normal(0.0, sigma, size=2) if sigma > 0.0 else np.zeros(2)
            p_or = self.phantom.landmark_in_or(name)
            try:
                px = project(self.intrinsics, pose_or_to_x, p_or)
            except BehindSource:
                landmarks[name] = LandmarkObservation(None, False)
                continue
            noisy = px + noise
            landmarks[name] = LandmarkObservation(noisy, self.intrinsics.contains_pixel(noisy))
        t = self._clock
        image_path = None
        if render_dir is not None:
            from .imaging import render_shot_png

            image_path = str(render_shot_png(self.intrinsics, landmarks, render_dir, self.id, shot_id))
        ref = ImageRef(shot_id, timestamp_ms=t, path=image_path)
        frustum = FlyingFrustum(self.intrinsics, measured, ref, n=self.intrinsics.f)
        shot = SyntheticShot(
            shot_id=shot_id,
            index=index,
            frustum=frustum,
            true_source_pose=commanded_pose,
            landmarks=landmarks,
            pixel_noise_sigma=sigma,
        )
        self.shots.append(shot)
        self.dose += shot.dose_units
        self._append_event("acquire", {"shot": shot_to_dict(shot)})
        return shot

    def annotate(
        self, frustum_id: str, point, label: str, author: str = "user"
    ) -> tuple[str, Ray]:
        """Store a 2D annotation and echo its back-projected ray.

        Re-annotating the same (frustum, label) replaces the previous
        annotation so the pair stays unique.
        """
        shot = self._shot_by_id(frustum_id)
        ann = Annotation(frustum_id, point, label, author=author, timestamp_ms=self._clock)
        ray = ray_from_annotation(shot.frustum, ann)  # validates bounds
        ann_id = f"ann-{self._ann_counter:06d}"
        self._ann_counter += 1
        key = (frustum_id, label)
        old = self._ann_index.pop(key, None)
        if old is not None:
            del self.annotations[old]
        self.annotations[ann_id] = ann
        self._ann_index[key] = ann_id
        self._append_event("annotate", {"annotation": annotation_to_dict(ann_id, ann)})
        return ann_id, ray

    def set_near_plane(self, shot_index: int, n: float) -> RigidTransform:
        """Move one shot's interactive image plane; returns the new image pose."""
        shot = self._shot_by_index(shot_index)
        new_frustum = shot.frustum.with_near_plane(float(n))
        pose = image_pose(new_frustum)
        self.shots[shot_index] = replace(shot, frustum=new_frustum)
        self._append_event(
            "set_near_plane",
            {"shot_index": shot_index, "n": float(n), "image_pose": pose_to_dict(pose)},
        )
        return pose

    def plan_trajectory(self, refs: list[str]) -> Trajectory3D:
        """Reconstruct a trajectory from 4 annotation refs (entry+exit on 2 shots)."""
        plan_id = f"plan-{len(self.plans):04d}"
        plan, traj = self._compute_trajectory_plan(refs, plan_id)
        self.plans.append(plan)
        self._append_event("plan", {"plan": plan})
        return traj

    def plan_cup(
        self, target_abduction: float = 40.0, target_anteversion: float = 15.0
    ) -> dict:
        """Triangulate the pelvic landmarks, build the APP, and derive the
        target cup axis at the requested angles."""
        plan_id = f"plan-{len(self.plans):04d}"
        plan = self._compute_cup_plan(target_abduction, target_anteversion, plan_id)
        self.plans.append(plan)
        self._append_event("plan", {"plan": plan})
        return plan

    def plan_tool(self, tool_kind: str, pose: RigidTransform) -> dict:
        """Record a virtual-tool pose; projections/consensus are computed by
        the caller (the service) — the session just logs the plan."""
        plan_id = f"plan-{len(self.plans):04d}"
        plan = {
            "plan_id": plan_id,
            "kind": "tool",
            "tool_kind": tool_kind,
            "pose": pose_to_dict(pose),
        }
        self.plans.append(plan)
        self._append_event("plan", {"plan": plan})
        return plan

    def execute_kwire(self, trajectory: Trajectory3D):
        """Score an executed wire trajectory against the true tube geometry."""
        metrics = self._compute_kwire_metrics(trajectory_to_dict(trajectory))
        self.outcome = metrics
        self._append_event(
            "execute", {"kind": "kwire", "trajectory": trajectory_to_dict(trajectory),
                        "metrics": metrics}
        )
        return metrics

    def execute_cup(self, executed_axis, cup_center) -> dict:
        """Score an executed cup axis against the true APP and safe zone."""
        axis = np.asarray(executed_axis, dtype=float).reshape(3).tolist()
        center = np.asarray(cup_center, dtype=float).reshape(3).tolist()
        targets = self._latest_cup_targets()
        metrics = self._compute_cup_metrics(axis, center, targets)
        self.outcome = metrics
        self._append_event(
            "execute",
            {"kind": "cup", "executed_axis": axis, "cup_center": center, "metrics": metrics},
        )
        return metrics

    # -- deterministic computations shared with replay verification ---------

    def _compute_trajectory_plan(self, refs: list[str], plan_id: str) -> tuple[dict, Trajectory3D]:
        if len(refs) != 4:
            raise InvalidParams(f"a trajectory plan needs exactly 4 annotation refs, got {len(refs)}")
        by_frustum: dict[str, dict[str, Annotation]] = {}
        for ref in refs:
            if ref not in self.annotations:
                raise NotFound(f"annotation {ref!r} not found")
            ann = self.annotations[ref]
            by_frustum.setdefault(ann.frustum_id, {})[ann.label] = ann
        if len(by_frustum) != 2 or any(set(d) != {ENTRY, EXIT} for d in by_frustum.values()):
            raise InvalidParams("refs must be entry and exit annotations on two distinct shots")
        fid_i, fid_j = sorted(by_frustum)
        fr_i = self._shot_by_id(fid_i).frustum
        fr_j = self._shot_by_id(fid_j).frustum
        traj = trajectory_from_frustum_pair(
            by_frustum[fid_i][ENTRY],
            by_frustum[fid_i][EXIT],
            by_frustum[fid_j][ENTRY],
            by_frustum[fid_j][EXIT],
            fr_i,
            fr_j,
        )
        plan = {
            "plan_id": plan_id,
            "kind": "trajectory",
            "refs": sorted(refs),
            "trajectory": trajectory_to_dict(traj),
        }
        return plan, traj

    def _compute_cup_plan(
        self, target_abduction: float, target_anteversion: float, plan_id: str
    ) -> dict:
        points: dict[str, dict] = {}
        for name in PELVIS_LANDMARK_NAMES:
            label = landmark_label(name)
            anns = [
                (ann.frustum_id, ann_id)
                for ann_id, ann in self.annotations.items()
                if ann.label == label
            ]
            if len(anns) < 2:
                raise InsufficientData(
                    f"landmark {name!r} needs annotations in >= 2 shots, found {len(anns)}"
                )
            rays = []
            for fid, ann_id in sorted(anns):
                rays.append(ray_from_annotation(self._shot_by_id(fid).frustum, self.annotations[ann_id]))
            point, residual = triangulate(rays)
            points[name] = {"point": point.tolist(), "residual": residual}
        app = app_from_landmarks(
            points["asis_left"]["point"], points["asis_right"]["point"], points["pubis"]["point"]
        )
        target_axis = axis_from_angles(float(target_abduction), float(target_anteversion), app)
        return {
            "plan_id": plan_id,
            "kind": "cup",
            "target_abduction": float(target_abduction),
            "target_anteversion": float(target_anteversion),
            "landmarks": points,
            "app": {
                "origin": app.origin.tolist(),
                "lateral": app.lateral.tolist(),
                "anterior": app.anterior.tolist(),
                "longitudinal": app.longitudinal.tolist(),
            },
            "target_axis": target_axis.tolist(),
            "cup_center": points["acetabulum"]["point"],
        }

    def _compute_kwire_metrics(self, trajectory_dict: dict) -> dict:
        err = kwire_error(trajectory_from_dict(trajectory_dict), self.phantom.tube_in_or())
        return {
            "kind": "kwire",
            "entry_dist_mm": err.entry_dist,
            "exit_dist_mm": err.exit_dist,
            "mean_mm": err.mean,
            "breached": err.breached,
        }

    def _latest_cup_targets(self) -> tuple[float, float]:
        for plan in reversed(self.plans):
            if plan["kind"] == "cup":
                return float(plan["target_abduction"]), float(plan["target_anteversion"])
        raise InvalidParams("no cup plan recorded; cannot score an execution")

    def _compute_cup_metrics(self, axis: list, center: list, targets: tuple[float, float]) -> dict:
        app_true = self.phantom.app_in_or()
        cup = cup_angles(np.asarray(axis, dtype=float), app_true)
        true_center = self.phantom.landmark_in_or("acetabulum")
        return {
            "kind": "cup",
            "abduction_deg": cup.abduction,
            "anteversion_deg": cup.anteversion,
            "abduction_err_deg": abs(cup.abduction - targets[0]),
            "anteversion_err_deg": abs(cup.anteversion - targets[1]),
            "cup_center_err_mm": float(
                np.linalg.norm(np.asarray(center, dtype=float) - true_center)
            ),
            "in_safe_zone": in_safe_zone(cup),
        }

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SESSION_SCHEMA,
            "id": self.id,
            "seed": self.seed,
            "intrinsics": intrinsics_to_dict(self.intrinsics),
            "localizer": localizer_to_dict(self.localizer),
            "pixel_noise_sigma": self.pixel_noise_sigma,
            "phantom": phantom_to_dict(self.phantom),
            "calibration_truth": pose_to_dict(self.calibration_truth),
            "calibration": calibration_to_dict(self.calibration),
            "shots": [shot_to_dict(s) for s in self.shots],
            "annotations": [
                annotation_to_dict(ann_id, self.annotations[ann_id])
                for ann_id in sorted(self.annotations)
            ],
            "plans": self.plans,
            "events": self.events,
            "outcome": self.outcome,
            "dose": self.dose,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Session":
        if d.get("schema") != SESSION_SCHEMA:
            from .errors import SchemaMismatch

            raise SchemaMismatch(
                f"unsupported session schema {d.get('schema')!r}, expected {SESSION_SCHEMA}"
            )
        intrinsics = intrinsics_from_dict(d["intrinsics"])
        session = cls(
            d["id"],
            phantom_from_dict(d["phantom"]),
            seed=int(d["seed"]),
            intrinsics=intrinsics,
            localizer=localizer_from_dict(d["localizer"]),
            pixel_noise_sigma=float(d["pixel_noise_sigma"]),
            calibration_truth=pose_from_dict(d["calibration_truth"]),
            calibration=calibration_from_dict(d["calibration"]),
            _replaying=True,
        )
        session.shots = [shot_from_dict(s, intrinsics) for s in d["shots"]]
        for ann_dict in d["annotations"]:
            ann_id, ann = annotation_from_dict(ann_dict)
            session.annotations[ann_id] = ann
            session._ann_index[(ann.frustum_id, ann.label)] = ann_id
        session.plans = [dict(p) for p in d["plans"]]
        session.events = [dict(e) for e in d["events"]]
        session.outcome = d["outcome"]
        session.dose = float(d["dose"])
        session._clock = len(session.events)
        session._ann_counter = sum(1 for e in session.events if e["type"] == "annotate")
        return session

    # -- replay --------------------------------------------------------------

    def rebuild_from_events(self) -> "Session":
        """Re-apply the event log on a fresh session, re-running every
        deterministic computation and checking it against the logged output."""
        fresh = Session(
            self.id,
            self.phantom,
            seed=self.seed,
            intrinsics=self.intrinsics,
            localizer=self.localizer,
            pixel_noise_sigma=self.pixel_noise_sigma,
            calibration_truth=self.calibration_truth,
            calibration=self.calibration,
            _replaying=True,
        )
        for event in self.events:
            fresh._apply_event(event)
        return fresh

    def _apply_event(self, event: dict) -> None:
        t, event_type, data = event["t"], event["type"], event["data"]
        if t != self._clock:
            raise CorruptLog(f"event timestamps not contiguous at t={t}")
        if event_type == "create":
            pass
        elif event_type == "acquire":
            shot = shot_from_dict(data["shot"], self.intrinsics)
            if shot.index != len(self.shots):
                raise CorruptLog(f"acquire event out of order at t={t}")
            self.shots.append(shot)
            self.dose += shot.dose_units
        elif event_type == "annotate":
            ann_id, ann = annotation_from_dict(data["annotation"])
            key = (ann.frustum_id, ann.label)
            old = self._ann_index.pop(key, None)
            if old is not None:
                del self.annotations[old]
            self.annotations[ann_id] = ann
            self._ann_index[key] = ann_id
            self._ann_counter += 1
        elif event_type == "set_near_plane":
            index = int(data["shot_index"])
            shot = self._shot_by_index(index)
            new_frustum = shot.frustum.with_near_plane(float(data["n"]))
            pose = image_pose(new_frustum)
            if canonical_json(pose_to_dict(pose)) != canonical_json(data["image_pose"]):
                raise CorruptLog(f"set_near_plane at t={t} does not reproduce its image pose")
            self.shots[index] = replace(shot, frustum=new_frustum)
        elif event_type == "plan":
            logged = data["plan"]
            if logged["kind"] == "trajectory":
                recomputed, _ = self._compute_trajectory_plan(
                    list(logged["refs"]), logged["plan_id"]
                )
            elif logged["kind"] == "cup":
                recomputed = self._compute_cup_plan(
                    float(logged["target_abduction"]),
                    float(logged["target_anteversion"]),
                    logged["plan_id"],
                )
            elif logged["kind"] == "tool":
                recomputed = logged
            else:
                raise CorruptLog(f"unknown plan kind {logged.get('kind')!r}")
            if canonical_json(recomputed) != canonical_json(logged):
                raise CorruptLog(
                    f"plan {logged['plan_id']} does not reproduce bit-exactly on replay"
                )
            self.plans.append(logged)
        elif event_type == "execute":
            if data["kind"] == "kwire":
                metrics = self._compute_kwire_metrics(data["trajectory"])
            elif data["kind"] == "cup":
                targets = self._latest_cup_targets()
                metrics = self._compute_cup_metrics(
                    data["executed_axis"], data["cup_center"], targets
                )
            else:
                raise CorruptLog(f"unknown execute kind {data.get('kind')!r}")
            if canonical_json(metrics) != canonical_json(data["metrics"]):
                raise CorruptLog(f"execute at t={t} does not reproduce its metrics")
            self.outcome = data["metrics"]
        else:
            raise CorruptLog(f"unknown event type {event_type!r}")
        self.events.append(event)
        self._clock += 1
