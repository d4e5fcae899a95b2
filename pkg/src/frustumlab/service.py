"""HTTP service exposing session operations to the planning UI.

JSON request/response over HTTP/1.1. Poses travel as unit quaternion
(s, v) plus translation in mm. Errors are structured ApiError payloads
with a stable ``code``; every module error maps onto one code. Sessions
are durable: each mutation is persisted to the state directory before the
response is sent, and a restarted service serves identical replay logs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .errors import FrustumLabError, InsufficientData, NotFound
from .experiments import CALIBRATION_TRUTH
from .frustum import image_pose
from .geometry import FrameId, RigidTransform, UnitQuaternion, quat_from_rotation, rotation_from_quat
from .handeye import CalibrationResult, NoiseModel, calibrate, generate_pose_pairs
from .planning import VirtualTool, consensus_residual, make_tool, project_tool
from .session_io import save_session
from .simulator import (
    LocalizerModel,
    Session,
    build_phantom,
    pose_from_dict,
)

_STATUS = {"not_found": 404, "bad_request": 400}


@dataclass(frozen=True)
class ApiError:
    code: str
    message: str
    detail: dict

    def response(self) -> JSONResponse:
        return JSONResponse(
            status_code=_STATUS.get(self.code, 422),
            content={"code": self.code, "message": self.message, "detail": self.detail},
        )


# ---------------------------------------------------------------------------
# Wire forms
# ---------------------------------------------------------------------------


class QuatWire(BaseModel):
    s: float
    v: tuple[float, float, float]


class PoseWire(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    rotation: QuatWire
    translation: tuple[float, float, float]
    from_frame: str | None = Field(None, alias="from")
    to_frame: str | None = Field(None, alias="to")


def pose_from_wire(w: PoseWire, default_from: FrameId, default_to: FrameId) -> RigidTransform:
    q = UnitQuaternion(w.rotation.s, np.asarray(w.rotation.v))
    return RigidTransform(
        rotation_from_quat(q),
        np.asarray(w.translation),
        FrameId(w.from_frame) if w.from_frame else default_from,
        FrameId(w.to_frame) if w.to_frame else default_to,
    )


def pose_to_wire(t: RigidTransform) -> dict:
    q = quat_from_rotation(t.rotation)
    return {
        "rotation": {"s": q.s, "v": q.v.tolist()},
        "translation": t.translation.tolist(),
        "from": t.from_frame.value,
        "to": t.to_frame.value,
    }


class LocalizerWire(BaseModel):
    rot_noise_norm: float = 0.0
    trans_noise_norm: float = 0.0
    per_axis_trans: tuple[float, float, float] | None = None


class CalibrationWire(BaseModel):
    mode: str = "perfect"  # "perfect" | "solved"
    rot_sigma: float = 0.0
    trans_sigma: float = 0.0
    n_pairs: int = 120
    seed: int = 0


class CreateSessionBody(BaseModel):
    phantom_kind: str
    phantom_params: dict = Field(default_factory=dict)
    phantom_pose: PoseWire | None = None
    seed: int = 0
    pixel_noise_sigma: float = 0.0
    localizer: LocalizerWire | None = None
    calibration: CalibrationWire | None = None


class AcquireBody(BaseModel):
    pose: PoseWire
    pixel_noise_sigma: float | None = None


class AnnotationBody(BaseModel):
    frustum_id: str
    point: tuple[float, float]
    label: str
    author: str = "user"


class TrajectoryPlanBody(BaseModel):
    annotations: list[str]


class ToolPlanBody(BaseModel):
    kind: str = "kwire"
    pose: PoseWire
    model_points: list[tuple[float, float, float]] | None = None


class NearPlaneBody(BaseModel):
    n: float


# ---------------------------------------------------------------------------
# Session store
# ---------------------------------------------------------------------------


class SessionStore:
    """Durable session registry: one JSON file per session under the state
    directory, single-writer locking per session id."""

    def __init__(self, state_dir: Path):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.image_dir = self.state_dir / "images"
        self._cache: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _path(self, session_id: str) -> Path:
        return self.state_dir / f"{session_id}.json"

    def lock(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def new_id(self) -> str:
        with self._registry_lock:
            k = len(list(self.state_dir.glob("sess-*.json")))
            while self._path(f"sess-{k:04d}").exists():
                k += 1
            return f"sess-{k:04d}"

    def get(self, session_id: str) -> Session:
        if session_id not in self._cache:
            path = self._path(session_id)
            if not path.exists():
                raise NotFound(f"session {session_id!r} does not exist")
            from .session_io import load_session

            self._cache[session_id] = load_session(path)
        return self._cache[session_id]

    def put(self, session: Session) -> None:
        self._cache[session.id] = session
        save_session(session, self._path(session.id))


def _solved_calibration(wire: CalibrationWire) -> CalibrationResult:
    pairs = generate_pose_pairs(
        CALIBRATION_TRUTH,
        wire.n_pairs,
        noise=NoiseModel(wire.rot_sigma, wire.trans_sigma, wire.seed),
    )
    return calibrate(pairs)


def _shot_wire(session: Session, shot) -> dict:
    return {
        "shot_id": shot.shot_id,
        "index": shot.index,
        "timestamp_ms": shot.frustum.image_ref.timestamp_ms,
        "source_pose": pose_to_wire(shot.frustum.source_pose),
        "n": shot.frustum.n,
        "f": shot.frustum.intrinsics.f,
        "landmarks": {
            name: {
                "pixel": None if obs.pixel is None else obs.pixel.tolist(),
                "visible": obs.visible,
            }
            for name, obs in sorted(shot.landmarks.items())
        },
        "image_url": f"/sessions/{session.id}/shots/{shot.index}/image"
        if shot.frustum.image_ref.path
        else None,
        "dose_units": shot.dose_units,
    }


def _tool_from_body(body: ToolPlanBody, pose: RigidTransform) -> VirtualTool:
    if body.model_points is not None:
        return VirtualTool(np.asarray(body.model_points), pose, kind=body.kind)
    return make_tool(body.kind, pose)


def _consensus_targets(session: Session):
    """Entry/exit annotation polylines per shot, for shots that have both."""
    frustums, targets = [], []
    for shot in session.shots:
        by_label = {
            ann.label: ann
            for ann in session.annotations.values()
            if ann.frustum_id == shot.shot_id
        }
        if "entry" in by_label and "exit" in by_label:
            frustums.append(shot.frustum)
            targets.append(np.stack([by_label["entry"].point, by_label["exit"].point]))
    return frustums, targets


def create_app(state_dir, ui_dir=None) -> FastAPI:
    store = SessionStore(Path(state_dir))
    app = FastAPI(title="frustumlab service", version="0.1.0")

    @app.exception_handler(FrustumLabError)
    async def domain_error(request: Request, exc: FrustumLabError):
        return ApiError(exc.code, str(exc), exc.detail).response()

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return ApiError("bad_request", str(exc), {}).response()

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return ApiError("bad_request", "malformed request body", {"errors": exc.errors()}).response()

    @app.get("/")
    def root():
        return {"service": "frustumlab", "version": "0.1.0"}

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        localizer = LocalizerModel.zero()
        if body.localizer is not None:
            w = body.localizer
            if w.per_axis_trans is not None:
                localizer = LocalizerModel(w.rot_noise_norm, w.trans_noise_norm, w.per_axis_trans)
            else:
                localizer = LocalizerModel.scaled(w.rot_noise_norm, w.trans_noise_norm)
        calibration = None
        if body.calibration is not None and body.calibration.mode == "solved":
            calibration = _solved_calibration(body.calibration)
        pose = None
        if body.phantom_pose is not None:
            pose = pose_from_wire(body.phantom_pose, FrameId.P, FrameId.OR)
        phantom = build_phantom(body.phantom_kind, pose=pose, **body.phantom_params)
        session = Session(
            store.new_id(),
            phantom,
            seed=body.seed,
            localizer=localizer,
            pixel_noise_sigma=body.pixel_noise_sigma,
            calibration_truth=CALIBRATION_TRUTH,
            calibration=calibration,
        )
        store.put(session)
        return {"session_id": session.id, "phantom_kind": phantom.kind.value}

    @app.post("/sessions/{sid}/acquire")
    def acquire(sid: str, body: AcquireBody):
        with store.lock(sid):
            session = store.get(sid)
            pose = pose_from_wire(body.pose, FrameId.X, FrameId.OR)
            shot = session.acquire(
                pose, pixel_noise_sigma=body.pixel_noise_sigma, render_dir=store.image_dir
            )
            store.put(session)
            out = _shot_wire(session, shot)
            out["dose_total"] = session.dose
            return out

    @app.post("/sessions/{sid}/annotations")
    def annotate(sid: str, body: AnnotationBody):
        with store.lock(sid):
            session = store.get(sid)
            ann_id, ray = session.annotate(body.frustum_id, body.point, body.label, body.author)
            store.put(session)
            return {
                "annotation_id": ann_id,
                "ray": {"origin": ray.origin.tolist(), "direction": ray.direction.tolist()},
            }

    @app.post("/sessions/{sid}/plan/trajectory")
    def plan_trajectory(sid: str, body: TrajectoryPlanBody):
        with store.lock(sid):
            session = store.get(sid)
            traj = session.plan_trajectory(body.annotations)
            store.put(session)
            return {
                "plan_id": session.plans[-1]["plan_id"],
                "point": traj.point.tolist(),
                "direction": traj.direction.tolist(),
                "residual": traj.residual,
            }

    @app.post("/sessions/{sid}/plan/tool")
    def plan_tool(sid: str, body: ToolPlanBody):
        with store.lock(sid):
            session = store.get(sid)
            pose = pose_from_wire(body.pose, FrameId.T, FrameId.OR)
            tool = _tool_from_body(body, pose)
            frustums, targets = _consensus_targets(session)
            if len(frustums) < 2:
                raise InsufficientData(
                    "alignment consensus needs entry+exit annotations on >= 2 shots"
                )
            score = consensus_residual(tool, targets, frustums)
            projections = project_tool(tool, [s.frustum for s in session.shots])
            session.plan_tool(body.kind, pose)
            store.put(session)
            return {
                "plan_id": session.plans[-1]["plan_id"],
                "consensus_residual_mm": score,
                "projections": [
                    {
                        "shot_id": shot.shot_id,
                        "pixels": [
                            None if not v else px.tolist()
                            for px, v in zip(proj.pixels, proj.visible)
                        ],
                        "visible": proj.visible.tolist(),
                    }
                    for shot, proj in zip(session.shots, projections)
                ],
            }

    @app.patch("/sessions/{sid}/shots/{index}/near_plane")
    def set_near_plane(sid: str, index: int, body: NearPlaneBody):
        with store.lock(sid):
            session = store.get(sid)
            pose = session.set_near_plane(index, body.n)
            store.put(session)
            return {
                "shot_index": index,
                "n": session.shots[index].frustum.n,
                "image_pose": pose_to_wire(pose),
            }

    @app.get("/sessions/{sid}/replay")
    def replay_log(sid: str):
        with store.lock(sid):
            session = store.get(sid)
            return {"session_id": session.id, "events": session.events}

    @app.get("/sessions/{sid}/metrics")
    def metrics(sid: str):
        with store.lock(sid):
            session = store.get(sid)
            if session.outcome is not None:
                return {"session_id": session.id, "metrics": session.outcome}
            for plan in reversed(session.plans):
                if plan["kind"] == "trajectory":
                    return {
                        "session_id": session.id,
                        "metrics": session._compute_kwire_metrics(plan["trajectory"]),
                    }
                if plan["kind"] == "tool":
                    pose = pose_from_dict(plan["pose"])
                    try:
                        targets = session._latest_cup_targets()
                    except FrustumLabError:
                        targets = (40.0, 15.0)
                    return {
                        "session_id": session.id,
                        "metrics": session._compute_cup_metrics(
                            pose.rotation[:, 2].tolist(), pose.translation.tolist(), targets
                        ),
                    }
            raise NotFound("no plan recorded; nothing to score")

    @app.get("/sessions/{sid}/shots/{index}/image")
    def shot_image(sid: str, index: int):
        with store.lock(sid):
            session = store.get(sid)
            shot = session._shot_by_index(index)
        path = shot.frustum.image_ref.path
        if path is None or not Path(path).exists():
            raise NotFound(f"no rendered image for shot {index}")
        return FileResponse(path, media_type="image/png")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
