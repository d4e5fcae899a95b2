"""frustumlab: X-ray viewing-frustum geometry for image-guided procedures.

Hand-eye co-calibration of an X-ray source with a gantry-mounted visual
tracker, near-plane image placement inside per-acquisition frustums,
annotation-based two-view trajectory planning, hip-cup orientation
metrics, and a virtual operating room with deterministic session
recording/replay.
"""

from .clinical import (
    DEFAULT_SAFE_ZONE,
    APPFrame,
    CupOrientation,
    KwireError,
    SafeZone,
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
    CoplanarViews,
    CorruptLog,
    DegenerateMotion,
    DegenerateProjection,
    FrameMismatch,
    FrustumLabError,
    InsufficientData,
    InvalidParams,
    NearPlaneOutOfRange,
    NoCrossing,
    NotFound,
    ParallelRays,
    SchemaMismatch,
)
from .frustum import (
    CoverageReport,
    FlyingFrustum,
    FrustumAlignment,
    ImageRef,
    alignment_to,
    frustum_contains,
    frustum_project,
    image_pose,
    interlock,
    scale_to_near_plane,
)
from .geometry import (
    CameraIntrinsics,
    FrameId,
    Ray,
    RigidTransform,
    UnitQuaternion,
    compose,
    invert,
    project,
    quat_from_axis_angle,
    quat_from_rotation,
    quat_multiply,
    relative_rotation_angle_deg,
    rotation_about,
    rotation_angle_deg,
    rotation_axis,
    rotation_from_quat,
    rotation_from_rotvec,
)
from .handeye import (
    CalibrationResult,
    MotionRange,
    NoiseModel,
    PosePair,
    SamplingRow,
    calibrate,
    generate_pose_pairs,
    sampling_experiment,
    solve_rotation,
    solve_translation,
)
from .planning import (
    Annotation,
    ToolProjection,
    Trajectory3D,
    VirtualTool,
    consensus_residual,
    landmark_label,
    make_tool,
    project_tool,
    ray_from_annotation,
    trajectory_from_frustum_pair,
    trajectory_from_rays,
    triangulate,
)
from .session_io import load_pairs, load_session, replay, save_pairs, save_session
from .simulator import (
    DEFAULT_INTRINSICS,
    DOSE_PER_SHOT,
    LandmarkObservation,
    LocalizerModel,
    Phantom,
    PhantomKind,
    Session,
    SyntheticShot,
    build_phantom,
    look_at_pose,
    sample_localizer_error,
)

__version__ = "0.1.0"
