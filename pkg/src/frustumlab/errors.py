"""Domain errors raised across the toolkit.

Every error carries a wire-level ``code`` so the HTTP service and CLI can
map exceptions to structured API errors without per-call bookkeeping.
"""

from __future__ import annotations


class FrustumLabError(Exception):
    """Base class for all domain errors."""

    code = "bad_request"

    def __init__(self, message: str = "", **detail):
        super().__init__(message)
        self.detail = detail


class FrameMismatch(FrustumLabError):
    """Transform chaining attempted across non-matching frames."""

    code = "frame_mismatch"


class BehindSource(FrustumLabError):
    """Point has non-positive depth along the source-to-detector axis."""

    code = "bad_request"


class InsufficientData(FrustumLabError):
    """Too few observations to pose the problem at all."""

    code = "bad_request"


class DegenerateMotion(FrustumLabError):
    """Motion set does not constrain the calibration (parallel axes, rank loss)."""

    code = "degenerate_motion"


class NearPlaneOutOfRange(FrustumLabError):
    """Near-plane distance outside [0, f]."""

    code = "near_plane_out_of_range"


class ParallelRays(FrustumLabError):
    """Rays too close to parallel to intersect meaningfully."""

    code = "parallel_rays"


class CoplanarViews(FrustumLabError):
    """Two views whose annotation planes coincide; trajectory is unconstrained."""

    code = "coplanar_views"


class CollinearLandmarks(FrustumLabError):
    """Three landmarks do not span a plane."""

    code = "bad_request"


class DegenerateProjection(FrustumLabError):
    """Axis (anti)parallel to the anterior direction; in-plane angle undefined."""

    code = "bad_request"


class NoCrossing(FrustumLabError):
    """Wire parallel to the tube end planes; no intersection exists."""

    code = "bad_request"


class InvalidParams(FrustumLabError):
    """Structurally invalid parameters for the requested operation."""

    code = "bad_request"


class SchemaMismatch(FrustumLabError):
    """Persisted file declares an unsupported schema version."""

    code = "schema_mismatch"


class CorruptLog(FrustumLabError):
    """Persisted file fails its integrity or replay-consistency checks."""

    code = "schema_mismatch"


class NotFound(FrustumLabError):
    """Referenced session, shot, or file does not exist."""

    code = "not_found"
