"""Persistence for sessions and pose-pair datasets.

Both file kinds share the canonical-JSON conventions: versioned schema
field, floats at 17 significant digits, and an embedded SHA-256 content
hash for corruption detection.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import CorruptLog, NotFound, SchemaMismatch
from .handeye import NoiseModel, PosePair
from .serialization import canonical_json, content_hash, dump_with_hash
from .simulator import Session, pose_from_dict, pose_to_dict

PAIRS_SCHEMA = "frustum-pairs/v1"


def _read_payload(path, supported_schema: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise NotFound(f"file not found: {path}")
    text = path.read_text()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptLog(f"{path} is not parseable JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CorruptLog(f"{path} does not contain an object")
    schema = payload.get("schema")
    if schema != supported_schema:
        raise SchemaMismatch(f"{path} declares schema {schema!r}, expected {supported_schema!r}")
    stored = payload.pop("content_hash", None)
    if stored is None:
        raise CorruptLog(f"{path} is missing its content hash")
    actual = content_hash(payload)
    if stored != actual:
        raise CorruptLog(f"{path} failed its content-hash check")
    return payload


def save_session(session: Session, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_with_hash(session.to_dict()))
    return path


def load_session(path) -> Session:
    """Parse and integrity-check a session file (no recomputation)."""
    from .simulator import SESSION_SCHEMA

    return Session.from_dict(_read_payload(path, SESSION_SCHEMA))


def replay(path, verify: bool = True) -> Session:
    """Reconstruct a session from its file.

    With ``verify`` the event log is re-applied on a fresh session,
    re-running all deterministic computations and requiring the final
    state to match the stored one bit-exactly on serialized form.
    """
    session = load_session(path)
    if verify:
        rebuilt = session.rebuild_from_events()
        if canonical_json(rebuilt.to_dict()) != canonical_json(session.to_dict()):
            raise CorruptLog(f"{path}: replayed state does not match the stored state")
    return session


# ---------------------------------------------------------------------------
# Pose-pair datasets
# ---------------------------------------------------------------------------


def save_pairs(
    pairs: list[PosePair],
    path,
    ground_truth_x=None,
    noise: NoiseModel | None = None,
) -> Path:
    """Persist a pose-pair dataset, optionally with its generating ground truth."""
    payload = {
        "schema": PAIRS_SCHEMA,
        "pairs": [{"a": pose_to_dict(p.a), "b": pose_to_dict(p.b)} for p in pairs],
        "ground_truth_x": None if ground_truth_x is None else pose_to_dict(ground_truth_x),
        "noise": None
        if noise is None
        else {"rot_sigma": noise.rot_sigma, "trans_sigma": noise.trans_sigma, "seed": noise.seed},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_with_hash(payload))
    return path


def load_pairs(path):
    """Load a pose-pair dataset; returns (pairs, ground_truth_x or None)."""
    payload = _read_payload(path, PAIRS_SCHEMA)
    pairs = [
        PosePair(pose_from_dict(p["a"]), pose_from_dict(p["b"])) for p in payload["pairs"]
    ]
    truth = payload.get("ground_truth_x")
    return pairs, None if truth is None else pose_from_dict(truth)
