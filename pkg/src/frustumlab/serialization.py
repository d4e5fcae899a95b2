"""Canonical JSON encoding for persisted files.

Keys are sorted, floats are written with 17 significant digits (exact
round trip for float64), zeros are normalized, and a SHA-256 content hash
covers everything except the hash field itself. Two states serialize to
the same bytes iff they are numerically identical, which is what the
record/replay determinism guarantees rest on.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite floats cannot be serialized")
    if x == 0.0:
        return "0"
    return format(x, ".17g")


def _encode(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(repr(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(str(obj), ensure_ascii=True))
    elif isinstance(obj, np.ndarray):
        _encode(obj.tolist(), out)
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {type(key).__name__}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    else:
        raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def canonical_json(obj) -> str:
    out: list = []
    _encode(obj, out)
    return "".join(out)


def content_hash(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("ascii")).hexdigest()


def dump_with_hash(payload: dict) -> str:
    """Serialize a payload with its content hash embedded; newline-terminated."""
    full = dict(payload)
    full["content_hash"] = content_hash(payload)
    return canonical_json(full) + "\n"
