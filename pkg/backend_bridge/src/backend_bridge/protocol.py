"""Server-side implementation of the NDJSON score protocol.

One JSON object per line, UTF-8.  Tensor payloads are base64-encoded
little-endian float32 in C order.  Frames are serialized with compact
separators and insertion-ordered keys, which pins the byte layout that
the golden-transcript conformance test checks.
"""

from __future__ import annotations

import base64
import binascii
import json
from typing import Any

import numpy as np

PROTO_VERSION = 1
MAX_LINE_BYTES = 64 * 1024 * 1024


class ProtocolViolation(Exception):
    """Request problem that should be answered with an error frame."""


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(text: str, shape: tuple[int, ...], what: str = "payload") -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, AttributeError) as exc:
        raise ProtocolViolation(f"{what}: malformed base64 ({exc})") from exc
    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise ProtocolViolation(f"{what}: expected {4 * count} bytes for shape {list(shape)}, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def dump_frame(frame: dict[str, Any]) -> bytes:
    return (json.dumps(frame, separators=(",", ":")) + "\n").encode("utf-8")


def hello_response(returns: str, shape: tuple[int, int, int]) -> dict[str, Any]:
    return {"kind": "hello", "proto": PROTO_VERSION, "returns": returns, "shape": list(shape)}


def score_response(req_id: int, shape: tuple[int, int, int], payload: np.ndarray) -> dict[str, Any]:
    return {"kind": "score", "id": req_id, "shape": list(shape), "score": encode_f32(payload)}


def error_response(req_id: int, message: str) -> dict[str, Any]:
    return {"kind": "error", "id": req_id, "error": message}


def parse_line(line: bytes) -> dict[str, Any]:
    try:
        frame = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"malformed JSON: {exc}") from exc
    if not isinstance(frame, dict):
        raise ProtocolViolation(f"frame must be a JSON object, got {type(frame).__name__}")
    return frame


def parse_score_request(frame: dict[str, Any], shape: tuple[int, int, int]) -> dict[str, Any]:
    """Validate a score frame against the negotiated shape; decode payloads."""
    req_id = frame.get("id")
    if not isinstance(req_id, int) or req_id < 0:
        raise ProtocolViolation(f"score frame id must be a non-negative integer, got {req_id!r}")
    if frame.get("shape") != list(shape):
        raise ProtocolViolation(f"shape {frame.get('shape')!r} does not match negotiated {list(shape)}")
    t = frame.get("t")
    if not isinstance(t, int) or t < 1:
        raise ProtocolViolation(f"t must be a positive integer, got {t!r}")
    x_t = decode_f32(frame.get("x_t", ""), shape, "x_t")
    control = None
    if "control_image" in frame:
        control = decode_f32(frame["control_image"], shape, "control_image")
    return {
        "id": req_id,
        "t": t,
        "prompt": str(frame.get("prompt", "")),
        "negative_prompt": str(frame.get("negative_prompt", "")),
        "cfg_weight": float(frame.get("cfg_weight", 7.5)),
        "control_weight": float(frame.get("control_weight", 1.0)),
        "x_t": x_t,
        "control_image": control,
    }
