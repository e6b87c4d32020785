"""Wire-protocol client for external score backends.

The protocol is newline-delimited JSON over a stream socket, one UTF-8
encoded object per line.  Tensor payloads travel as base64-encoded
little-endian float32 in C order.

Handshake::

    client -> {"kind": "hello", "proto": 1}
    server -> {"kind": "hello", "proto": 1, "returns": "score"|"eps",
               "shape": [C, H, W]}

Scoring::

    client -> {"kind": "score", "id": u64, "t": int, "prompt": str,
               "negative_prompt": str, "cfg_weight": f64,
               "control_weight": f64, "shape": [C, H, W],
               "x_t": "<base64>", "control_image": "<base64>"?}
    server -> {"kind": "score", "id": u64, "shape": [C, H, W],
               "score": "<base64>"}
            | {"kind": "error", "id": u64, "error": str}

Backends normally return a score that is already guidance-combined and
conditioned; a backend that speaks noise predictions instead declares
``"returns": "eps"`` in its hello, and this client converts each payload
to a score (the conversion lives nowhere else on the client side).
"""

from __future__ import annotations

import base64
import binascii
import itertools
import json
import socket
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import (
    BackendFrameError,
    ConfigError,
    IdMismatchError,
    PayloadDecodeError,
    ShapeMismatchError,
    TransportError,
)
from .schedule import NoiseSchedule
from .scores import ScoreRequest, eps_to_score

WIRE_PROTO = 1
MAX_LINE_BYTES = 64 * 1024 * 1024


def encode_f32(arr: np.ndarray) -> str:
    """Base64 of the array as little-endian float32 in C order."""
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return base64.b64encode(payload).decode("ascii")


def decode_f32(text: str, shape: tuple[int, ...], what: str = "payload") -> np.ndarray:
    """Decode a base64 little-endian float32 payload into a float64 array."""
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, AttributeError) as exc:
        raise PayloadDecodeError(f"{what}: malformed base64 ({exc})") from exc
    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise PayloadDecodeError(f"{what}: expected {4 * count} bytes for shape {tuple(shape)}, got {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise PayloadDecodeError(f"{what}: non-finite entries in decoded tensor")
    return arr


@dataclass(frozen=True)
class BackendHello:
    """Negotiated session parameters from the server's hello frame."""

    returns: str
    shape: tuple[int, int, int]


def _read_frame(reader, max_line: int) -> dict[str, Any]:
    try:
        line = reader.readline(max_line + 1)
    except OSError as exc:
        raise TransportError(f"read failed: {exc}") from exc
    if not line:
        raise TransportError("connection closed by backend")
    if len(line) > max_line:
        raise TransportError(f"backend sent a line over {max_line} bytes")
    try:
        frame = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TransportError(f"backend sent malformed JSON: {exc}") from exc
    if not isinstance(frame, dict):
        raise TransportError(f"backend frame must be an object, got {type(frame).__name__}")
    return frame


class ScoreBackendClient:
    """Single-owner, strictly request-response client for one connection.

    ``schedule`` is only required when the backend declares
    ``returns: "eps"`` in its handshake.
    """

    def __init__(
        self,
        sock: socket.socket,
        schedule: NoiseSchedule | None = None,
        max_line: int = MAX_LINE_BYTES,
    ) -> None:
        self._sock = sock
        self._reader = sock.makefile("rb")
        self._schedule = schedule
        self._max_line = max_line
        self._ids = itertools.count(1)
        self.hello: BackendHello | None = None

    def _send(self, frame: dict[str, Any]) -> None:
        data = (json.dumps(frame, separators=(",", ":")) + "\n").encode("utf-8")
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def handshake(self) -> BackendHello:
        self._send({"kind": "hello", "proto": WIRE_PROTO})
        frame = _read_frame(self._reader, self._max_line)
        if frame.get("kind") == "error":
            raise BackendFrameError(str(frame.get("error", "unspecified backend error")))
        if frame.get("kind") != "hello" or frame.get("proto") != WIRE_PROTO:
            raise TransportError(f"bad handshake response: {frame!r}")
        returns = frame.get("returns")
        if returns not in ("score", "eps"):
            raise TransportError(f"handshake 'returns' must be 'score' or 'eps', got {returns!r}")
        shape = frame.get("shape")
        if (
            not isinstance(shape, list)
            or len(shape) != 3
            or not all(isinstance(d, int) and d > 0 for d in shape)
        ):
            raise TransportError(f"handshake shape must be three positive ints, got {shape!r}")
        if returns == "eps" and self._schedule is None:
            raise ConfigError("backend returns eps but no schedule was provided for conversion")
        self.hello = BackendHello(returns=returns, shape=(shape[0], shape[1], shape[2]))
        return self.hello

    def score(self, req: ScoreRequest) -> np.ndarray:
        """Send one score request and decode the matching response."""
        if self.hello is None:
            raise TransportError("handshake not performed")
        if req.x_t.shape != self.hello.shape:
            raise ShapeMismatchError(f"x_t shape {req.x_t.shape} != negotiated {self.hello.shape}")
        req_id = next(self._ids)
        frame: dict[str, Any] = {
            "kind": "score",
            "id": req_id,
            "t": int(req.t),
            "prompt": req.prompt,
            "negative_prompt": req.negative_prompt,
            "cfg_weight": float(req.cfg_weight),
            "control_weight": float(req.control_weight),
            "shape": list(req.x_t.shape),
            "x_t": encode_f32(req.x_t),
        }
        if req.control_image is not None:
            frame["control_image"] = encode_f32(req.control_image)
        self._send(frame)

        resp = _read_frame(self._reader, self._max_line)
        kind = resp.get("kind")
        if kind == "error":
            raise BackendFrameError(str(resp.get("error", "unspecified backend error")))
        if kind != "score":
            raise TransportError(f"unexpected frame kind {kind!r}")
        if resp.get("id") != req_id:
            raise IdMismatchError(f"response id {resp.get('id')!r} != request id {req_id}")
        shape = resp.get("shape")
        if shape != list(req.x_t.shape):
            raise ShapeMismatchError(f"response shape {shape!r} != requested {list(req.x_t.shape)}")
        payload = resp.get("score")
        if not isinstance(payload, str):
            raise PayloadDecodeError(f"response 'score' must be a base64 string, got {type(payload).__name__}")
        out = decode_f32(payload, req.x_t.shape, "score")
        if self.hello.returns == "eps":
            assert self._schedule is not None
            out = eps_to_score(out, req.t, self._schedule)
        return out

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "ScoreBackendClient":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def backend_score(req: ScoreRequest, conn: ScoreBackendClient) -> np.ndarray:
    """Score one request over an open, handshaken backend connection."""
    return conn.score(req)


def connect_backend(
    addr: str,
    schedule: NoiseSchedule | None = None,
    timeout: float = 10.0,
) -> ScoreBackendClient:
    """Open a TCP connection to ``host:port`` and complete the handshake."""
    host, sep, port_text = addr.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"backend address must be host:port, got {addr!r}")
    try:
        port = int(port_text)
    except ValueError as exc:
        raise ConfigError(f"backend address port must be an integer, got {addr!r}") from exc
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {addr}: {exc}") from exc
    client = ScoreBackendClient(sock, schedule=schedule)
    client.handshake()
    return client


@dataclass
class BackendScoreFn:
    """Adapter giving a backend connection the engine's score-source shape.

    The pre-noise render arrives as ``control_image`` and is forwarded
    for depth-style conditioning on the server side.
    """

    client: ScoreBackendClient
    prompt: str = ""
    negative_prompt: str = ""
    cfg_weight: float = 7.5
    control_weight: float = 1.0

    def __call__(self, x_t: np.ndarray, t: int, control_image: np.ndarray | None = None) -> np.ndarray:
        req = ScoreRequest(
            x_t=x_t,
            t=t,
            prompt=self.prompt,
            negative_prompt=self.negative_prompt,
            cfg_weight=self.cfg_weight,
            control_image=control_image,
            control_weight=self.control_weight,
        )
        return self.client.score(req)
