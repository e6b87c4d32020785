"""Score server: one worker thread per connection, model access serialized.

Two entry points:

* :func:`serve_echo` answers every score request with its own ``x_t``
  payload — a weightless test double used for integration tests and
  protocol conformance.
* :func:`serve` wraps a denoiser pipeline.  Each request runs one
  denoiser forward pass (guidance and conditioning are the pipeline's
  job) and replies with a score, converting from the pipeline's noise
  prediction unless the session was declared ``returns: "eps"``.

Per-request failures become error frames; the process never dies on a
bad request.  Within a connection, responses always carry the request's
id and are emitted in request order.
"""

from __future__ import annotations

import contextlib
import socket
import threading
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .conversion import ScheduleTable, eps_to_score
from .protocol import (
    MAX_LINE_BYTES,
    PROTO_VERSION,
    ProtocolViolation,
    dump_frame,
    error_response,
    hello_response,
    parse_line,
    parse_score_request,
    score_response,
)


class DenoiserPipeline(Protocol):
    """What a wrapped model must provide: one noise prediction per request."""

    latent_shape: tuple[int, int, int]

    def predict_eps(
        self,
        x_t: np.ndarray,
        t: int,
        prompt: str,
        negative_prompt: str,
        cfg_weight: float,
        control_image: np.ndarray | None,
        control_weight: float,
    ) -> np.ndarray: ...


@dataclass
class SessionConfig:
    """Per-server protocol settings."""

    shape: tuple[int, int, int]
    returns: str = "score"
    max_line: int = MAX_LINE_BYTES

    def __post_init__(self) -> None:
        if self.returns not in ("score", "eps"):
            raise ValueError(f"returns must be 'score' or 'eps', got {self.returns!r}")


def _echo_handler(request: dict) -> np.ndarray:
    return request["x_t"]


class ScoreServer:
    """TCP listener answering hello and score frames on each connection."""

    def __init__(
        self,
        config: SessionConfig,
        handler: Callable[[dict], np.ndarray],
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        self._config = config
        self._handler = handler
        self._handler_lock = threading.Lock()
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self.addr = f"{self.host}:{self.port}"
        self._accepting = True
        self._accept_thread: threading.Thread | None = None

    def serve_connection(self, conn: socket.socket) -> None:
        cfg = self._config
        reader = conn.makefile("rb")
        greeted = False
        try:
            while True:
                line = reader.readline(cfg.max_line + 1)
                if not line:
                    return
                if len(line) > cfg.max_line:
                    conn.sendall(dump_frame(error_response(0, f"line exceeds {cfg.max_line} bytes")))
                    continue
                try:
                    frame = parse_line(line)
                except ProtocolViolation as exc:
                    conn.sendall(dump_frame(error_response(0, str(exc))))
                    continue
                kind = frame.get("kind")
                if kind == "hello":
                    if frame.get("proto") != PROTO_VERSION:
                        conn.sendall(dump_frame(error_response(0, f"unsupported proto {frame.get('proto')!r}")))
                        continue
                    conn.sendall(dump_frame(hello_response(cfg.returns, cfg.shape)))
                    greeted = True
                elif kind == "score":
                    req_id = frame.get("id") if isinstance(frame.get("id"), int) else 0
                    if not greeted:
                        conn.sendall(dump_frame(error_response(req_id, "hello handshake required first")))
                        continue
                    try:
                        request = parse_score_request(frame, cfg.shape)
                        with self._handler_lock:
                            payload = self._handler(request)
                        payload = np.asarray(payload, dtype=np.float64)
                        if payload.shape != cfg.shape:
                            raise ProtocolViolation(
                                f"handler produced shape {payload.shape}, expected {cfg.shape}"
                            )
                        if not np.all(np.isfinite(payload)):
                            raise ProtocolViolation("handler produced non-finite values")
                        conn.sendall(dump_frame(score_response(request["id"], cfg.shape, payload)))
                    except ProtocolViolation as exc:
                        conn.sendall(dump_frame(error_response(req_id, str(exc))))
                    except Exception as exc:  # model failures must not kill the worker
                        conn.sendall(dump_frame(error_response(req_id, f"backend failure: {exc}")))
                else:
                    conn.sendall(dump_frame(error_response(0, f"unknown frame kind {kind!r}")))
        except (BrokenPipeError, ConnectionResetError, OSError):
            return
        finally:
            with contextlib.suppress(OSError):
                reader.close()
            with contextlib.suppress(OSError):
                conn.close()

    def _accept_loop(self) -> None:
        while self._accepting:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self.serve_connection, args=(conn,), daemon=True).start()

    def start(self) -> "ScoreServer":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def serve_forever(self) -> None:
        self._accept_loop()

    def close(self) -> None:
        self._accepting = False
        with contextlib.suppress(OSError):
            self._listener.close()

    def __enter__(self) -> "ScoreServer":
        return self.start()

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def serve_echo(
    host: str = "127.0.0.1",
    port: int = 0,
    shape: tuple[int, int, int] = (4, 16, 16),
    max_line: int = MAX_LINE_BYTES,
) -> ScoreServer:
    """Echo double: replies with x_t as the score, shape fixed per session."""
    return ScoreServer(SessionConfig(shape=shape, max_line=max_line), _echo_handler, host, port)


def serve(
    pipeline: DenoiserPipeline,
    host: str = "127.0.0.1",
    port: int = 0,
    returns: str = "score",
    schedule: ScheduleTable | None = None,
) -> ScoreServer:
    """Real backend: one denoiser pass per request, eps converted to score.

    With ``returns="eps"`` the session is declared eps-speaking and the
    conversion is left to the client.
    """
    table = schedule if schedule is not None else ScheduleTable()

    def handler(request: dict) -> np.ndarray:
        eps_hat = pipeline.predict_eps(
            x_t=request["x_t"],
            t=request["t"],
            prompt=request["prompt"],
            negative_prompt=request["negative_prompt"],
            cfg_weight=request["cfg_weight"],
            control_image=request["control_image"],
            control_weight=request["control_weight"],
        )
        if returns == "eps":
            return np.asarray(eps_hat, dtype=np.float64)
        return eps_to_score(eps_hat, table.alpha_bar(request["t"]))

    config = SessionConfig(shape=pipeline.latent_shape, returns=returns)
    return ScoreServer(config, handler, host, port)
