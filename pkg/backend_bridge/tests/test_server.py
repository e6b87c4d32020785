import json
import socket

import numpy as np
import pytest

from backend_bridge.conversion import ScheduleTable
from backend_bridge.protocol import decode_f32, encode_f32
from backend_bridge.server import ScoreServer, SessionConfig, serve, serve_echo

SHAPE = (2, 3, 3)


class Conn:
    """Minimal raw test client."""

    def __init__(self, server):
        self.sock = socket.create_connection((server.host, server.port))
        self.reader = self.sock.makefile("rb")

    def send(self, frame) -> None:
        self.sock.sendall((json.dumps(frame) + "\n").encode())

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv(self):
        return json.loads(self.reader.readline())

    def hello(self):
        self.send({"kind": "hello", "proto": 1})
        return self.recv()

    def score_frame(self, x, req_id=1, t=10, shape=SHAPE, **extra):
        frame = {
            "kind": "score",
            "id": req_id,
            "t": t,
            "prompt": "",
            "negative_prompt": "",
            "cfg_weight": 7.5,
            "control_weight": 1.0,
            "shape": list(shape),
            "x_t": encode_f32(x),
        }
        frame.update(extra)
        return frame

    def close(self):
        self.reader.close()
        self.sock.close()


@pytest.fixture
def echo():
    with serve_echo(shape=SHAPE) as server:
        conn = Conn(server)
        yield conn
        conn.close()


class TestHandshake:
    def test_hello_declares_returns_and_shape(self, echo):
        assert echo.hello() == {"kind": "hello", "proto": 1, "returns": "score", "shape": [2, 3, 3]}

    def test_wrong_proto_gets_error_frame(self, echo):
        echo.send({"kind": "hello", "proto": 99})
        assert echo.recv()["kind"] == "error"

    def test_score_before_hello_rejected(self, echo):
        echo.send(echo.score_frame(np.zeros(SHAPE)))
        resp = echo.recv()
        assert resp["kind"] == "error"
        assert "hello" in resp["error"]


class TestEchoScoring:
    def test_echo_round_trip(self, echo, rng=np.random.default_rng(1)):
        echo.hello()
        x = rng.standard_normal(SHAPE).astype(np.float32).astype(np.float64)
        echo.send(echo.score_frame(x, req_id=7))
        resp = echo.recv()
        assert resp["kind"] == "score" and resp["id"] == 7
        np.testing.assert_array_equal(decode_f32(resp["score"], SHAPE), x)

    def test_thousand_pipelined_requests_ordered(self, echo):
        echo.hello()
        rng = np.random.default_rng(2)
        payloads = [rng.standard_normal(SHAPE).astype(np.float32).astype(np.float64) for _ in range(1000)]
        for i, x in enumerate(payloads):
            echo.send(echo.score_frame(x, req_id=i))
        for i, x in enumerate(payloads):
            resp = echo.recv()
            assert resp["id"] == i
            np.testing.assert_array_equal(decode_f32(resp["score"], SHAPE), x)

    def test_shape_mismatch_keeps_connection_open(self, echo):
        echo.hello()
        echo.send(echo.score_frame(np.zeros((2, 3, 4)), req_id=3, shape=(2, 3, 4)))
        resp = echo.recv()
        assert resp["kind"] == "error" and resp["id"] == 3
        # connection still usable
        x = np.ones(SHAPE)
        echo.send(echo.score_frame(x, req_id=4))
        assert echo.recv()["id"] == 4

    def test_malformed_json_gets_error_frame(self, echo):
        echo.hello()
        echo.send_raw(b"{nonsense\n")
        assert echo.recv()["kind"] == "error"

    def test_bad_payload_gets_error_frame(self, echo):
        echo.hello()
        echo.send(echo.score_frame(np.zeros(SHAPE), req_id=9, x_t="@@@"))
        resp = echo.recv()
        assert resp["kind"] == "error" and resp["id"] == 9


class TestOversizedLine:
    def test_oversized_line_gets_error_frame(self):
        with ScoreServer(SessionConfig(shape=SHAPE, max_line=4096), lambda req: req["x_t"]) as server:
            conn = Conn(server)
            try:
                conn.hello()
                conn.send_raw(b"x" * 9000 + b"\n")
                assert conn.recv()["kind"] == "error"
            finally:
                conn.close()


class FakePipeline:
    """Denoiser stub: eps_hat = 0.5 * x_t, fails on demand."""

    latent_shape = SHAPE

    def __init__(self):
        self.fail_next = False
        self.calls = []

    def predict_eps(self, x_t, t, prompt, negative_prompt, cfg_weight, control_image, control_weight):
        if self.fail_next:
            self.fail_next = False
            raise RuntimeError("synthetic model failure")
        self.calls.append((t, prompt, control_image is not None))
        return 0.5 * x_t


class TestModelServer:
    def test_converts_eps_to_score(self):
        pipeline = FakePipeline()
        table = ScheduleTable(100, 1e-3, 2e-2)
        with serve(pipeline, schedule=table) as server:
            conn = Conn(server)
            try:
                assert conn.hello()["returns"] == "score"
                x = np.full(SHAPE, 2.0)
                conn.send(conn.score_frame(x, req_id=1, t=30))
                resp = conn.recv()
                expected = -(0.5 * 2.0) / np.sqrt(1.0 - table.alpha_bar(30))
                got = decode_f32(resp["score"], SHAPE)
                np.testing.assert_allclose(got, expected, rtol=1e-6)
            finally:
                conn.close()

    def test_declared_eps_skips_conversion(self):
        pipeline = FakePipeline()
        with serve(pipeline, returns="eps") as server:
            conn = Conn(server)
            try:
                assert conn.hello()["returns"] == "eps"
                x = np.full(SHAPE, 2.0)
                conn.send(conn.score_frame(x, req_id=1, t=30))
                got = decode_f32(conn.recv()["score"], SHAPE)
                np.testing.assert_allclose(got, 1.0, rtol=1e-6)
            finally:
                conn.close()

    def test_model_failure_becomes_error_frame_not_death(self):
        pipeline = FakePipeline()
        with serve(pipeline) as server:
            conn = Conn(server)
            try:
                conn.hello()
                pipeline.fail_next = True
                conn.send(conn.score_frame(np.ones(SHAPE), req_id=5, t=10))
                resp = conn.recv()
                assert resp["kind"] == "error" and "synthetic model failure" in resp["error"]
                conn.send(conn.score_frame(np.ones(SHAPE), req_id=6, t=10))
                assert conn.recv()["kind"] == "score"
            finally:
                conn.close()

    def test_control_image_reaches_pipeline(self):
        pipeline = FakePipeline()
        with serve(pipeline) as server:
            conn = Conn(server)
            try:
                conn.hello()
                frame = conn.score_frame(np.ones(SHAPE), req_id=1, t=10)
                frame["control_image"] = encode_f32(np.zeros(SHAPE))
                conn.send(frame)
                conn.recv()
                assert pipeline.calls[-1] == (10, "", True)
            finally:
                conn.close()
