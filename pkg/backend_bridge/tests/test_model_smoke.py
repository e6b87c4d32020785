"""Manual smoke test against a real pretrained denoiser (not CI-gated).

Run with a checkpoint id to verify one end-to-end request returns a
finite tensor of the negotiated shape:

    BACKEND_BRIDGE_MODEL=<diffusers-id> pytest tests/test_model_smoke.py -s
"""

import json
import os
import socket

import numpy as np
import pytest

MODEL_ID = os.environ.get("BACKEND_BRIDGE_MODEL")


@pytest.mark.skipif(not MODEL_ID, reason="manual: set BACKEND_BRIDGE_MODEL to a diffusers id")
def test_real_model_returns_finite_score():
    from backend_bridge.model import DiffusersDenoiser
    from backend_bridge.protocol import decode_f32, encode_f32
    from backend_bridge.server import serve

    pipeline = DiffusersDenoiser(MODEL_ID, latent_hw=64)
    with serve(pipeline) as server:
        sock = socket.create_connection((server.host, server.port))
        reader = sock.makefile("rb")
        sock.sendall(b'{"kind":"hello","proto":1}\n')
        hello = json.loads(reader.readline())
        shape = tuple(hello["shape"])
        x_t = np.random.default_rng(0).standard_normal(shape)
        frame = {
            "kind": "score",
            "id": 1,
            "t": 500,
            "prompt": "portrait of a marble statue",
            "negative_prompt": "",
            "cfg_weight": 7.5,
            "control_weight": 1.0,
            "shape": list(shape),
            "x_t": encode_f32(x_t),
        }
        sock.sendall((json.dumps(frame) + "\n").encode())
        resp = json.loads(reader.readline())
        assert resp["kind"] == "score"
        score = decode_f32(resp["score"], shape)
        assert np.all(np.isfinite(score))
        print(f"smoke ok: score norm {np.linalg.norm(score):.3f} at shape {shape}")
        reader.close()
        sock.close()
