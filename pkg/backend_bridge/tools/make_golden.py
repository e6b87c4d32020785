"""Regenerate the cross-component golden files in tests/data/.

Dev-time tool: it drives the *engine's* actual protocol client
(mvdistill must be installed) against the echo server in this package,
recording the exact bytes each side emits.  The transcript pins both
wire formats; the eps/score vector file pins the noise-prediction
conversion against the engine's implementation.
"""

from __future__ import annotations

import json
import socket
import sys
import threading
from pathlib import Path

import numpy as np

from mvdistill.backend import ScoreBackendClient
from mvdistill.schedule import build_schedule
from mvdistill.scores import ScoreRequest, eps_to_score

from backend_bridge.server import serve_echo

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"
SHAPE = (4, 16, 16)


def record_transcript() -> list[dict]:
    """Proxy the engine client to the echo server, capturing both streams."""
    with serve_echo(shape=SHAPE) as server:
        upstream = socket.create_connection((server.host, server.port))
        upstream_reader = upstream.makefile("rb")
        client_side, proxy_side = socket.socketpair()
        proxy_reader = proxy_side.makefile("rb")
        transcript: list[dict] = []
        done = threading.Event()

        def pump() -> None:
            while not done.is_set():
                line = proxy_reader.readline()
                if not line:
                    return
                transcript.append({"dir": "c2s", "line": line.decode("utf-8").rstrip("\n")})
                upstream.sendall(line)
                reply = upstream_reader.readline()
                transcript.append({"dir": "s2c", "line": reply.decode("utf-8").rstrip("\n")})
                proxy_side.sendall(reply)

        thread = threading.Thread(target=pump, daemon=True)
        thread.start()

        client = ScoreBackendClient(client_side)
        client.handshake()
        rng = np.random.default_rng(2024)
        prompts = [
            ("portrait of a marble statue", ""),
            ("a charcoal sketch of a face", "low quality"),
            ("", ""),
        ]
        for i, (prompt, negative) in enumerate(prompts):
            x_t = rng.standard_normal(SHAPE).astype(np.float32).astype(np.float64)
            control = None
            if i % 2 == 0:
                control = rng.standard_normal(SHAPE).astype(np.float32).astype(np.float64)
            client.score(
                ScoreRequest(
                    x_t=x_t,
                    t=100 * (i + 1),
                    prompt=prompt,
                    negative_prompt=negative,
                    cfg_weight=7.5,
                    control_image=control,
                    control_weight=1.0,
                )
            )
        done.set()
        client.close()
        thread.join(timeout=5)
        upstream.close()
    return transcript


def make_vectors() -> list[dict]:
    vectors = []
    rng = np.random.default_rng(7)
    for steps, beta_lo, beta_hi, ts in (
        (1000, 1e-4, 2e-2, (1, 250, 777, 1000)),
        (50, 1e-3, 5e-2, (1, 25, 50)),
    ):
        schedule = build_schedule(steps, beta_lo, beta_hi)
        for t in ts:
            eps = rng.standard_normal(8)
            vectors.append(
                {
                    "steps": steps,
                    "beta_lo": beta_lo,
                    "beta_hi": beta_hi,
                    "t": t,
                    "alpha_bar": schedule.alpha_bar(t),
                    "eps": eps.tolist(),
                    "score": eps_to_score(eps.reshape(1, 2, 4), t, schedule).ravel().tolist(),
                }
            )
    return vectors


def main() -> int:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    transcript = record_transcript()
    path = DATA_DIR / "golden_transcript.ndjson"
    path.write_text("".join(json.dumps(entry) + "\n" for entry in transcript), encoding="utf-8")
    print(f"wrote {path} ({len(transcript)} frames)")

    vectors = make_vectors()
    vec_path = DATA_DIR / "eps_score_vectors.json"
    vec_path.write_text(json.dumps(vectors, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {vec_path} ({len(vectors)} vectors)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
