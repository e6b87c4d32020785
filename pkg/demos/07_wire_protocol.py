"""The score-backend wire protocol, end to end on a loopback socket.

Starts a minimal in-process echo backend (newline-delimited JSON over
TCP, base64 float32 payloads), completes the handshake, and round-trips
one score request.  A real deployment would run the `backend_bridge`
package's server with a pretrained denoiser instead.
"""

import json
import socket
import threading

import numpy as np

from mvdistill import ScoreBackendClient, ScoreRequest, backend_score

SHAPE = (4, 16, 16)


def echo_server(listener: socket.socket) -> None:
    conn, _ = listener.accept()
    reader = conn.makefile("rb")
    for line in reader:
        frame = json.loads(line)
        if frame["kind"] == "hello":
            reply = {"kind": "hello", "proto": 1, "returns": "score", "shape": list(SHAPE)}
        else:
            reply = {"kind": "score", "id": frame["id"], "shape": frame["shape"], "score": frame["x_t"]}
        conn.sendall((json.dumps(reply) + "\n").encode())


listener = socket.create_server(("127.0.0.1", 0))
port = listener.getsockname()[1]
threading.Thread(target=echo_server, args=(listener,), daemon=True).start()

sock = socket.create_connection(("127.0.0.1", port))
client = ScoreBackendClient(sock)
hello = client.handshake()
print(f"handshake: proto=1 returns={hello.returns} shape={hello.shape}")

x_t = np.random.default_rng(0).standard_normal(SHAPE).astype(np.float32).astype(np.float64)
req = ScoreRequest(x_t=x_t, t=420, prompt="portrait of a marble statue", cfg_weight=7.5)
score = backend_score(req, client)
print(f"request id round-tripped; |score - x_t| max = {np.abs(score - x_t).max():.1e} (echo backend)")
client.close()
