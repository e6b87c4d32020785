"""Command line for the score server.

    backend-bridge echo --host 127.0.0.1 --port 9000 --shape 4,16,16
    backend-bridge serve --model <hf-id> [--controlnet <hf-id>]
                         [--port 9000] [--returns score|eps]
                         [--latent-hw 64] [--device cpu]
"""

from __future__ import annotations

import argparse
import sys

from .conversion import ScheduleTable
from .server import serve, serve_echo


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3 or not all(p.strip().isdigit() and int(p) > 0 for p in parts):
        raise argparse.ArgumentTypeError(f"shape must be C,H,W with positive ints, got {text!r}")
    c, h, w = (int(p) for p in parts)
    return (c, h, w)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backend-bridge", description="NDJSON score-protocol server")
    sub = parser.add_subparsers(dest="command", required=True)

    p_echo = sub.add_parser("echo", help="weightless echo double (score := x_t)")
    p_echo.add_argument("--host", default="127.0.0.1")
    p_echo.add_argument("--port", type=int, default=9000)
    p_echo.add_argument("--shape", type=_parse_shape, default=(4, 16, 16))

    p_serve = sub.add_parser("serve", help="wrap a pretrained denoiser")
    p_serve.add_argument("--model", required=True, help="diffusers pipeline id or path")
    p_serve.add_argument("--controlnet", default=None, help="optional control module id")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=9000)
    p_serve.add_argument("--returns", choices=("score", "eps"), default="score")
    p_serve.add_argument("--latent-hw", type=int, default=64)
    p_serve.add_argument("--device", default="cpu")
    p_serve.add_argument("--steps", type=int, default=1000)
    p_serve.add_argument("--beta-lo", type=float, default=1e-4)
    p_serve.add_argument("--beta-hi", type=float, default=2e-2)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "echo":
        server = serve_echo(host=args.host, port=args.port, shape=args.shape)
        print(f"echo backend on {server.addr}, shape {args.shape}", flush=True)
    else:
        from .model import DiffusersDenoiser, ModelUnavailableError

        try:
            pipeline = DiffusersDenoiser(
                args.model,
                controlnet_id=args.controlnet,
                device=args.device,
                latent_hw=args.latent_hw,
            )
        except ModelUnavailableError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        table = ScheduleTable(args.steps, args.beta_lo, args.beta_hi)
        server = serve(pipeline, host=args.host, port=args.port, returns=args.returns, schedule=table)
        print(
            f"model backend on {server.addr}, shape {pipeline.latent_shape}, returns {args.returns}",
            flush=True,
        )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
