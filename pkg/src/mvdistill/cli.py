"""Command-line surface.

Subcommands::

    mvdistill run -c config.toml -o out_dir [--seed N]
    mvdistill gradcheck -c config.toml -n 100
    mvdistill report RUN_DIR -o out_dir
    mvdistill ping HOST:PORT [--timeout SECONDS]

Exit codes: 0 success, 2 configuration error, 3 runtime error,
4 backend error.  On failure stderr carries exactly one line of the
form ``error kind=<config|runtime|backend> message="..."``.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .backend import connect_backend
from .config import parse_config
from .errors import BackendError, ConfigError, EngineError, UnsupportedModeError
from .gradcheck import gradient_check, max_rel_err, rows_as_csv
from .generators import sample_latent, sample_pose
from .report import emit_report
from .rng import DrawStreams
from .trainer import build_generator, build_init_params, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_BACKEND = 4

GRADCHECK_TOLERANCE = 1e-3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvdistill", description="Score-distillation training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a training run")
    p_run.add_argument("-c", "--config", required=True, help="path to the TOML run config")
    p_run.add_argument("-o", "--out", required=True, help="output directory for this run")
    p_run.add_argument("--seed", type=int, default=None, help="override run.seed")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the gradient chain")
    p_grad.add_argument("-c", "--config", required=True, help="path to the TOML run config")
    p_grad.add_argument("-n", "--probes", type=int, default=100, help="number of probed coordinates")

    p_report = sub.add_parser("report", help="emit curves, renders, and a summary for a run")
    p_report.add_argument("run_dir", help="directory written by `run`")
    p_report.add_argument("-o", "--out", required=True, help="output directory for report artifacts")

    p_ping = sub.add_parser("ping", help="handshake with a score backend")
    p_ping.add_argument("addr", help="backend address as host:port")
    p_ping.add_argument("--timeout", type=float, default=5.0, help="connect/handshake timeout in seconds")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=args.seed))
    report = run(cfg, out_dir=args.out)
    print(f"run complete: {len(report.rows)} iterations, digest {report.digest}")
    print(f"outputs in {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    if cfg.score.source == "backend":
        raise UnsupportedModeError(
            "gradcheck needs an oracle score source; backend scoring is not differentiable-checkable"
        )
    if args.probes < 0:
        raise ConfigError(f"probe count must be >= 0, got {args.probes}")
    streams = DrawStreams(cfg.run.seed)
    gen = build_generator(cfg)
    params = build_init_params(cfg, gen, streams)
    latent = sample_latent(gen.latent_dim, cfg.generator.truncation_psi, streams.latent)
    pose = sample_pose(streams.pose, cfg.generator.pitch_limit, cfg.generator.pose_radius)
    probe_seed = streams.noise.standard_normal(gen.high_shape)
    rows = gradient_check(gen, params, latent, pose, probe_seed, "post_sr", args.probes, streams.init)
    sys.stdout.write(rows_as_csv(rows))
    worst = max_rel_err(rows)
    if worst > GRADCHECK_TOLERANCE:
        raise EngineError(f"gradcheck failed: max relative error {worst:.3e} > {GRADCHECK_TOLERANCE}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    written = emit_report(args.run_dir, args.out)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_ping(args: argparse.Namespace) -> int:
    client = connect_backend(args.addr, timeout=args.timeout)
    try:
        hello = client.hello
        assert hello is not None
        shape = "x".join(str(d) for d in hello.shape)
        print(f"proto=1 returns={hello.returns} shape={shape}")
    finally:
        client.close()
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "gradcheck": _cmd_gradcheck,
    "report": _cmd_report,
    "ping": _cmd_ping,
}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    message = str(exc).replace('"', "'").replace("\n", " ")
    sys.stderr.write(f'error kind={kind} message="{message}"\n')
    return code


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except BackendError as exc:
        return _fail("backend", exc, EXIT_BACKEND)
    except (EngineError, OSError, np.linalg.LinAlgError) as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
