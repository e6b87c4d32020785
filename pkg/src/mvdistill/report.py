"""Post-run report emission: curves CSV, final-generator renders, summary.

``emit_report`` reads a completed run directory, verifies the stored
digest against the final checkpoint, and writes deterministic artifacts
to the output directory: gradient/seed-norm curves as CSV, renders of
the final generator at eight evenly spaced yaws as binary PPM images,
and a plain-text summary.  Running it twice produces byte-identical
files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import parse_config_dict
from .errors import ConfigError, IntegrityError
from .generators import GeneratorParams, Pose
from .trainer import build_generator, run_digest

RENDER_YAW_COUNT = 8


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a (C, H, W) float tensor as binary PPM (P6).

    Values are mapped affinely from [-1, 1] to [0, 255] with clipping.
    The first three channels become RGB; single-channel input is
    replicated to gray.
    """
    c, h, w = image.shape
    if c >= 3:
        rgb = image[:3]
    else:
        rgb = np.repeat(image[:1], 3, axis=0)
    scaled = np.clip((rgb + 1.0) * 0.5, 0.0, 1.0) * 255.0
    pixels = np.rint(scaled).astype(np.uint8).transpose(1, 2, 0)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def report_yaws() -> list[float]:
    """Eight evenly spaced yaws covering the full circle."""
    return [-math.pi + (k + 0.5) * (2.0 * math.pi / RENDER_YAW_COUNT) for k in range(RENDER_YAW_COUNT)]


def emit_report(run_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Render curves, images, and a summary for a finished run directory."""
    run_path = Path(run_dir)
    report_file = run_path / "report.json"
    if not report_file.exists():
        raise ConfigError(f"no report.json in {run_path}")
    report = json.loads(report_file.read_text(encoding="utf-8"))
    cfg = parse_config_dict(report["config"])

    if report.get("final_checkpoint") is None:
        raise IntegrityError(f"{report_file}: run has no final checkpoint reference")
    kind, arrays = load_checkpoint(run_path / report["final_checkpoint"])
    theta = arrays["theta"]
    expected = run_digest(cfg, theta)
    if expected != report.get("digest"):
        raise IntegrityError(
            f"digest mismatch for {run_path}: report says {report.get('digest')!r}, "
            f"checkpoint gives {expected!r}"
        )

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    curve_lines = ["iter,phase,t,seed_norm,grad_norm,step_norm"]
    for row in report["log"]:
        curve_lines.append(
            f"{row['iter']},{row['phase']},{row['t']},{row['seed_norm']:.9e},"
            f"{row['grad_norm']:.9e},{row['step_norm']:.9e}"
        )
    curves = out_path / "curves.csv"
    curves.write_text("\n".join(curve_lines) + "\n", encoding="utf-8")
    written.append(curves)

    gen = build_generator(cfg)
    params = GeneratorParams(
        theta=theta, latent_dim=gen.latent_dim, truncation_psi=cfg.generator.truncation_psi
    )
    latent = np.zeros(gen.latent_dim)
    for k, yaw in enumerate(report_yaws()):
        pose = Pose(yaw=yaw, pitch=0.0, radius=cfg.generator.pose_radius)
        render = gen.render(params, latent, pose)
        image_file = out_path / f"render_{k}.ppm"
        write_ppm(image_file, render.high_res)
        written.append(image_file)

    iterations = report["iterations"]
    lines = [
        f"generator: {kind}",
        f"iterations: {iterations}",
        f"phase counts: mirror={report['phase_counts'].get('mirror', 0)} "
        f"grid={report['phase_counts'].get('grid', 0)}",
        f"digest: {report['digest']}",
    ]
    if iterations == 0:
        lines.append("no updates were applied; renders show the initial generator")
    else:
        final_grad = report["log"][-1]["grad_norm"]
        lines.append(f"final gradient norm: {final_grad:.9e}")
    summary = out_path / "summary.txt"
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(summary)
    return written
