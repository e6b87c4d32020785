"""Optimization loop: phase scheduling, Adam updates, checkpoints, reporting.

One run is strictly sequential.  Every iteration samples a fresh
truncated latent, draws poses, computes one mirror or grid gradient, and
applies one bias-corrected Adam step.  The per-iteration log records the
phase, the drawn timestep, and seed/gradient/update norms; the report
digest covers the configuration echo and the final parameters, so two
runs of the same config with the same seed produce equal digests.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .backend import BackendScoreFn, connect_backend
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, canonical_config_json, config_to_dict, serialize_config
from .distill import (
    DistillStepConfig,
    RankWeights,
    StepResult,
    grid_ld_step,
    mirror_ld_step,
)
from .errors import BackendError, ConfigError, DimensionError, NonFiniteGradientError
from .generators import (
    Generator,
    GeneratorParams,
    make_generator,
    sample_grid_poses,
    sample_latent,
    sample_pose,
)
from .rng import DrawStreams
from .schedule import NoiseSchedule, TimestepRange, build_schedule
from .scores import GaussianScoreOracle, GmmScoreOracle, ScoreFn

LOG_HEADER = "iter,phase,t,seed_norm,grad_norm,step_norm,ms"

PHASE_MIRROR = "mirror"
PHASE_GRID = "grid"


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates and the completed step count."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


def init_adam(n: int) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_update(
    params: GeneratorParams,
    state: AdamState,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[GeneratorParams, AdamState]:
    """One bias-corrected Adam descent step; pure (inputs untouched)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.theta.shape:
        raise DimensionError(f"gradient shape {grad.shape} != parameter shape {params.theta.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        first = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NonFiniteGradientError(
            f"gradient has {bad} non-finite entries (first at index {first}); aborting run"
        )
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta = params.theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params.with_theta(theta), AdamState(m=m, v=v, step=step)


# ---------------------------------------------------------------------------
# Component construction from a RunConfig
# ---------------------------------------------------------------------------


def resolve_mean(cfg: RunConfig) -> Callable[[tuple[int, ...]], np.ndarray] | float:
    """Target-mean spec for the Gaussian oracle.

    ``normal`` and ``symmetric-normal`` draw a fixed tensor per shape
    from ``score.mean_seed``; the symmetric variant averages the draw
    with its horizontal flip so it is invariant under mirroring.
    """
    score = cfg.score
    if score.mean == "zeros":
        return 0.0
    if score.mean == "constant":
        return float(score.mean_value)
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def mean_fn(shape: tuple[int, ...]) -> np.ndarray:
        if shape not in cache:
            draw = np.random.default_rng(score.mean_seed).standard_normal(shape)
            if score.mean == "symmetric-normal":
                draw = 0.5 * (draw + draw[..., ::-1])
            cache[shape] = score.mean_scale * draw
        return cache[shape]

    return mean_fn


def build_score_fn(cfg: RunConfig, schedule: NoiseSchedule) -> ScoreFn:
    score = cfg.score
    if score.source == "gaussian":
        return GaussianScoreOracle(mean=resolve_mean(cfg), var0=score.var0, schedule=schedule)
    if score.source == "gmm":
        weights = np.asarray(score.gmm_weights, dtype=np.float64)
        total = weights.sum()
        if total <= 0.0:
            raise ConfigError(f"score.gmm_weights must have positive sum, got {score.gmm_weights!r}")
        return GmmScoreOracle(
            means=[float(m) for m in score.gmm_means],
            var0=score.var0,
            weights=tuple(weights / total),
            schedule=schedule,
        )
    client = connect_backend(score.backend_addr, schedule=schedule, timeout=score.timeout_s)
    return BackendScoreFn(
        client=client,
        prompt=score.prompt,
        negative_prompt=score.negative_prompt,
        cfg_weight=score.cfg_weight,
        control_weight=score.control_weight,
    )


def build_generator(cfg: RunConfig) -> Generator:
    g = cfg.generator
    return make_generator(
        g.kind, channels=g.channels, height=g.height, width=g.width, latent_dim=g.latent_dim, sr=g.sr
    )


def build_init_params(cfg: RunConfig, gen: Generator, streams: DrawStreams) -> GeneratorParams:
    g = cfg.generator
    kwargs = dict(
        init=g.init, scale=g.init_scale, value=g.init_value, truncation_psi=g.truncation_psi
    )
    if gen.kind == "symmetric_toy":
        kwargs["symmetric"] = g.symmetric_init
    return gen.init_params(streams.init, **kwargs)


def _phase_step_config(cfg: RunConfig, phase: str) -> DistillStepConfig:
    if phase == PHASE_MIRROR:
        section = cfg.mirror
        tap = "post_sr"
    else:
        section = cfg.grid
        tap = cfg.grid.tap
    rw = RankWeights(section.rank_weights) if section.rank_weights else None
    return DistillStepConfig(
        mode="ld",
        t_range=TimestepRange(section.t_lo, section.t_hi),
        cfg_weight=cfg.score.cfg_weight,
        rank_weights=rw,
        tap=tap,
        mirror_average=getattr(section, "average", False),
    )


def phase_sequence(cfg: RunConfig) -> list[str]:
    """Per-iteration phases.

    ``interleaved`` alternates blocks of ``interleave_k`` iterations
    starting with mirror; ``sequential`` runs all mirror iterations
    before all grid iterations (mirror takes the larger half of an odd
    count).  With a single enabled phase every iteration uses it.
    """
    n = cfg.run.iterations
    enabled = [p for p, on in ((PHASE_MIRROR, cfg.mirror.enabled), (PHASE_GRID, cfg.grid.enabled)) if on]
    if len(enabled) == 1:
        return [enabled[0]] * n
    if cfg.run.phase_schedule == "sequential":
        n_mirror = (n + 1) // 2
        return [PHASE_MIRROR] * n_mirror + [PHASE_GRID] * (n - n_mirror)
    k = cfg.run.interleave_k
    return [enabled[(i // k) % 2] for i in range(n)]


# ---------------------------------------------------------------------------
# Run loop and report
# ---------------------------------------------------------------------------


@dataclass
class LogRow:
    iteration: int
    phase: str
    t: int
    seed_norm: float
    grad_norm: float
    step_norm: float
    ms: float

    def as_csv(self) -> str:
        return (
            f"{self.iteration},{self.phase},{self.t},{self.seed_norm:.9e},"
            f"{self.grad_norm:.9e},{self.step_norm:.9e},{self.ms:.3f}"
        )

    def as_dict(self) -> dict:
        return {
            "iter": self.iteration,
            "phase": self.phase,
            "t": self.t,
            "seed_norm": self.seed_norm,
            "grad_norm": self.grad_norm,
            "step_norm": self.step_norm,
            "ms": self.ms,
        }


@dataclass
class RunReport:
    """Persisted result of a run: config echo, log, digest, final params."""

    config: dict
    rows: list[LogRow]
    digest: str
    final_params: GeneratorParams
    final_checkpoint: str | None
    phase_counts: dict[str, int]

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "digest": self.digest,
            "final_checkpoint": self.final_checkpoint,
            "iterations": len(self.rows),
            "phase_counts": self.phase_counts,
            "log": [row.as_dict() for row in self.rows],
        }


def run_digest(cfg: RunConfig, theta: np.ndarray) -> str:
    """sha256 over the canonical config JSON and the final float32 parameters."""
    h = hashlib.sha256()
    h.update(canonical_config_json(cfg).encode("utf-8"))
    h.update(b"\x00")
    h.update(np.ascontiguousarray(theta, dtype="<f4").tobytes())
    return h.hexdigest()


def _checkpoint_arrays(params: GeneratorParams, adam: AdamState) -> dict[str, np.ndarray]:
    return {
        "theta": params.theta,
        "adam_m": adam.m,
        "adam_v": adam.v,
        "adam_step": np.array(float(adam.step)),
    }


def load_training_state(path: str | Path, latent_dim: int, truncation_psi: float) -> tuple[GeneratorParams, AdamState]:
    """Rebuild (params, adam state) from a checkpoint file."""
    _, arrays = load_checkpoint(path)
    params = GeneratorParams(theta=arrays["theta"], latent_dim=latent_dim, truncation_psi=truncation_psi)
    state = AdamState(m=arrays["adam_m"], v=arrays["adam_v"], step=int(arrays["adam_step"]))
    return params, state


def run(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    initial: tuple[GeneratorParams, AdamState] | None = None,
    score_fn: ScoreFn | None = None,
) -> RunReport:
    """Execute a full training run described by ``cfg``.

    ``out_dir`` enables file outputs (config echo, CSV log, checkpoints,
    report JSON); without it the run is in-memory only.  ``initial``
    resumes from an existing (params, adam) state, and ``score_fn``
    overrides the config-built score source (used by tests).

    A backend failure aborts the run but first writes the current
    parameters to ``last_good.dgen`` when file output is enabled.
    """
    streams = DrawStreams(cfg.run.seed)
    gen = build_generator(cfg)
    schedule = build_schedule(cfg.schedule.steps, cfg.schedule.beta_lo, cfg.schedule.beta_hi)
    if score_fn is None:
        score_fn = build_score_fn(cfg, schedule)
    if initial is None:
        params = build_init_params(cfg, gen, streams)
        adam = init_adam(gen.param_count)
    else:
        params, adam = initial

    out_path = Path(out_dir) if out_dir is not None else None
    ckpt_dir = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        ckpt_dir = out_path / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        (out_path / "config.toml").write_text(serialize_config(cfg), encoding="utf-8")

    step_cfgs = {
        PHASE_MIRROR: _phase_step_config(cfg, PHASE_MIRROR),
        PHASE_GRID: _phase_step_config(cfg, PHASE_GRID),
    }
    g = cfg.generator
    rows: list[LogRow] = []
    phase_counts = {PHASE_MIRROR: 0, PHASE_GRID: 0}

    try:
        for i, phase in enumerate(phase_sequence(cfg)):
            started = time.perf_counter()
            latent = sample_latent(gen.latent_dim, params.truncation_psi, streams.latent)
            if phase == PHASE_MIRROR:
                pose = sample_pose(streams.pose, g.pitch_limit, g.pose_radius)
                result: StepResult = mirror_ld_step(
                    gen, params, latent, pose, score_fn, schedule, step_cfgs[phase], streams
                )
            else:
                poses = sample_grid_poses(streams.pose, cfg.grid.pose_mode, g.pitch_limit, g.pose_radius)
                result = grid_ld_step(
                    gen, params, latent, poses, score_fn, schedule, step_cfgs[phase], streams
                )
            new_params, adam = adam_update(params, adam, result.grad, cfg.run.learning_rate)
            step_norm = float(np.linalg.norm(new_params.theta - params.theta))
            params = new_params
            phase_counts[phase] += 1
            rows.append(
                LogRow(
                    iteration=i,
                    phase=phase,
                    t=result.t,
                    seed_norm=result.seed_norm,
                    grad_norm=float(np.linalg.norm(result.grad)),
                    step_norm=step_norm,
                    ms=(time.perf_counter() - started) * 1000.0,
                )
            )
            if ckpt_dir is not None and cfg.run.checkpoint_every and (i + 1) % cfg.run.checkpoint_every == 0:
                save_checkpoint(ckpt_dir / f"step_{i + 1:06d}.dgen", gen.kind, _checkpoint_arrays(params, adam))
    except BackendError:
        if out_path is not None:
            save_checkpoint(out_path / "last_good.dgen", gen.kind, _checkpoint_arrays(params, adam))
        raise

    digest = run_digest(cfg, params.theta)
    final_ref = None
    if out_path is not None:
        final_ref = "final.dgen"
        save_checkpoint(out_path / final_ref, gen.kind, _checkpoint_arrays(params, adam))
    report = RunReport(
        config=config_to_dict(cfg),
        rows=rows,
        digest=digest,
        final_params=params,
        final_checkpoint=final_ref,
        phase_counts=phase_counts,
    )
    if out_path is not None:
        log_lines = [LOG_HEADER] + [row.as_csv() for row in rows]
        (out_path / "log.csv").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
        (out_path / "report.json").write_text(
            json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report
