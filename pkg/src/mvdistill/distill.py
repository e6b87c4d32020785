"""Gradient engines: seed construction, rank weighing, mirror and grid steps.

Seeds are gradients of the training loss with respect to the render at
the chosen tap point; the optimizer performs descent on them.  For the
likelihood objective the seed is -sqrt(alpha_bar_t) * score, so descent
moves renders up the score field.  For the noise-matching objective the
seed is omega * (eps_hat - eps).

Rank weighing reshapes a (C, H, W) seed into a C x (H*W) matrix, takes
its full SVD, damps the singular values with per-rank weights, and
recomposes.  The first (largest) rank always keeps weight 1.

The mirror step reuses one score evaluation for a yaw-symmetric pose
pair by horizontally flipping the seed before injecting it at the
mirrored pose.  The grid step tiles four renders into a 2x2 mosaic,
scores the mosaic in a single evaluation so the score source sees all
views jointly, and scatters the seed back to per-view gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .generators import TAP_POST_SR, TAP_PRE_SR, Generator, GeneratorParams, Pose, flip_horizontal, mirror_pose
from .rng import DrawStreams
from .schedule import NoiseSchedule, TimestepRange, forward_diffuse, sample_timestep
from .scores import ScoreFn, score_to_eps

MODE_LD = "ld"
MODE_SDS = "sds"


@dataclass(frozen=True)
class RankWeights:
    """Non-increasing per-rank damping factors in [0, 1], leading weight 1."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) == 0:
            raise ConfigError("rank weights must be non-empty")
        if vals[0] != 1.0:
            raise ConfigError(f"leading rank weight must be 1, got {vals[0]!r}")
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ConfigError(f"rank weights must lie in [0, 1], got {vals!r}")
        if any(a < b for a, b in zip(vals, vals[1:])):
            raise ConfigError(f"rank weights must be non-increasing, got {vals!r}")

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


#: Linearly decaying weights used for 4-channel score tensors.
DEFAULT_RANK_WEIGHTS = RankWeights((1.0, 0.75, 0.5, 0.25))


def sds_gradient(eps_hat: np.ndarray, eps: np.ndarray, omega: float) -> np.ndarray:
    """Noise-matching gradient seed: omega * (eps_hat - eps)."""
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps_hat.shape != eps.shape:
        raise DimensionError(f"eps_hat shape {eps_hat.shape} != eps shape {eps.shape}")
    return omega * (eps_hat - eps)


def ld_seed(score: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Likelihood gradient seed dL/dx0 = -sqrt(alpha_bar_t) * score.

    Gradient descent on this seed increases the render's log-likelihood
    under the score source's distribution.
    """
    return -math.sqrt(schedule.alpha_bar(t)) * np.asarray(score, dtype=np.float64)


def rank_weigh(seed: np.ndarray, rw: RankWeights) -> np.ndarray:
    """Damp the singular values of the channels x pixels matrix of ``seed``.

    With all-ones weights the input is reconstructed; lower ranks, which
    tend to carry flat color tints, are attenuated by the tail weights.
    """
    seed = np.asarray(seed, dtype=np.float64)
    if seed.ndim != 3:
        raise DimensionError(f"seed must have shape (C, H, W), got {seed.shape}")
    if not np.all(np.isfinite(seed)):
        raise NumericError("rank_weigh input contains non-finite entries")
    c, h, w = seed.shape
    if len(rw) != c:
        raise DimensionError(f"rank weights length {len(rw)} != channel count {c}")
    flat = seed.reshape(c, h * w)
    u, s, vt = np.linalg.svd(flat, full_matrices=False)
    weights = rw.as_array()[: s.shape[0]]
    return ((u * (weights * s)) @ vt).reshape(c, h, w)


@dataclass(frozen=True)
class DistillStepConfig:
    """Per-phase knobs for one distillation step."""

    mode: str = MODE_LD
    t_range: TimestepRange = TimestepRange(0.02, 0.98)
    cfg_weight: float = 7.5
    rank_weights: RankWeights | None = None
    tap: str = TAP_POST_SR
    omega_const: float = 1.0
    mirror_average: bool = False

    def __post_init__(self) -> None:
        if self.mode not in (MODE_LD, MODE_SDS):
            raise ConfigError(f"mode must be 'ld' or 'sds', got {self.mode!r}")
        if self.tap not in (TAP_PRE_SR, TAP_POST_SR):
            raise ConfigError(f"tap must be 'pre_sr' or 'post_sr', got {self.tap!r}")


@dataclass(frozen=True)
class StepResult:
    """Parameter gradient of one step plus its logging diagnostics."""

    grad: np.ndarray
    t: int
    seed_norm: float


def _make_seed(
    score: np.ndarray,
    eps: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    cfg: DistillStepConfig,
) -> np.ndarray:
    if cfg.mode == MODE_SDS:
        seed = sds_gradient(score_to_eps(score, t, schedule), eps, cfg.omega_const)
    else:
        seed = ld_seed(score, t, schedule)
    if cfg.rank_weights is not None:
        seed = rank_weigh(seed, cfg.rank_weights)
    return seed


def mirror_ld_step(
    gen: Generator,
    params: GeneratorParams,
    latent: np.ndarray,
    pose: Pose,
    score_fn: ScoreFn,
    schedule: NoiseSchedule,
    cfg: DistillStepConfig,
    streams: DrawStreams,
) -> StepResult:
    """One distillation step over a yaw-symmetric pose pair.

    Renders the pose, noises the full-resolution render once (one t from
    ``cfg.t_range``, one eps), evaluates the score once, and injects the
    seed at the pose and its horizontal flip at the mirrored pose.  The
    mirror path always taps after the SR stage, where resolutions match.

    Draw order per step: one timestep from ``streams.timestep``, then
    one noise tensor from ``streams.noise``.
    """
    if cfg.tap != TAP_POST_SR:
        raise ConfigError(f"mirror step requires tap='post_sr', got {cfg.tap!r}")
    out = gen.render(params, latent, pose)
    x0 = out.high_res
    t = sample_timestep(cfg.t_range, schedule, streams.timestep)
    eps = streams.noise.standard_normal(x0.shape)
    x_t = forward_diffuse(x0, t, eps, schedule)
    score = score_fn(x_t, t, control_image=x0)
    seed = _make_seed(score, eps, t, schedule, cfg)

    grad = gen.inject_gradient(params, latent, pose, seed, tap=TAP_POST_SR)
    grad = grad + gen.inject_gradient(
        params, latent, mirror_pose(pose), flip_horizontal(seed), tap=TAP_POST_SR
    )
    if cfg.mirror_average:
        grad = 0.5 * grad
    return StepResult(grad=grad, t=t, seed_norm=float(np.linalg.norm(seed)))


def grid_assemble(views: Sequence[np.ndarray]) -> np.ndarray:
    """Tile four (C, H, W) tensors into (C, 2H, 2W), row-major order."""
    if len(views) != 4:
        raise DimensionError(f"grid needs exactly 4 tiles, got {len(views)}")
    tiles = [np.asarray(v, dtype=np.float64) for v in views]
    shape = tiles[0].shape
    if any(t.shape != shape for t in tiles) or len(shape) != 3:
        raise DimensionError(f"grid tiles must share one (C, H, W) shape, got {[t.shape for t in tiles]}")
    top = np.concatenate([tiles[0], tiles[1]], axis=2)
    bottom = np.concatenate([tiles[2], tiles[3]], axis=2)
    return np.concatenate([top, bottom], axis=1)


def grid_scatter(grid_grad: np.ndarray) -> list[np.ndarray]:
    """Exact inverse partition of :func:`grid_assemble`."""
    grid_grad = np.asarray(grid_grad, dtype=np.float64)
    if grid_grad.ndim != 3:
        raise DimensionError(f"grid must have shape (C, 2H, 2W), got {grid_grad.shape}")
    c, hh, ww = grid_grad.shape
    if hh % 2 or ww % 2:
        raise DimensionError(f"grid spatial dims must be even, got {grid_grad.shape}")
    h, w = hh // 2, ww // 2
    return [
        np.ascontiguousarray(grid_grad[:, :h, :w]),
        np.ascontiguousarray(grid_grad[:, :h, w:]),
        np.ascontiguousarray(grid_grad[:, h:, :w]),
        np.ascontiguousarray(grid_grad[:, h:, w:]),
    ]


def grid_ld_step(
    gen: Generator,
    params: GeneratorParams,
    latent: np.ndarray,
    poses: Sequence[Pose],
    score_fn: ScoreFn,
    schedule: NoiseSchedule,
    cfg: DistillStepConfig,
    streams: DrawStreams,
) -> StepResult:
    """One distillation step over a jointly-scored 2x2 grid of poses.

    Renders four poses, assembles the tiles at the tap resolution,
    noises the whole grid with a single (t, eps) draw, scores it in one
    evaluation, scatters the seed back into tiles, and injects each tile
    at ``cfg.tap`` for its pose.  Draw order matches the mirror step.
    """
    if len(poses) != 4:
        raise ConfigError(f"grid step needs exactly 4 poses, got {len(poses)}")
    if len(set(poses)) != 4:
        raise ConfigError("grid step requires 4 distinct poses")
    outs = [gen.render(params, latent, p) for p in poses]
    tiles = [o.low_res if cfg.tap == TAP_PRE_SR else o.high_res for o in outs]
    grid = grid_assemble(tiles)
    t = sample_timestep(cfg.t_range, schedule, streams.timestep)
    eps = streams.noise.standard_normal(grid.shape)
    x_t = forward_diffuse(grid, t, eps, schedule)
    score = score_fn(x_t, t, control_image=grid)
    seed = _make_seed(score, eps, t, schedule, cfg)

    grad = np.zeros(gen.param_count)
    for pose, tile_grad in zip(poses, grid_scatter(seed)):
        grad += gen.inject_gradient(params, latent, pose, tile_grad, tap=cfg.tap)
    return StepResult(grad=grad, t=t, seed_norm=float(np.linalg.norm(seed)))
