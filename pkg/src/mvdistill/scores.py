"""Score functions: analytic oracles, noise-prediction conversion, guidance.

Score tensors are plain float64 arrays of shape (C, H, W) holding either
a score (gradient of the log-density of the noised marginal), a noise
prediction, or a gradient seed living in the same space.

The analytic oracles give the exact score of a diffused Gaussian or
Gaussian mixture.  They exist to verify the gradient plumbing end to
end, so they ignore prompt and conditioning fields entirely.  Nothing in
this module differentiates through a score model: scores are consumed
as constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, DegenerateTimestepError, DimensionError, NumericError
from .schedule import NoiseSchedule

ScoreTensor = np.ndarray
MeanLike = Union[float, np.ndarray, Callable[[tuple[int, ...]], np.ndarray]]

#: Signature every score source used by the distillation steps satisfies:
#: (x_t, t, control_image) -> score tensor of x_t's shape.
ScoreFn = Callable[..., np.ndarray]


def check_score_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate a (C, H, W) tensor: 3-D, positive dims, all entries finite."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise DimensionError(f"{name} must have shape (C, H, W) with positive dims, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite entries")
    return x


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def eps_to_score(eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Convert a noise prediction into a score: -eps_hat / sqrt(1 - alpha_bar_t)."""
    g = schedule.g(t)
    if g == 0.0:
        raise DegenerateTimestepError(f"g(t)=0 at t={t}; eps/score conversion is singular")
    return -np.asarray(eps_hat, dtype=np.float64) / g


def score_to_eps(score: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Inverse of :func:`eps_to_score`: eps_hat = -sqrt(1 - alpha_bar_t) * score."""
    return -schedule.g(t) * np.asarray(score, dtype=np.float64)


def cfg_combine(cond: np.ndarray, uncond: np.ndarray, w: float) -> np.ndarray:
    """Guidance extrapolation: uncond + w * (cond - uncond).

    The endpoints w=0 and w=1 return the inputs exactly.
    """
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    _check_same_shape(cond, uncond, "cfg_combine")
    if w == 0.0:
        return uncond.copy()
    if w == 1.0:
        return cond.copy()
    return uncond + w * (cond - uncond)


def _resolve_mean(mean: MeanLike, shape: tuple[int, ...]) -> np.ndarray:
    if callable(mean):
        mean = mean(shape)
    arr = np.asarray(mean, dtype=np.float64)
    out = np.broadcast_to(arr, shape)
    return out


def gaussian_score(
    x_t: np.ndarray,
    t: int,
    mean: MeanLike,
    var0: float,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Exact score of the forward-diffused Normal(mean, var0 * I) at step t.

    The noised marginal is Normal(sqrt(a) * mean, (a * var0 + 1 - a) * I)
    with a = alpha_bar_t, so the score is
    (sqrt(a) * mean - x_t) / (a * var0 + 1 - a).
    """
    if not (np.isfinite(var0) and var0 > 0.0):
        raise ConfigError(f"var0 must be positive, got {var0!r}")
    x_t = np.asarray(x_t, dtype=np.float64)
    a = schedule.alpha_bar(t)
    m = _resolve_mean(mean, x_t.shape)
    return (np.sqrt(a) * m - x_t) / (a * var0 + 1.0 - a)


def gmm_score(
    x_t: np.ndarray,
    t: int,
    means: Sequence[MeanLike],
    var0: float,
    weights: Sequence[float],
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Exact score of a forward-diffused scalar Gaussian mixture, elementwise.

    Each tensor entry is treated as an independent draw from the mixture
    sum_k weights[k] * Normal(means[k][entry], var0).  After diffusion to
    step t every component becomes Normal(sqrt(a) * m_k, v_t) with
    v_t = a * var0 + 1 - a, and the mixture score is the
    responsibility-weighted sum of the component scores.
    """
    if len(means) == 0:
        raise ConfigError("gmm_score requires at least one mixture component")
    if len(weights) != len(means):
        raise ConfigError(f"got {len(means)} means but {len(weights)} weights")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0.0) or not np.isclose(w.sum(), 1.0, rtol=0.0, atol=1e-12):
        raise ConfigError(f"mixture weights must be non-negative and sum to 1, got {weights!r}")
    if not (np.isfinite(var0) and var0 > 0.0):
        raise ConfigError(f"var0 must be positive, got {var0!r}")

    x_t = np.asarray(x_t, dtype=np.float64)
    a = schedule.alpha_bar(t)
    v_t = a * var0 + 1.0 - a
    mus = np.stack([np.sqrt(a) * _resolve_mean(m, x_t.shape) for m in means])
    with np.errstate(divide="ignore"):
        log_w = np.log(w).reshape((-1,) + (1,) * x_t.ndim)
    log_resp = log_w - 0.5 * (x_t - mus) ** 2 / v_t
    log_resp -= log_resp.max(axis=0, keepdims=True)
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=0, keepdims=True)
    return np.sum(resp * (mus - x_t), axis=0) / v_t


@dataclass(frozen=True)
class ScoreRequest:
    """One scoring request against an external backend."""

    x_t: np.ndarray
    t: int
    prompt: str = ""
    negative_prompt: str = ""
    cfg_weight: float = 7.5
    control_image: np.ndarray | None = None
    control_weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_t", check_score_tensor(self.x_t, "x_t"))
        if self.control_image is not None:
            object.__setattr__(self, "control_image", check_score_tensor(self.control_image, "control_image"))
        if not (np.isfinite(self.cfg_weight) and self.cfg_weight >= 0.0):
            raise ConfigError(f"cfg_weight must be >= 0, got {self.cfg_weight!r}")
        if not (np.isfinite(self.control_weight) and 0.0 <= self.control_weight <= 1.0):
            raise ConfigError(f"control_weight must lie in [0, 1], got {self.control_weight!r}")


@dataclass
class GaussianScoreOracle:
    """Callable score source for a single diffused Gaussian target."""

    mean: MeanLike
    var0: float
    schedule: NoiseSchedule

    def __call__(self, x_t: np.ndarray, t: int, control_image: np.ndarray | None = None) -> np.ndarray:
        return gaussian_score(x_t, t, self.mean, self.var0, self.schedule)


@dataclass
class GmmScoreOracle:
    """Callable score source for a diffused Gaussian-mixture target."""

    means: Sequence[MeanLike]
    var0: float
    weights: Sequence[float]
    schedule: NoiseSchedule

    def __call__(self, x_t: np.ndarray, t: int, control_image: np.ndarray | None = None) -> np.ndarray:
        return gmm_score(x_t, t, self.means, self.var0, self.weights, self.schedule)
