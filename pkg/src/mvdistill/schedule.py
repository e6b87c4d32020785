"""Discrete forward diffusion: noise schedule, diffusion map, timestep draws.

The schedule stores the per-step variance increments beta_t, the
cumulative signal-retention products alpha_bar_t = prod_{s<=t}(1 - beta_s),
and the derived noise scale g(t) = sqrt(1 - alpha_bar_t).  Timesteps are
1-indexed integers in [1, T]; fractional ranges map onto them via
round(frac * T) clamped to [1, T].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, TimestepOutOfRangeError

DEFAULT_STEPS = 1000
DEFAULT_BETA_LO = 1e-4
DEFAULT_BETA_HI = 2e-2


def _frozen_array(values: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable table of forward-process constants for T discrete steps."""

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    g_of_t: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.T, (int, np.integer)) or isinstance(self.T, bool) or self.T < 1:
            raise ConfigError(f"T must be an integer >= 1, got {self.T!r}")
        for name in ("betas", "alpha_bars", "g_of_t"):
            arr = _frozen_array(np.atleast_1d(getattr(self, name)))
            if arr.shape != (self.T,):
                raise ConfigError(f"{name} must have length T={self.T}, got shape {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ConfigError("betas must lie strictly inside (0, 1)")
        expected = np.cumprod(1.0 - self.betas)
        if not np.allclose(self.alpha_bars, expected, rtol=1e-12, atol=0.0):
            raise ConfigError("alpha_bars must equal cumprod(1 - betas) to 1e-12 relative error")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ConfigError("alpha_bars must be strictly decreasing")
        if not np.array_equal(self.g_of_t, np.sqrt(1.0 - self.alpha_bars)):
            raise ConfigError("g_of_t must equal sqrt(1 - alpha_bars) exactly")

    def _check_t(self, t: int) -> int:
        if not isinstance(t, (int, np.integer)) or isinstance(t, bool):
            raise TimestepOutOfRangeError(f"timestep must be an integer, got {t!r}")
        if not 1 <= t <= self.T:
            raise TimestepOutOfRangeError(f"timestep {t} outside [1, {self.T}]")
        return int(t)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product alpha_bar_t for a 1-indexed timestep."""
        return float(self.alpha_bars[self._check_t(t) - 1])

    def g(self, t: int) -> float:
        """Noise scale g(t) = sqrt(1 - alpha_bar_t) for a 1-indexed timestep."""
        return float(self.g_of_t[self._check_t(t) - 1])


def build_schedule(
    T: int = DEFAULT_STEPS,
    beta_lo: float = DEFAULT_BETA_LO,
    beta_hi: float = DEFAULT_BETA_HI,
) -> NoiseSchedule:
    """Build a linear-beta schedule with T steps.

    beta interpolates linearly from ``beta_lo`` at t=1 to ``beta_hi`` at
    t=T (a single step uses ``beta_lo``).
    """
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T < 1:
        raise ConfigError(f"schedule.steps must be an integer >= 1, got {T!r}")
    if not np.isfinite(beta_lo) or not 0.0 < beta_lo < 1.0:
        raise ConfigError(f"schedule.beta_lo must lie in (0, 1), got {beta_lo!r}")
    if not np.isfinite(beta_hi) or not 0.0 < beta_hi < 1.0:
        raise ConfigError(f"schedule.beta_hi must lie in (0, 1), got {beta_hi!r}")
    if beta_lo > beta_hi:
        raise ConfigError(f"schedule.beta_lo={beta_lo!r} must not exceed schedule.beta_hi={beta_hi!r}")
    betas = np.linspace(beta_lo, beta_hi, int(T), dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=int(T), betas=betas, alpha_bars=alpha_bars, g_of_t=np.sqrt(1.0 - alpha_bars))


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward process: sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps."""
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    a = schedule.alpha_bar(t)
    return np.sqrt(a) * x0 + schedule.g(t) * eps


@dataclass(frozen=True)
class TimestepRange:
    """Fractional timestep window [lo, hi] with 0 <= lo < hi <= 1."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ConfigError(f"timestep range bounds must be finite, got ({self.lo!r}, {self.hi!r})")
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ConfigError(f"timestep range requires 0 <= lo < hi <= 1, got ({self.lo!r}, {self.hi!r})")


def sample_timestep(r: TimestepRange, schedule: NoiseSchedule, rng: np.random.Generator) -> int:
    """Draw an integer t with t/T uniform in [lo, hi], clamped to [1, T]."""
    u = rng.uniform(r.lo, r.hi)
    return int(np.clip(np.rint(u * schedule.T), 1, schedule.T))
