"""Noise-prediction to score conversion and the discrete schedule table.

The engine and this server must agree on the schedule constants; the
conversion score = -eps_hat / sqrt(1 - alpha_bar_t) is checked against a
cross-component golden file produced by the engine.
"""

from __future__ import annotations

import numpy as np

DEFAULT_STEPS = 1000
DEFAULT_BETA_LO = 1e-4
DEFAULT_BETA_HI = 2e-2


class ScheduleTable:
    """Cumulative alpha-bar table for a linear beta ramp, 1-indexed."""

    def __init__(
        self,
        steps: int = DEFAULT_STEPS,
        beta_lo: float = DEFAULT_BETA_LO,
        beta_hi: float = DEFAULT_BETA_HI,
    ) -> None:
        if steps < 1 or not 0.0 < beta_lo <= beta_hi < 1.0:
            raise ValueError(f"bad schedule constants: steps={steps}, betas=({beta_lo}, {beta_hi})")
        self.steps = int(steps)
        betas = np.linspace(beta_lo, beta_hi, self.steps)
        self.alpha_bars = np.cumprod(1.0 - betas)

    def alpha_bar(self, t: int) -> float:
        if not 1 <= t <= self.steps:
            raise ValueError(f"timestep {t} outside [1, {self.steps}]")
        return float(self.alpha_bars[t - 1])


def eps_to_score(eps_hat: np.ndarray, alpha_bar: float) -> np.ndarray:
    """score = -eps_hat / sqrt(1 - alpha_bar)."""
    g = np.sqrt(1.0 - alpha_bar)
    if g == 0.0:
        raise ValueError("alpha_bar == 1 makes the conversion singular")
    return -np.asarray(eps_hat, dtype=np.float64) / g
