"""Finite-difference validation of generator vector-Jacobian products.

For a detached seed tensor g, the scalar objective f(theta) =
<g, render_tap(theta)> has gradient equal to the injected VJP.  Central
differences of f at randomly probed coordinates therefore give an
independent check of the whole injection chain, including the SR stage
when the tap is post-SR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .generators import TAP_PRE_SR, Generator, GeneratorParams, Pose


@dataclass(frozen=True)
class GradCheckRow:
    probe: int
    coord: int
    analytic: float
    numeric: float
    rel_err: float


def gradient_check(
    gen: Generator,
    params: GeneratorParams,
    latent: np.ndarray,
    pose: Pose,
    probe_seed: np.ndarray,
    tap: str,
    n_probes: int,
    rng: np.random.Generator,
    h: float = 1e-3,
) -> list[GradCheckRow]:
    """Compare injected gradients against central differences at n_probes coords."""
    analytic = gen.inject_gradient(params, latent, pose, probe_seed, tap=tap)

    def objective(theta: np.ndarray) -> float:
        out = gen.render(params.with_theta(theta), latent, pose)
        tapped = out.low_res if tap == TAP_PRE_SR else out.high_res
        # fsum keeps the difference quotient roundoff-limited well below
        # the comparison tolerances even for exactly-linear generators
        return math.fsum((probe_seed * tapped).ravel())

    n = gen.param_count
    count = min(int(n_probes), n)
    coords = rng.choice(n, size=count, replace=False) if count else np.zeros(0, dtype=int)
    rows = []
    for probe, coord in enumerate(sorted(int(c) for c in coords)):
        theta_plus = params.theta.copy()
        theta_plus[coord] += h
        theta_minus = params.theta.copy()
        theta_minus[coord] -= h
        numeric = (objective(theta_plus) - objective(theta_minus)) / (2.0 * h)
        denom = max(abs(analytic[coord]), abs(numeric), 1e-12)
        rows.append(
            GradCheckRow(
                probe=probe,
                coord=coord,
                analytic=float(analytic[coord]),
                numeric=numeric,
                rel_err=abs(analytic[coord] - numeric) / denom,
            )
        )
    return rows


def max_rel_err(rows: list[GradCheckRow]) -> float:
    return max((row.rel_err for row in rows), default=0.0)


def rows_as_csv(rows: list[GradCheckRow]) -> str:
    lines = ["probe,coord,analytic,numeric,rel_err"]
    lines += [
        f"{r.probe},{r.coord},{r.analytic:.12e},{r.numeric:.12e},{r.rel_err:.6e}" for r in rows
    ]
    return "\n".join(lines) + "\n"
