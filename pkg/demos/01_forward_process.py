"""Forward diffusion basics: schedules, noising, and timestep windows.

Builds the default 1000-step linear-beta schedule, walks a tensor
through the forward process at a few timesteps, and shows how the
fractional timestep windows used by the mirror and grid phases map onto
integer steps.
"""

import numpy as np

from mvdistill import DrawStreams, TimestepRange, build_schedule, forward_diffuse, sample_timestep

schedule = build_schedule(T=1000, beta_lo=1e-4, beta_hi=2e-2)
print(f"schedule: T={schedule.T}")
for t in (1, 100, 500, 900, 1000):
    print(f"  t={t:4d}  alpha_bar={schedule.alpha_bar(t):.6f}  g(t)={schedule.g(t):.4f}")

rng = np.random.default_rng(0)
x0 = np.full((4, 16, 16), 1.0)
print("\nnoising a constant tensor x0 = 1:")
for t in (50, 500, 950):
    x_t = forward_diffuse(x0, t, rng.standard_normal(x0.shape), schedule)
    a = schedule.alpha_bar(t)
    print(
        f"  t={t:4d}  mean(x_t)={x_t.mean():+.4f} (signal sqrt(a)={np.sqrt(a):.4f})"
        f"  std={x_t.std():.4f} (noise g={schedule.g(t):.4f})"
    )

print("\ntimestep windows (mirror phase vs grid phase):")
streams = DrawStreams(7)
for name, window in (("mirror", TimestepRange(0.70, 0.96)), ("grid", TimestepRange(0.30, 0.80))):
    draws = [sample_timestep(window, schedule, streams.timestep) for _ in range(8)]
    print(f"  {name:6s} {window.lo:.2f}-{window.hi:.2f} -> {draws}")
