"""One mirror step and one grid step, dissected.

The mirror step evaluates the score once at a noised render and injects
the seed twice: straight at the pose and horizontally flipped at the
yaw-mirrored pose.  The grid step tiles four renders into a 2x2 mosaic,
scores the mosaic jointly, and scatters the seed back to per-view tile
gradients at the chosen tap point (before or after super-resolution).
"""

import numpy as np

from mvdistill import (
    DEFAULT_RANK_WEIGHTS,
    DistillStepConfig,
    DrawStreams,
    GaussianScoreOracle,
    SymmetricToyGenerator,
    TimestepRange,
    build_schedule,
    grid_ld_step,
    mirror_ld_step,
    sample_grid_poses,
    sample_latent,
    sample_pose,
)

schedule = build_schedule()
gen = SymmetricToyGenerator(channels=4, height=16, width=16, latent_dim=8)
streams = DrawStreams(21)
params = gen.init_params(streams.init)
latent = sample_latent(8, 0.8, streams.latent)
oracle = GaussianScoreOracle(mean=0.5, var0=1.0, schedule=schedule)

mirror_cfg = DistillStepConfig(
    t_range=TimestepRange(0.70, 0.96), rank_weights=DEFAULT_RANK_WEIGHTS, tap="post_sr"
)
pose = sample_pose(streams.pose)
res = mirror_ld_step(gen, params, latent, pose, oracle, schedule, mirror_cfg, streams)
print(f"mirror step at yaw={pose.yaw:+.2f}:")
print(f"  drew t={res.t}, seed norm {res.seed_norm:.4f}, gradient norm {np.linalg.norm(res.grad):.4f}")

grid_cfg = DistillStepConfig(
    t_range=TimestepRange(0.30, 0.80), rank_weights=DEFAULT_RANK_WEIGHTS, tap="pre_sr"
)
poses = sample_grid_poses(streams.pose, mode="azimuth")
res = grid_ld_step(gen, params, latent, poses, oracle, schedule, grid_cfg, streams)
print(f"grid step over yaws {[f'{p.yaw:+.2f}' for p in poses]}:")
print(f"  drew t={res.t}, seed norm {res.seed_norm:.4f}, gradient norm {np.linalg.norm(res.grad):.4f}")
print("  (one score evaluation covered all four views)")
