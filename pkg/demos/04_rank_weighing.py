"""Rank weighing of score tensors.

A (C, H, W) gradient seed is reshaped to channels x pixels, decomposed
by SVD, and its singular values damped with linearly decaying weights --
the leading rank (which carries most of the stylization signal) is kept
intact while lower ranks (flat color tints) are attenuated.
"""

import numpy as np

from mvdistill import DEFAULT_RANK_WEIGHTS, rank_weigh

rng = np.random.default_rng(5)

# construct a seed with known singular values: orthogonal channel rows
q, _ = np.linalg.qr(rng.standard_normal((256, 4)))
norms = np.array([4.0, 3.0, 2.0, 1.0])
seed = (q * norms).T.reshape(4, 16, 16)

print(f"weights: {DEFAULT_RANK_WEIGHTS.values}")
print(f"input singular values:  {np.linalg.svd(seed.reshape(4, 256), compute_uv=False)}")
out = rank_weigh(seed, DEFAULT_RANK_WEIGHTS)
print(f"output singular values: {np.linalg.svd(out.reshape(4, 256), compute_uv=False)}")

print("\nenergy kept per rank (weight^2):")
for k, w in enumerate(DEFAULT_RANK_WEIGHTS.values):
    print(f"  rank {k}: {100 * w * w:5.1f}%")

random_seed = rng.standard_normal((4, 16, 16))
kept = np.linalg.norm(rank_weigh(random_seed, DEFAULT_RANK_WEIGHTS)) / np.linalg.norm(random_seed)
print(f"\nFrobenius fraction kept on a random seed: {kept:.3f}")
