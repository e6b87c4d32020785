"""Named, seedable random streams.

A run owns a single root seed.  Each kind of draw (timestep, noise,
latent, pose, parameter init) gets its own child stream, so toggling a
feature that consumes one stream does not shift the sequences seen by
the others.  Two ``DrawStreams`` built from the same seed produce
identical draws in every stream.
"""

from __future__ import annotations

import numpy as np

_STREAM_NAMES = ("timestep", "noise", "latent", "pose", "init")


class DrawStreams:
    """Bundle of independent ``numpy.random.Generator`` substreams."""

    timestep: np.random.Generator
    noise: np.random.Generator
    latent: np.random.Generator
    pose: np.random.Generator
    init: np.random.Generator

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(_STREAM_NAMES))
        for name, child in zip(_STREAM_NAMES, children):
            setattr(self, name, np.random.Generator(np.random.PCG64(child)))

    def __repr__(self) -> str:
        return f"DrawStreams(seed={self.seed})"
