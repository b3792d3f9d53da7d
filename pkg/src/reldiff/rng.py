"""Counter-based random streams, one per trajectory.

Every trajectory draws from its own Philox stream keyed by
(master seed, trajectory index); within a stream the draw order is fixed
(step-major, channel-minor), so results do not depend on scheduling or on
how many trajectories run side by side.
"""

from __future__ import annotations

import numpy as np


def trajectory_rng(master_seed: int, traj_index: int) -> np.random.Generator:
    """Independent counter-based generator for one trajectory."""
    bg = np.random.Philox(key=np.array(
        [master_seed & 0xFFFFFFFFFFFFFFFF, traj_index & 0xFFFFFFFFFFFFFFFF],
        dtype=np.uint64))
    return np.random.Generator(bg)


class NoiseChunks:
    """Chunked standard-normal supply for one trajectory's inner loop.

    Kernels consume a (chunk, channels) block and report how much they used;
    refills keep the stream order deterministic.
    """

    def __init__(self, rng: np.random.Generator, channels: int, chunk: int = 1 << 15):
        self.rng = rng
        self.channels = channels
        self.chunk = chunk
        self.block = rng.standard_normal((chunk, channels))
        self.used = 0

    def view(self):
        if self.used:
            self.block = self.rng.standard_normal((self.chunk, self.channels))
            self.used = 0
        return self.block

    def consume(self, n: int):
        self.used = int(n)
