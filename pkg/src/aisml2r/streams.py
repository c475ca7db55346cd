"""Keyed, counter-based random streams.

Every draw is a pure function of ``(master_seed, key, block)``.  Paths are
grouped into fixed-size blocks; path ``p`` of a level always lives in block
``p // block_size`` at row ``p % block_size``, so the sample set does not
depend on how blocks are scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BLOCK_SIZE = 4096

# Purpose tags keep pilot and production draws disjoint.
ESTIMATION = 0
PILOT_V1 = 1
PILOT_VAR = 2
PILOT_THETA = 3
PILOT_THETA_V1 = 4
PILOT_THETA_VAR = 5
CRUDE = 6


@dataclass(frozen=True)
class RngStream:
    """Stream for one (replication, level) pair; blocks index the paths."""

    master_seed: int
    key: tuple[int, ...]
    block_size: int = DEFAULT_BLOCK_SIZE

    def generator(self, block: int) -> np.random.Generator:
        entropy = [int(self.master_seed) & 0xFFFFFFFFFFFFFFFF, *self.key, int(block)]
        if any(e < 0 for e in entropy):
            raise ValueError(f"stream key components must be non-negative: {entropy}")
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def draws(self, block: int, n_steps: int, uniforms: bool) -> tuple[np.ndarray, np.ndarray | None]:
        """Standard normals of shape ``(n_steps, block_size)`` and, when asked,
        uniforms on (0, 1] of the same shape drawn right after them."""
        gen = self.generator(block)
        z = gen.standard_normal((n_steps, self.block_size))
        u = 1.0 - gen.random((n_steps, self.block_size)) if uniforms else None
        return z, u


@dataclass(frozen=True)
class Streams:
    """Factory of per-level streams sharing a key prefix.

    The prefix is typically ``(purpose, experiment_index, replication)``; the
    level index is appended by :meth:`level`.
    """

    master_seed: int
    prefix: tuple[int, ...] = (ESTIMATION, 0, 0)
    block_size: int = DEFAULT_BLOCK_SIZE

    def level(self, level: int) -> RngStream:
        return RngStream(self.master_seed, (*self.prefix, int(level)), self.block_size)

    def child(self, *extra: int) -> "Streams":
        return Streams(self.master_seed, (*self.prefix, *map(int, extra)), self.block_size)

    @classmethod
    def for_replication(
        cls,
        master_seed: int,
        replication: int,
        *,
        purpose: int = ESTIMATION,
        experiment: int = 0,
        block_size: int = DEFAULT_BLOCK_SIZE,
    ) -> "Streams":
        return cls(master_seed, (purpose, experiment, replication), block_size)
