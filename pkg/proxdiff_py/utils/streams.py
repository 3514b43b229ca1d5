"""
Per-chain random streams.

Each chain owns a Philox generator seeded from SeedSequence(seed).spawn(...)
so a chain's noise depends only on (seed, chain index). Splitting the chains
across workers therefore leaves every draw unchanged.
"""

from typing import Iterable, List, Optional, Sequence

import numpy as np


class ChainStreams:
    """Independent counter-based normal streams, one per chain."""

    def __init__(self, seed: int, chains: int, indices: Optional[Sequence[int]] = None):
        if chains < 1:
            raise ValueError(f"chains must be positive, got {chains}")
        self.seed = int(seed)
        self.chains = int(chains)
        children = np.random.SeedSequence(self.seed).spawn(self.chains)
        self.indices: List[int] = list(range(self.chains)) if indices is None else [int(i) for i in indices]
        self._generators = [np.random.Generator(np.random.Philox(children[i])) for i in self.indices]

    def __len__(self) -> int:
        return len(self._generators)

    def subset(self, indices: Iterable[int]) -> 'ChainStreams':
        """Streams for a subset of chain indices, identical to the full set's."""
        return ChainStreams(self.seed, self.chains, indices=[self.indices[i] for i in indices])

    def normal(self, steps: int, dim: int) -> np.ndarray:
        """Next ``steps`` standard normal draws of every chain, shape (steps, chains, dim)."""
        if steps == 0:
            return np.zeros((0, len(self), dim))
        draws = np.stack([g.standard_normal((steps, dim)) for g in self._generators], axis=1)
        return draws


def noise_blocks(streams: ChainStreams, steps: int, dim: int, block: int = 256):
    """Yield per-step noise arrays of shape (chains, dim), drawn blockwise."""
    done = 0
    while done < steps:
        size = min(block, steps - done)
        chunk = streams.normal(size, dim)
        for i in range(size):
            yield chunk[i]
        done += size
