"""Deterministic, seed-keyed Gaussian increment streams.

Increments are generated counter-style: sample i of a stream is a pure
function of (master_seed, channel, replica_id, i), with no generator state.
This is what lets the full and effective systems consume the same Brownian
path, lets coarse steps be exact sums of fine ones, and makes parallel
replica scheduling irrelevant to the output.

Mechanics: a Philox-4x64 bit generator keyed by (seed, channel, replica)
produces the i-th 64-bit word at counter block i//4, lane i%4; the word is
mapped to a uniform in (0,1) and through the inverse normal CDF, scaled by
sqrt(base_step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtri

_U64 = (1 << 64) - 1


class Channel(Enum):
    """Independent scalar Brownian motions driving the systems.

    W1, W2, W3 drive the four-equation model (slow field, fast field,
    particle pair); W is the single shared motion of the reduced model.
    """

    W1 = 0
    W2 = 1
    W3 = 2
    W = 3


@dataclass(frozen=True)
class NoiseStream:
    """One replica's increments on one channel at a fixed base step.

    increments(i) ~ N(0, base_step), independent across channels and
    replicas, reproducible from the key alone.
    """

    master_seed: int
    channel: Channel
    replica_id: int
    base_step: float

    def __post_init__(self):
        if not 0 <= self.replica_id < (1 << 32):
            raise ValueError("replica_id must fit in 32 bits")
        if not self.base_step > 0:
            raise ValueError("base_step must be positive")

    def _key(self) -> int:
        lane = (self.channel.value << 32) | self.replica_id
        return (self.master_seed & _U64) | (lane << 64)

    def increments(self, from_index: int, count: int) -> np.ndarray:
        """Gaussian increments for indices [from_index, from_index + count)."""
        if count < 1:
            raise ValueError("count must be >= 1")
        if from_index < 0:
            raise ValueError("from_index must be >= 0")
        block0 = from_index >> 2
        block1 = (from_index + count - 1) >> 2
        bg = np.random.Philox(counter=block0, key=self._key())
        raw = bg.random_raw(4 * (block1 - block0 + 1))
        lane0 = from_index - 4 * block0
        words = raw[lane0 : lane0 + count]
        # 53-bit uniform in the open interval (0,1); endpoints would map to +-inf
        uniform = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return ndtri(uniform) * math.sqrt(self.base_step)

    def coarse_increments(self, from_coarse: int, count: int, factor: int) -> np.ndarray:
        """Increments at step factor*base_step: exact sums over fine indices.

        Coarse index j covers fine indices [j*factor, (j+1)*factor).
        """
        if factor < 1:
            raise ValueError("factor must be >= 1")
        fine = self.increments(from_coarse * factor, count * factor)
        return fine.reshape(count, factor).sum(axis=1)


def stacked_increments(streams, from_index: int, count: int) -> np.ndarray:
    """Increments for several streams as a (len(streams), count) array."""
    return np.stack([s.increments(from_index, count) for s in streams])


def stacked_coarse_increments(streams, from_coarse: int, count: int, factor: int) -> np.ndarray:
    return np.stack([s.coarse_increments(from_coarse, count, factor) for s in streams])
