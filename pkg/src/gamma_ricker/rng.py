"""Counter-based random streams built on the SplitMix64 finalizer.

Every draw is a pure function of (seed, stream id, counter), so an ensemble
can be split over any number of workers and still produce identical numbers.
Streams for trajectory ``i`` are keyed by ``stream_keys(seed, ids, tag)``; the
``tag`` keeps initial-condition draws and noise draws in separate streams.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_TO_UNIT = 2.0**-53

TAG_INIT = 0x1D1
TAG_NOISE = 0x7E5


def mix64(z):
    """SplitMix64 output function on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(x):
    return np.uint64(int(x) & _MASK64)


def stream_keys(seed, ids, tag):
    ids = np.asarray(ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = mix64(_u64(seed) * _GOLDEN + _u64(tag))
        return mix64(base + (ids + np.uint64(1)) * _GOLDEN)


def raw64(keys, counter):
    """64 random bits for each key at a scalar or per-key counter."""
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(keys + (counter + np.uint64(1)) * _GOLDEN)


def uniforms(keys, counter):
    """Uniform(0, 1) doubles, never exactly 0 or 1."""
    bits = raw64(keys, counter) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * _TO_UNIT


def normals(keys, counter):
    return ndtri(uniforms(keys, counter))


class SplitMixStream:
    """Sequential view of one counter-based stream.

    Exposes ``random()`` and ``standard_normal()`` so it can stand in for a
    :class:`numpy.random.Generator` in the scalar samplers.
    """

    def __init__(self, seed, stream_id=0, tag=TAG_INIT):
        self.key = stream_keys(seed, np.array([stream_id]), tag)
        self.counter = 0

    def random(self):
        u = float(uniforms(self.key, self.counter)[0])
        self.counter += 1
        return u

    def standard_normal(self):
        return float(ndtri(self.random()))
