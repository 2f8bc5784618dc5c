"""Counter-based random stream (SplitMix64 output function) for the kernels.

A stream is a 64-bit key plus a counter; draw i is mix(key + i * GOLDEN). Keys
for replica r of master seed s come from ``numpy.random.SeedSequence([s, r])``,
so adding replicas never changes existing streams.
"""
from __future__ import annotations

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def stream_key(seed: int, *path: int) -> np.uint64:
    """64-bit key for the substream identified by (seed, *path)."""
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return np.uint64(ss.generate_state(1, dtype=np.uint64)[0])


@nb.njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always", cache=True)
def draw(key, ctr):
    """Raw 64-bit draw number ctr of the stream."""
    return mix64(np.uint64(key) + np.uint64(ctr) * GOLDEN)


@nb.njit(inline="always", cache=True)
def to_open01(z):
    """Map 64 random bits to a double in (0, 1)."""
    return (np.float64(z >> _S11) + 0.5) * _INV53


@nb.njit(cache=True)
def uniforms(key, start, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = to_open01(draw(key, np.uint64(start + i)))
    return out
