"""Monte Carlo oracles for discrete-time simple random walks on Z^d.

Each walker draws directions from bytes of a 64-bit counter stream, rejecting
bytes above the largest multiple of 2d so every direction is exactly equally
likely.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import integrate

from .rng import draw, stream_key
from .rw import transition_probability


@dataclass(frozen=True)
class WalkEstimate:
    value: float
    se: float
    bias_bound: float
    walkers: int
    steps: int


@nb.njit(cache=True)
def _walk_batch(d, target, walkers, steps, key, stop_on_hit, count_from_zero):
    """Run walkers from O; per walker return (#visits to target, hit flag)."""
    two_d = 2 * d
    limit = (256 // two_d) * two_d
    axis = np.empty(256, dtype=np.int64)
    step = np.empty(256, dtype=np.int64)
    for b in range(256):
        axis[b] = (b % two_d) >> 1 if b < limit else -1
        step[b] = 1 if (b % two_d) & 1 else -1
    visits = np.zeros(walkers, dtype=np.int64)
    tsq = 0
    for j in range(d):
        tsq += target[j] * target[j]
    ctr = np.uint64(0)
    pos = np.zeros(d, dtype=np.int64)
    for w in range(walkers):
        for j in range(d):
            pos[j] = 0
        sq = 0
        nv = 0
        if count_from_zero and tsq == 0:
            nv = 1
        n = 0
        bits = np.uint64(0)
        left = 0
        while n < steps:
            if left == 0:
                bits = draw(key, ctr)
                ctr += np.uint64(1)
                left = 8
            b = np.int64(bits & np.uint64(0xFF))
            bits >>= np.uint64(8)
            left -= 1
            j = axis[b]
            if j < 0:
                continue
            s = step[b]
            sq += 2 * s * pos[j] + 1
            pos[j] += s
            n += 1
            if sq == tsq:
                hit = True
                for i in range(d):
                    if pos[i] != target[i]:
                        hit = False
                        break
                if hit:
                    nv += 1
                    if stop_on_hit:
                        break
        visits[w] = nv
    return visits


def _tail_integral(d, x, n):
    """Expected visits to x after time n for the continuous-time walk."""
    x = np.asarray(x, dtype=np.int64)
    val, _ = integrate.quad(
        lambda u: transition_probability(n / (u * u), x, d) * 2.0 * n / u**3 if u > 0 else 0.0,
        0.0, 1.0, epsrel=1e-10, limit=200)
    return val


def escape_mc(d: int, walkers: int = 100_000, steps: int = 1_000_000, seed: int = 0) -> WalkEstimate:
    """Fraction of walks that do not revisit O within ``steps`` steps.

    Overestimates gamma_d by the chance of a first return after the horizon,
    which is at most the expected number of late visits (reported as
    ``bias_bound``).
    """
    target = np.zeros(d, dtype=np.int64)
    v = _walk_batch(d, target, walkers, steps, stream_key(seed, 1, d), True, False)
    esc = (v == 0).astype(float)
    p = esc.mean()
    return WalkEstimate(p, float(esc.std(ddof=1) / np.sqrt(walkers)),
                        _tail_integral(d, target, steps), walkers, steps)


def hitting_mc(x, d: int, walkers: int = 100_000, steps: int = 100_000, seed: int = 0) -> WalkEstimate:
    """Fraction of walks from O that visit x within ``steps`` steps."""
    target = np.asarray(x, dtype=np.int64)
    v = _walk_batch(d, target, walkers, steps, stream_key(seed, 2, d), True, True)
    hit = (v > 0).astype(float)
    return WalkEstimate(hit.mean(), float(hit.std(ddof=1) / np.sqrt(walkers)),
                        _tail_integral(d, target, steps), walkers, steps)


def visits_mc(d: int, walkers: int = 20_000, steps: int = 100_000, seed: int = 0) -> WalkEstimate:
    """Mean number of visits to O (time 0 included); estimates G(O) = 1/gamma_d."""
    target = np.zeros(d, dtype=np.int64)
    v = _walk_batch(d, target, walkers, steps, stream_key(seed, 3, d), False, True).astype(float)
    return WalkEstimate(v.mean(), float(v.std(ddof=1) / np.sqrt(walkers)),
                        _tail_integral(d, target, steps), walkers, steps)
