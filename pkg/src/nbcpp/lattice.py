"""Index bookkeeping for Z^d boxes and the torus (Z/LZ)^d.

Torus sites are stored flat in C order, so axis j has stride L**(d-1-j) and the
origin is index 0.
"""
from __future__ import annotations

from collections import Counter
from math import factorial

import numpy as np


def strides(L: int, d: int) -> np.ndarray:
    return np.array([L ** (d - 1 - j) for j in range(d)], dtype=np.int64)


def site_index(x, L: int) -> np.ndarray | int:
    """Flat torus index of lattice point(s) x (coordinates taken mod L)."""
    x = np.asarray(x, dtype=np.int64)
    d = x.shape[-1]
    idx = (np.mod(x, L) * strides(L, d)).sum(axis=-1)
    return int(idx) if idx.ndim == 0 else idx


def site_coords(idx, L: int, d: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    return (idx[..., None] // strides(L, d)) % L


def unit(j: int, d: int, k: int = 1) -> tuple:
    v = [0] * d
    v[j] = k
    return tuple(v)


def neighbors(x, d: int) -> list[tuple]:
    x = tuple(int(a) for a in x)
    out = []
    for j in range(d):
        for s in (-1, 1):
            y = list(x)
            y[j] += s
            out.append(tuple(y))
    return out


def l1_ball(R: int, d: int) -> np.ndarray:
    """All integer points with |x|_1 <= R, shape (n, d)."""
    pts = [()]
    for j in range(d):
        new = []
        for p in pts:
            used = sum(abs(v) for v in p)
            rem = R - used
            for v in range(-rem, rem + 1):
                new.append(p + (v,))
        pts = new
    return np.array(pts, dtype=np.int64).reshape(-1, d)


def canonical(x) -> tuple:
    """Representative of x under coordinate permutations and reflections."""
    return tuple(sorted((abs(int(v)) for v in x), reverse=True))


def class_size(c) -> int:
    """Number of lattice points whose canonical form is c."""
    m = factorial(len(c))
    for v in Counter(c).values():
        m //= factorial(v)
    return m * 2 ** sum(1 for v in c if v)


def canonical_classes(R: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical points of the l1 ball of radius R with their multiplicities.

    Points are sorted by l1 norm, then lexicographically; the origin comes first.
    """
    out = []

    def rec(prefix, maxv, rem, k):
        if k == 0:
            out.append(prefix)
            return
        for v in range(0, min(maxv, rem) + 1):
            rec(prefix + (v,), v, rem - v, k - 1)

    rec((), R, R, d)  # each prefix value bounds the next, so tuples are nonincreasing
    reps = sorted(out, key=lambda c: (sum(c), c))
    mult = np.array([class_size(c) for c in reps], dtype=np.int64)
    return np.array(reps, dtype=np.int64).reshape(-1, d), mult
