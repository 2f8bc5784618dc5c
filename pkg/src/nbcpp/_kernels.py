"""Compiled event loops.

Sites are flat C-order torus indices. Every event costs two draws from the
replica's counter stream: one for the exponential waiting time and one that
picks the site (integer part of u*n) and the event kind (fractional part).

Physical values are eta = w * exp(ls); the drift only moves ls, so events touch
one weight each.
"""
import numba as nb
import numpy as np

from .rng import draw, to_open01

RENORM = 300.0
OVERFLOW = 1e300

OK, MAX_EVENTS, OVERFLOWED, STALLED = 0, 1, 2, 3


@nb.njit(inline="always", cache=True)
def _div(x, s, inv):
    # exact x // s for nonnegative x < 2**50 using a float reciprocal
    q = np.int64(x * inv)
    r = x - q * s
    if r < 0:
        q -= 1
    elif r >= s:
        q += 1
    return q


@nb.njit(inline="always", cache=True)
def neighbor(x, k, L, strides, inv_strides, inv_L):
    """Neighbour of site x in direction k (axis k >> 1, sign from bit 0)."""
    j = k >> 1
    s = strides[j]
    q = _div(x, s, inv_strides[j])
    c = q - _div(q, L, inv_L) * L
    if k & 1:
        return x + s if c < L - 1 else x - (L - 1) * s
    return x - s if c > 0 else x + (L - 1) * s


@nb.njit(inline="always", cache=True)
def pick(key, ctr, n, p_reset, span):
    """Site and kind for one event; kind -1 is a reset, else a direction."""
    v = to_open01(draw(key, ctr)) * n
    x = np.int64(v)
    if x >= n:
        x = n - 1
    f = v - x
    if f < p_reset:
        return x, -1
    k = np.int64((f - p_reset) * span)
    return x, k


def geometry(L, d):
    strides = np.array([L ** (d - 1 - j) for j in range(d)], dtype=np.int64)
    return strides, 1.0 / strides.astype(np.float64), 1.0 / L


@nb.njit(cache=True)
def advance(w, L, d, lam, t, t_end, next_t, key, ctr, ls, max_events,
            strides, inv_strides, inv_L, rec_t, rec_x, rec_y):
    """Run events with times <= t_end.

    ``next_t`` is the pending event time (negative if none has been drawn), so
    splitting a run at observation times does not change the trajectory.
    Events are logged while the rec arrays have room.
    Returns (t, next_t, ctr, ls, events, status); ls refers to time t.
    """
    n = w.shape[0]
    r = 1.0 / (2.0 * lam * d)
    c = r - 1.0
    inv_tot = 1.0 / (n * (1.0 + r))
    p_reset = r / (1.0 + r)
    span = 2 * d / (1.0 - p_reset)
    cap = rec_t.shape[0]
    ls0 = ls
    t0 = t
    nev = 0
    status = OK
    cap_w = OVERFLOW * np.exp(-ls0)
    while True:
        if next_t < 0.0:
            u = to_open01(draw(key, ctr))
            ctr += np.uint64(1)
            next_t = t - np.log(u) * inv_tot
        if next_t > t_end:
            break
        if nev >= max_events:
            status = MAX_EVENTS
            break
        t = next_t
        next_t = -1.0
        x, k = pick(key, ctr, n, p_reset, span)
        ctr += np.uint64(1)
        if k < 0:
            w[x] = 0.0
            y = -1
        else:
            if k >= 2 * d:
                k = 2 * d - 1
            y = neighbor(x, k, L, strides, inv_strides, inv_L)
            w[x] += w[y]
        if nev < cap:
            rec_t[nev] = t
            rec_x[nev] = x
            rec_y[nev] = y
        nev += 1
        lsc = ls0 + c * (t - t0)
        if (nev & 1023) == 0:
            cap_w = OVERFLOW * np.exp(-lsc)
        if k >= 0 and w[x] > cap_w and w[x] * np.exp(lsc) > OVERFLOW:
            status = OVERFLOWED
            break
        if lsc < -RENORM or lsc > RENORM:
            e = np.exp(lsc)
            for i in range(n):
                w[i] *= e
            ls0 = 0.0
            t0 = t
            cap_w = OVERFLOW
    if status == OK:
        ls = ls0 + c * (t_end - t0)
        t = t_end
    else:
        ls = ls0 + c * (t - t0)
    return t, next_t, ctr, ls, nev, status


# column layout of the accumulator array used by advance_accum
W, ELAST, OCC1, OCC2, JUMP, TLAST = 0, 1, 2, 3, 4, 5
NCOL = 6


@nb.njit(inline="always", cache=True)
def _integrate(S, x, E, t, c, linear):
    wx = S[x, W]
    el = S[x, ELAST]
    if linear:
        dt = t - S[x, TLAST]
        S[x, OCC1] += wx * E * dt
        S[x, OCC2] += wx * wx * E * E * dt
    else:
        S[x, OCC1] += wx * (E - el) / c
        S[x, OCC2] += wx * wx * (E * E - el * el) / (2.0 * c)
    S[x, ELAST] = E
    S[x, TLAST] = t


@nb.njit(cache=True)
def flush(S, E, t, c):
    """Bring every site's occupation integrals up to time t."""
    linear = abs(c) < 1e-12
    for x in range(S.shape[0]):
        _integrate(S, x, E, t, c, linear)


@nb.njit(cache=True)
def advance_accum(S, L, d, lam, t, t_end, next_t, key, ctr, ls0, t0,
                  strides, inv_strides, inv_L):
    """Event loop that also maintains per-site occupation integrals.

    S[x] holds the weight, the scale factor and time of the site's last update,
    the integrals of eta and eta**2 up to then, and the largest squared jump of
    eta(x). The scale is E(t) = exp(ls0 + c (t - t0)), advanced by a Taylor
    step per event and recomputed exactly every 1024 events.
    Returns (t, next_t, ctr, ls0, t0, events, status); integrals are only
    current after ``flush``.
    """
    n = S.shape[0]
    r = 1.0 / (2.0 * lam * d)
    c = r - 1.0
    linear = abs(c) < 1e-12
    inv_tot = 1.0 / (n * (1.0 + r))
    p_reset = r / (1.0 + r)
    span = 2 * d / (1.0 - p_reset)
    E = np.exp(ls0 + c * (t - t0))
    nev = 0
    status = OK
    # watchdog: 20x the expected event count, so a corrupted clock cannot spin forever
    budget = np.int64(20.0 * (t_end - t) / inv_tot) + 1_000_000
    while True:
        if next_t < 0.0:
            u = to_open01(draw(key, ctr))
            ctr += np.uint64(1)
            next_t = t - np.log(u) * inv_tot
        if next_t > t_end:
            break
        if nev >= budget or not next_t >= t:
            status = STALLED
            break
        h = c * (next_t - t)
        t = next_t
        next_t = -1.0
        nev += 1
        if nev & 1023:
            E *= 1.0 + h * (1.0 + 0.5 * h * (1.0 + h / 3.0 * (1.0 + 0.25 * h)))
        else:
            E = np.exp(ls0 + c * (t - t0))
        x, k = pick(key, ctr, n, p_reset, span)
        ctr += np.uint64(1)
        wx = S[x, W]
        if k < 0:
            nw = 0.0
        else:
            if k >= 2 * d:
                k = 2 * d - 1
            y = neighbor(x, k, L, strides, inv_strides, inv_L)
            nw = wx + S[y, W]
        if nw != wx:
            _integrate(S, x, E, t, c, linear)
            S[x, W] = nw
            jump = (nw - wx) * E
            jump *= jump
            if jump > S[x, JUMP]:
                S[x, JUMP] = jump
            if nw * E > OVERFLOW:
                status = OVERFLOWED
                break
        lsc = ls0 + c * (t - t0)
        if lsc < -RENORM or lsc > RENORM:
            E = np.exp(lsc)
            for i in range(n):
                _integrate(S, i, E, t, c, linear)
                S[i, W] *= E
                S[i, ELAST] = 1.0
            E = 1.0
            ls0 = 0.0
            t0 = t
    if status == OK:
        t = t_end
    return t, next_t, ctr, ls0, t0, nev, status


@nb.njit(cache=True)
def batch_fields(L, d, lam, w0, keys, times, strides, inv_strides, inv_L):
    """Independent replicas from the same initial weights.

    Returns physical fields at the requested times, shape (replicas, times, n).
    """
    n = w0.shape[0]
    out = np.empty((keys.shape[0], times.shape[0], n))
    dummy_t = np.empty(0)
    dummy_i = np.empty(0, dtype=np.int64)
    w = np.empty(n)
    for rep in range(keys.shape[0]):
        w[:] = w0
        t = 0.0
        next_t = -1.0
        ctr = np.uint64(0)
        ls = 0.0
        for m in range(times.shape[0]):
            t, next_t, ctr, ls, nev, st = advance(
                w, L, d, lam, t, times[m], next_t, keys[rep], ctr, ls,
                np.int64(1) << 62, strides, inv_strides, inv_L, dummy_t, dummy_i, dummy_i)
            e = np.exp(ls)
            for i in range(n):
                out[rep, m, i] = w[i] * e
    return out
