"""Occupation-time functional, its martingale decomposition and the test battery.

With theta = 1/N, G(eta) = sum_x g_theta(x - o)(eta(x) - 1) and horizon T = tN:

    sqrt(N) X = int_0^T (eta_s(o) - 1) ds = M_T + R_T,
    R_T = -G(eta_T) + G(eta_0) + theta int_0^T G(eta_s) ds,

where M is the Dynkin martingale of G. The replay path below builds M
independently as (sum of jumps of G) minus the integrated jump intensity, so the
identity is a genuine check of the bookkeeping.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import stats

from . import torus
from .config import ConfigError
from .lattice import site_index
from .params import ModelParams
from .sim import EventLog, FieldState


class StatisticsError(ValueError):
    pass


@dataclass(frozen=True)
class ResolventTable:
    """g_theta on the torus (origin at index 0), flat C order."""

    theta: float
    L: int
    d: int
    g: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return self.g.reshape((self.L,) * self.d)

    def centered(self, origin) -> np.ndarray:
        """Flat array x -> g_theta(x - origin)."""
        shift = tuple(int(v) for v in np.ravel(origin))
        return np.roll(self.grid, shift, axis=tuple(range(self.d))).ravel()


def resolvent_table(params: ModelParams, theta: float) -> ResolventTable:
    g = torus.torus_resolvent(theta, params.L, params.d)
    return ResolventTable(float(theta), params.L, params.d, g.ravel())


def _check_table(table: ResolventTable, params: ModelParams, theta: float | None = None):
    if not isinstance(table, ResolventTable):
        raise ConfigError("g_table: expected a ResolventTable covering the torus")
    if table.L != params.L or table.d != params.d:
        raise ConfigError(f"g_table: built for L={table.L}, d={table.d}; "
                          f"state has L={params.L}, d={params.d}")
    if theta is not None and table.theta != float(theta):
        raise ConfigError(f"g_table: theta={table.theta} but {theta} requested")


def resolvent_functional(state: FieldState, theta: float, g_table: ResolventTable,
                         origin=None) -> float:
    """sum_x g_theta(x - origin) (eta(x) - 1) over the torus."""
    _check_table(g_table, state.params, theta)
    g = g_table.g if origin is None else g_table.centered(origin)
    return float(np.dot(g, state.eta - 1.0))


def occupation_process(params: ModelParams, eta0, events: EventLog, t_end: float, N: float,
                       times, origin=None) -> np.ndarray:
    """X_t^N = N^{-1/2} int_0^{tN} (eta_u(o) - 1) du at each grid time t.

    The trajectory is eta0 plus the event stream up to ``t_end``; every
    inter-event piece is integrated in closed form.
    """
    from .sim import occupation_integral

    times = np.asarray(times, dtype=float)
    if times.size and times.max() * N > t_end * (1 + 1e-12):
        raise ValueError(f"trajectory covers [0, {t_end}] but tN reaches {times.max() * N}")
    o = 0 if origin is None else site_index(origin, params.L)
    c = params.drift
    w = np.array(eta0, dtype=float)
    scale, t, acc = 1.0, 0.0, 0.0
    out = np.empty(times.size)
    order = np.argsort(times)
    k = 0
    stops = times[order] * N
    for s, x, y in zip(list(events.time) + [math.inf], list(events.site) + [-1],
                       list(events.source) + [-1]):
        while k < stops.size and stops[k] <= s:
            out[order[k]] = (acc + occupation_integral(w[o] * scale, c, t, stops[k])) / math.sqrt(N)
            k += 1
        if s == math.inf or s > t_end:
            break
        acc += occupation_integral(w[o] * scale, c, t, s)
        scale *= math.exp(c * (s - t))
        t = s
        w[x] = 0.0 if y < 0 else w[x] + w[y]
    return out


# ------------------------------------------------------------ event replay

@nb.njit(cache=True)
def _exact(eta, g, wj, q):
    G = 0.0
    A = 0.0
    Q = 0.0
    for i in range(eta.shape[0]):
        G += g[i] * (eta[i] - 1.0)
        A += wj[i] * eta[i]
        Q += q[i] * eta[i] * eta[i]
    return G, A, Q


@nb.njit(cache=True)
def _replay(eta0, ev_t, ev_x, ev_y, c, o, g, wj, q, stops, resync):
    """Walk the event stream, integrating every functional in closed form.

    Columns of the grid output: int eta(o), G, sum of G jumps, int of the jump
    intensity, int G, <M>, largest squared jump of G so far.
    """
    eta = eta0.copy()
    sg = 0.0
    for i in range(g.shape[0]):
        sg += g[i]
    G, A, Q = _exact(eta, g, wj, q)
    path = np.empty(ev_t.shape[0] + 1)
    path[0] = G
    out = np.empty((stops.shape[0], 7))
    i_eta = jumps = i_comp = i_g = qv = big = 0.0
    t = 0.0
    k = 0
    e_idx = 0
    n_ev = ev_t.shape[0]
    while k < stops.shape[0]:
        nxt = ev_t[e_idx] if e_idx < n_ev else np.inf
        target = min(nxt, stops[k])
        dt = target - t
        if dt > 0.0:
            if abs(c) < 1e-12:
                f1 = dt
                f2 = dt
            else:
                f1 = math.expm1(c * dt) / c
                f2 = math.expm1(2.0 * c * dt) / (2.0 * c)
            i_eta += eta[o] * f1
            i_g += (G + sg) * f1 - sg * dt
            i_comp += A * f1
            qv += Q * f2
            e = math.exp(c * dt)
            for i in range(eta.shape[0]):
                eta[i] *= e
            G = (G + sg) * e - sg
            A *= e
            Q *= e * e
            t = target
        if stops[k] <= nxt:
            out[k, 0] = i_eta
            out[k, 1] = G
            out[k, 2] = jumps
            out[k, 3] = i_comp
            out[k, 4] = i_g
            out[k, 5] = qv
            out[k, 6] = big
            k += 1
            continue
        x = ev_x[e_idx]
        y = ev_y[e_idx]
        old = eta[x]
        new = 0.0 if y < 0 else old + eta[y]
        delta = new - old
        eta[x] = new
        jg = g[x] * delta
        G += jg
        A += wj[x] * delta
        Q += q[x] * (new * new - old * old)
        jumps += jg
        if jg * jg > big:
            big = jg * jg
        e_idx += 1
        if resync > 0 and e_idx % resync == 0:
            G, A, Q = _exact(eta, g, wj, q)
        path[e_idx] = G
    return out, path[: e_idx + 1]


@dataclass
class OccupationRecord:
    """Decomposition of one trajectory at grid times (in units of N)."""

    N: float
    times: np.ndarray
    X: np.ndarray
    G: np.ndarray
    G_theta_path: np.ndarray
    M: np.ndarray
    R: np.ndarray
    QV: np.ndarray
    max_jump_sq: float
    max_jump_sq_path: np.ndarray

    def identity_error(self) -> float:
        """max |X - (M + R)/sqrt(N)| over the grid."""
        return float(np.max(np.abs(self.X - (self.M + self.R) / math.sqrt(self.N)), initial=0.0))


def decompose(params: ModelParams, eta0, events: EventLog, t_end: float, N: float, times,
              origin=None, table: ResolventTable | None = None, resync: int = 4096) -> OccupationRecord:
    """X, M, R, <M> and the running max squared jump at each grid time.

    ``times`` are in units of N and sorted; tN must not exceed ``t_end``.
    """
    theta = 1.0 / N
    table = resolvent_table(params, theta) if table is None else table
    _check_table(table, params, theta)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("times: must be sorted and nonnegative")
    if times.size and times[-1] * N > t_end * (1 + 1e-12):
        raise ValueError(f"trajectory covers [0, {t_end}] but tN reaches {times[-1] * N}")
    o = np.zeros(params.d, dtype=np.int64) if origin is None else np.asarray(origin)
    grid = table.centered(o).reshape((params.L,) * params.d)
    g = grid.ravel()
    wj = torus.compensator_weight(grid, params.lam).ravel()
    q = torus.qv_weight(grid, params.lam).ravel()
    keep = events.time <= t_end
    out, path = _replay(np.asarray(eta0, dtype=float), events.time[keep], events.site[keep],
                        events.source[keep], params.drift, site_index(o, params.L),
                        g, wj, q, times * N, resync)
    sN = math.sqrt(N)
    T = times * N
    X = (out[:, 0] - T) / sN
    G0 = path[0]
    R = -out[:, 1] + G0 + theta * out[:, 4]
    M = out[:, 2] - out[:, 3]
    jumps = out[:, 6] / N
    return OccupationRecord(N, times, X, out[:, 1], path, M, R, out[:, 5], float(jumps[-1]) if jumps.size else 0.0,
                            jumps)


def martingale_drift(params: ModelParams, eta, theta: float, table: ResolventTable, origin=None) -> float:
    """dM/ds between events: -(1 + theta - 1/(2 lambda d)) sum g eta + eta(o)."""
    g = table.g if origin is None else table.centered(origin)
    o = 0 if origin is None else site_index(origin, params.L)
    eta = np.asarray(eta, dtype=float)
    return float(-(1.0 + theta - params.reset_rate) * np.dot(g, eta) + eta[o])


def max_jump_diagnostic(record: OccupationRecord) -> float:
    """sup over the run of (M_s - M_s-)**2 / N."""
    return float(record.max_jump_sq)


# ------------------------------------------------------------ test battery

MIN_SAMPLES = 500
MIN_FDD_SAMPLES = 1000


@dataclass(frozen=True)
class VarianceTest:
    ratio: float
    ci_low: float
    ci_high: float
    n: int
    degenerate: bool = False

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def contains(self, value: float = 1.0) -> bool:
        return self.ci_low <= value <= self.ci_high


def _groups(clusters, n):
    if clusters is None:
        return np.arange(n)[:, None], None
    clusters = np.asarray(clusters)
    if clusters.shape != (n,):
        raise StatisticsError("clusters: need one label per sample")
    labels, inv = np.unique(clusters, return_inverse=True)
    return labels, inv


def bootstrap(samples: np.ndarray, stat, clusters=None, resamples: int = 1000, seed: int = 0,
              level: float = 0.95) -> tuple[float, float]:
    """Percentile interval; whole clusters are resampled when labels are given."""
    x = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    if clusters is None:
        draws = [x[rng.integers(0, n, n)] for _ in range(resamples)]
    else:
        labels, inv = _groups(clusters, n)
        members = [np.flatnonzero(inv == i) for i in range(len(labels))]
        draws = []
        for _ in range(resamples):
            pick = rng.integers(0, len(members), len(members))
            draws.append(x[np.concatenate([members[i] for i in pick])])
    vals = np.array([stat(b) for b in draws])
    a = 0.5 * (1 - level)
    return float(np.quantile(vals, a)), float(np.quantile(vals, 1 - a))


def variance_test(samples, t: float, c1: float, clusters=None, resamples: int = 1000,
                  seed: int = 0) -> VarianceTest:
    """Var(X_t^N) / (C1 t) with a bootstrap 95% interval."""
    x = np.asarray(samples, dtype=float)
    if x.size < MIN_SAMPLES:
        raise StatisticsError(f"samples: need at least {MIN_SAMPLES}, got {x.size}")
    if t == 0 or np.all(x == x[0]):
        return VarianceTest(float("nan"), float("nan"), float("nan"), x.size, True)
    scale = c1 * t
    lo, hi = bootstrap(x, lambda b: np.var(b, ddof=1), clusters, resamples, seed)
    return VarianceTest(float(np.var(x, ddof=1) / scale), lo / scale, hi / scale, x.size)


@dataclass(frozen=True)
class NormalityTest:
    statistic: float
    pvalue: float
    skewness: float
    excess_kurtosis: float
    n: int


def normality_test(z) -> NormalityTest:
    """KS test of z against N(0,1) (asymptotic p-value) plus moment diagnostics."""
    z = np.asarray(z, dtype=float)
    if z.size < MIN_SAMPLES:
        raise StatisticsError(f"samples: need at least {MIN_SAMPLES}, got {z.size}")
    res = stats.kstest(z, "norm", method="asymp")
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sk = float(stats.skew(z))
        ku = float(stats.kurtosis(z))
    return NormalityTest(float(res.statistic), float(res.pvalue), sk, ku, z.size)


@dataclass(frozen=True)
class FddTest:
    times: tuple
    covariance: np.ndarray
    target: np.ndarray
    relative_deviation: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(self.relative_deviation.max())


def fdd_test(samples, times, c1: float) -> FddTest:
    """Empirical covariance of (X_t1, ..., X_tm) against C1 min(t_i, t_j)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, m = x.shape
    if m != len(times):
        raise StatisticsError("times: one column per grid time")
    if m > 5:
        raise StatisticsError("times: at most 5 grid times")
    if n < MIN_FDD_SAMPLES:
        raise StatisticsError(f"samples: need at least {MIN_FDD_SAMPLES}, got {n}")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    t = np.asarray(times, dtype=float)
    target = c1 * np.minimum.outer(t, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.abs(cov - target) / target
    return FddTest(tuple(float(v) for v in t), cov, target, dev)


def strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))
