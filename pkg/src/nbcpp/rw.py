"""Continuous-time simple random walk on Z^d and derived constants.

The walk jumps at rate 1 to a uniformly chosen neighbour, so each coordinate is
an independent rate-1/d walk on Z and

    p_t(O, x) = prod_j exp(-t/d) I_{|x_j|}(t/d).

Time integrals over [0, inf) are split at T*: adaptive Gauss-Kronrod on
[0, T*] and the substitution t = T*/u**2 on the tail, which maps it onto (0, 1]
with an integrand that stays bounded for d >= 3. Whole tables use a trapezoid
rule in log-time instead, which converges geometrically for these analytic
integrands and evaluates every lattice point at once.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special, stats

from .lattice import canonical, canonical_classes, class_size
from .params import ModelParams

_BIG_Z = 1e8  # scipy's ive returns nan somewhere above 1e9


def bessel_factor(n, z):
    """exp(-z) I_n(z), with an asymptotic expansion for very large z."""
    n = np.asarray(n, dtype=float)
    z = np.asarray(z, dtype=float)
    big = z >= _BIG_Z
    if not np.any(big):
        return special.ive(n, z)
    zz = np.where(big, z, 1.0)
    mu = 4.0 * n * n
    e = 8.0 * zz
    asym = (1.0 - (mu - 1) / e + (mu - 1) * (mu - 9) / (2 * e * e)
            - (mu - 1) * (mu - 9) * (mu - 25) / (6 * e**3)) / np.sqrt(2 * np.pi * zz)
    return np.where(big, asym, special.ive(n, np.where(big, 1.0, z)))


def _as_point(x, d):
    x = np.asarray(x, dtype=np.int64)
    if x.shape[-1] != d:
        raise ValueError(f"lattice point has {x.shape[-1]} coordinates, expected d={d}")
    return x


def transition_probability(t: float, x, d: int):
    """p_t(O, x). ``x`` may be a single point or an array of shape (..., d)."""
    if t < 0:
        raise ValueError("transition_probability: time must be nonnegative")
    x = np.abs(_as_point(x, d))
    if t == 0:
        p = np.all(x == 0, axis=-1).astype(float)
    else:
        p = bessel_factor(x, t / d).prod(axis=-1)
    p = np.clip(p, 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p


def uniformized_transition_probability(t: float, x, d: int, tail_tol: float = 1e-10):
    """p_t(O, x) from the Poisson series over the discrete walk.

    P^n(O, .) is propagated exactly on symmetry classes of the lattice.
    Returns (value, tail_bound) where the bound covers the dropped terms.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    target = canonical(_as_point(x, d))
    n_max = 0
    while stats.poisson.sf(n_max, t) >= tail_tol:
        n_max += 1
    mass = {tuple([0] * d): 1.0}
    total = 0.0
    for n in range(n_max + 1):
        total += stats.poisson.pmf(n, t) * mass.get(target, 0.0)
        nxt = defaultdict(float)
        for state, m in mass.items():
            for j, a in enumerate(state):
                if a == 0:
                    moves = ((a + 1, m / d),)
                else:
                    moves = ((a + 1, m / (2 * d)), (a - 1, m / (2 * d)))
                for b, pm in moves:
                    s = list(state)
                    s[j] = b
                    nxt[tuple(sorted(s, reverse=True))] += pm
        mass = nxt
    return total / class_size(target), float(stats.poisson.sf(n_max, t))


def _default_tstar(x, theta: float) -> float:
    r2 = float(np.sum(np.asarray(x, dtype=float) ** 2))
    ts = 50.0 + 2.0 * r2
    if theta > 0:
        ts = min(ts, max(50.0 / theta, 10.0))
    return ts


def _time_integral(f, t_star: float, tol: float, limit: int = 400):
    """Integral of f over [0, inf); returns (value, abs error estimate)."""
    head, e1 = integrate.quad(f, 0.0, t_star, epsabs=0.0, epsrel=tol, limit=limit)
    tail, e2 = integrate.quad(
        lambda u: f(t_star / (u * u)) * 2.0 * t_star / u**3 if u > 0 else 0.0,
        0.0, 1.0, epsabs=0.0, epsrel=tol, limit=limit)
    return head + tail, e1 + e2


def _check_transient(d, theta=0.0):
    if theta == 0 and d <= 2:
        raise ValueError(f"Green function diverges for d={d} (recurrent walk)")


def green_function(x, d: int, tol: float = 1e-12, full_output: bool = False):
    """G(x) = integral of p_t(O, x) over t >= 0 (d >= 3)."""
    _check_transient(d)
    x = _as_point(x, d)
    t_star = _default_tstar(x, 0.0)
    val, err = _time_integral(lambda t: transition_probability(t, x, d), t_star, tol)
    if full_output:
        return val, {"t_star": t_star, "abs_error": err}
    return val


def resolvent(theta: float, x, d: int, tol: float = 1e-12) -> float:
    """g_theta(x) = integral of exp(-theta u) p_u(O, x) du."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    _check_transient(d, theta)
    x = _as_point(x, d)
    t_star = _default_tstar(x, theta)
    val, _ = _time_integral(
        lambda t: math.exp(-theta * t) * transition_probability(t, x, d), t_star, tol)
    return val


@lru_cache(maxsize=None)
def _green_origin(d: int) -> float:
    return green_function(tuple([0] * d), d, tol=1e-13)


def escape_probability(d: int) -> float:
    """gamma_d = 1 / G(O)."""
    if d <= 2:
        raise ValueError(f"escape probability is 0 for the recurrent case d={d}")
    return 1.0 / _green_origin(d)


def hitting_probability(x, d: int) -> float:
    """Phi(x) = G(x) / G(O)."""
    x = _as_point(x, d)
    if not np.any(x):
        return 1.0
    return float(np.clip(green_function(x, d) / _green_origin(d), 0.0, 1.0))


def h_constant(params: ModelParams) -> float:
    if params.d < 3:
        raise ValueError("h is defined for d >= 3")
    lam, d = params.lam, params.d
    g = escape_probability(d)
    return (2 * lam * d * (2 * g - 1) - 1) / (1 + 2 * d * lam)


@lru_cache(maxsize=None)
def s_weighted_integral(d: int) -> float:
    """Integral of s p_s(O, O) over s >= 0 (finite for d >= 5)."""
    if d <= 4:
        raise ValueError(f"s-weighted integral diverges for d={d}")
    o = np.zeros(d, dtype=np.int64)
    val, _ = _time_integral(lambda s: s * transition_probability(s, o, d), 60.0, 1e-13)
    return val


def _check_c1(params):
    if params.d <= 4:
        raise ValueError(f"C1 diverges for d={params.d} (needs d >= 5)")
    h = h_constant(params)
    if h <= 0:
        raise ValueError(f"subcritical parameters (h={h:.6g} <= 0)")
    return h


def clt_constant(params: ModelParams) -> float:
    """C1 = 2 gamma_d * int s p_s(O,O) ds / h."""
    h = _check_c1(params)
    return 2.0 * escape_probability(params.d) * s_weighted_integral(params.d) / h


# ---------------------------------------------------------------- tables

def log_time_nodes(step: float = 0.1, s_min: float = -40.0, s_max: float = 80.0):
    """Nodes t = exp(s) and trapezoid weights (including dt/ds = t)."""
    s = np.arange(s_min, s_max + step / 2, step)
    t = np.exp(s)
    return t, step * t


def tabulate(points: np.ndarray, d: int, thetas=(0.0,), step: float = 0.1,
             s_max: float | None = None) -> np.ndarray:
    """g_theta at each point (rows of ``points``) for each theta.

    Returns an array of shape (len(thetas), len(points)).
    """
    pts = np.abs(np.asarray(points, dtype=np.int64)).reshape(-1, d)
    if s_max is None:
        s_max = 80.0 if d <= 4 else 60.0
    t, w = log_time_nodes(step, -40.0, s_max)
    rmax = int(pts.max()) if pts.size else 0
    table = bessel_factor(np.arange(rmax + 1)[:, None], t[None, :] / d)
    prod = np.ones((len(pts), len(t)))
    for j in range(d):
        prod *= table[pts[:, j]]
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    for th in thetas:
        _check_transient(d, th)
    weights = w[None, :] * np.exp(-np.outer(thetas, t))
    return weights @ prod.T


@lru_cache(maxsize=None)
def _shell_sums_g0_sq(d: int, radius: int):
    reps, mult = canonical_classes(radius, d)
    g = tabulate(reps, d, (0.0,))[0]
    shells = np.bincount(reps.sum(axis=1), weights=mult * g * g, minlength=radius + 1)
    return np.cumsum(shells)


def lattice_sum_g0_squared(d: int, radius: int = 48, fit_from: int = 20, order: int = 5):
    """Sum over Z^d of g_0(x)**2 from l1-ball partial sums plus a fitted tail.

    The partial sums S(R) for fit_from <= R <= radius are fitted to
    S_inf - sum_k a_k R**-(d-4+k), k < order. Returns (S_inf, spread) where the
    spread is the change against a fit of one lower order.
    """
    if d <= 4:
        raise ValueError(f"sum of g0^2 diverges for d={d}")
    S = _shell_sums_g0_sq(d, radius)
    R = np.arange(fit_from, radius + 1, dtype=float)

    def fit(k):
        A = np.column_stack([np.ones_like(R)] + [-(R ** -(d - 4 + i)) for i in range(k)])
        coef, *_ = np.linalg.lstsq(A, S[fit_from:], rcond=None)
        return coef[0]

    best = fit(order)
    return float(best), float(abs(best - fit(order - 1)))


def clt_constant_lattice(params: ModelParams, radius: int = 48) -> tuple[float, float]:
    """C1 = 2 gamma_d * sum_x g_0(x)**2 / h, with the propagated fit spread."""
    h = _check_c1(params)
    s, spread = lattice_sum_g0_squared(params.d, radius)
    k = 2.0 * escape_probability(params.d) / h
    return k * s, k * spread


@dataclass
class RWTables:
    """Green function, hitting probability and resolvents on an l1 ball.

    Values are stored per symmetry class; ``points`` holds the canonical
    representatives (x1 >= ... >= xd >= 0) and ``multiplicity`` their orbit sizes.
    """

    d: int
    lam: float
    gamma_d: float
    points: np.ndarray
    multiplicity: np.ndarray
    green: np.ndarray
    phi: np.ndarray
    resolvent: dict = field(default_factory=dict)
    h: float = float("nan")
    c1: float = float("nan")
    truncation_radius: int = 0
    quadrature_tolerance: float = 1e-12
    tail_bounds: dict = field(default_factory=dict)
    t_star: float = float("nan")

    def __post_init__(self):
        self._index = {tuple(int(v) for v in p): i for i, p in enumerate(self.points)}

    def _lookup(self, x):
        key = canonical(x)
        if key not in self._index:
            raise KeyError(f"{tuple(x)} outside truncation radius {self.truncation_radius}")
        return self._index[key]

    def green_at(self, x) -> float:
        return float(self.green[self._lookup(x)])

    def phi_at(self, x) -> float:
        return float(self.phi[self._lookup(x)])

    def g_at(self, theta: float, x) -> float:
        return float(self.resolvent[float(theta)][self._lookup(x)])


def build_tables(params: ModelParams, thetas=(), radius: int = 30,
                 tol: float = 1e-12) -> RWTables:
    """Tabulate G, Phi and g_theta on the l1 ball of the given radius."""
    d = params.d
    _check_transient(d)
    reps, mult = canonical_classes(radius, d)
    ths = [0.0] + [float(th) for th in thetas if float(th) != 0.0]
    vals = tabulate(reps, d, ths)
    green = vals[0]
    gamma = escape_probability(d)
    g0 = 1.0 / gamma
    phi = np.clip(green / g0, 0.0, 1.0)
    phi[0] = 1.0  # origin is the first canonical class
    res = {th: vals[i] for i, th in enumerate(ths)}
    # theta * (sum of g_theta outside the ball) is the chance that a walk killed at
    # rate theta ends beyond radius R, at most P(R+1 jumps before death)
    tails = {th: (1.0 + th) ** -(radius + 1) for th in ths if th > 0}
    h = c1 = float("nan")
    if d >= 3:
        h = h_constant(params)
    if d >= 5 and h > 0:
        c1 = clt_constant(params)
    _, info = green_function(np.zeros(d, dtype=np.int64), d, tol, full_output=True)
    return RWTables(d=d, lam=params.lam, gamma_d=gamma, points=reps, multiplicity=mult,
                    green=green, phi=phi, resolvent=res, h=h, c1=c1,
                    truncation_radius=radius, quadrature_tolerance=tol,
                    tail_bounds=tails, t_star=info["t_star"])


def resolvent_residual(table: RWTables, theta: float) -> np.ndarray:
    """theta g - L g - 1_O at every point whose neighbours are all tabulated."""
    d = table.d
    g = table.resolvent[float(theta)]
    out = []
    for i, p in enumerate(table.points):
        if p.sum() >= table.truncation_radius:
            continue
        acc = 0.0
        for j in range(d):
            for s in (-1, 1):
                q = p.copy()
                q[j] += s
                acc += g[table._lookup(q)] - g[i]
        out.append(theta * g[i] - acc / (2 * d) - (1.0 if not p.any() else 0.0))
    return np.array(out)
