"""Two-point moment kernels without Monte Carlo.

The ordered pair (eta(x), eta(y)) evolves linearly: E_1[eta_t(x) eta_t(y)] is
the total mass of exp(-2t) sum_n t^n/n! H^n started from (x, y), where H has
weight 1/(2d) for each single-coordinate move off the diagonal and, on the
diagonal (x, x), weight 1/(2 d lambda) to stay plus 1/(2d) for each move to
(u, u), (u, x) and (x, u) with u ~ x.

Only differences y - x matter for the fiber sums, which gives a chain on Z^d:
weight 1/d to each neighbour off the origin, and from the origin 1 + 1/(2 d
lambda) to stay plus 1/d to each neighbour. Truncated boxes get an absorbing
state of weight 2 that collects escaping mass without changing it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse, stats

from .lattice import canonical, canonical_classes, l1_ball, site_coords, site_index
from .params import ModelParams
from .rng import stream_key
from .rw import h_constant

PAIR_BUDGET = 2_000_000


class SizeError(ValueError):
    pass


class TruncationError(RuntimeError):
    pass


@dataclass
class PairKernel:
    """Truncated pair (``kind="pair"``) or difference (``kind="difference"``) kernel.

    ``H`` is the augmented sparse matrix whose last index is the absorbing
    outside state.
    """

    params: ModelParams
    box_radius: int
    kind: str
    points: np.ndarray
    H: sparse.csr_matrix
    deg: np.ndarray
    diagonal: np.ndarray
    index: dict = field(repr=False, default_factory=dict)
    geometry: str = "box"
    multiplicity: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return self.H.shape[0] - 1

    @property
    def outside(self) -> int:
        return self.H.shape[0] - 1

    @property
    def rowmax(self) -> float:
        return float(np.abs(self.H).sum(axis=1).max())

    def state(self, key) -> int:
        key = tuple(int(v) for v in np.ravel(key))
        if self.geometry == "torus":
            return site_index(key, self.params.L)
        if self.geometry == "classes":
            key = canonical(key)
        if key not in self.index:
            raise KeyError(f"{key} is outside the box of radius {self.box_radius}")
        return self.index[key]

    def point_values(self, values: np.ndarray) -> np.ndarray:
        """Per-point values (class totals divided by class sizes)."""
        return values / self.multiplicity if self.multiplicity is not None else values

    def theta(self) -> sparse.csr_matrix:
        """Theta = H * deg / 2 on in-box moves (pair kernels only)."""
        if self.kind != "pair":
            raise ValueError("Theta is defined on the pair kernel")
        Hin = self.H[:-1, :-1].tocsr()
        return sparse.diags(self.deg / 2.0) @ Hin

    def beta_probabilities(self) -> np.ndarray:
        """Per-state total probability of the beta walk (1/deg per admissible move).

        Admissible moves are counted from the case table, so states on the box
        boundary still sum to 1 even though some targets are outside.
        """
        n_moves = np.where(self.diagonal, 6 * self.params.d + 1, 4 * self.params.d)
        return n_moves / self.deg


def _pair_moves(x, y, d, lam):
    """(target pair, weight) list from the case table."""
    out = []
    w = 1.0 / (2 * d)
    if x == y:
        out.append(((x, x), 1.0 / (2 * d * lam)))
        for j in range(d):
            for s in (-1, 1):
                u = list(x)
                u[j] += s
                u = tuple(u)
                out += [((u, u), w), ((u, x), w), ((x, u), w)]
    else:
        for j in range(d):
            for s in (-1, 1):
                u = list(x)
                u[j] += s
                out.append(((tuple(u), y), w))
                v = list(y)
                v[j] += s
                out.append(((x, tuple(v)), w))
    return out


def build_pair_kernel(params: ModelParams, box_radius: int, budget: int = PAIR_BUDGET) -> PairKernel:
    """Full pair kernel on B x B, B the l1 ball of radius ``box_radius``."""
    if box_radius < 1:
        raise ValueError("box_radius: must be >= 1")
    d, lam = params.d, params.lam
    ball = [tuple(int(v) for v in p) for p in l1_ball(box_radius, d)]
    n_pairs = len(ball) ** 2
    if n_pairs > budget:
        r = box_radius
        while r > 1 and len(l1_ball(r, d)) ** 2 > budget:
            r -= 1
        raise SizeError(f"pair space has {n_pairs} states (budget {budget}); "
                        f"use box_radius <= {r} or the difference kernel")
    bidx = {p: i for i, p in enumerate(ball)}
    nb_ = len(ball)
    out = n_pairs
    rows, cols, vals = [], [], []
    deg = np.empty(n_pairs)
    diag = np.zeros(n_pairs, dtype=bool)
    for i, x in enumerate(ball):
        for j, y in enumerate(ball):
            s = i * nb_ + j
            diag[s] = x == y
            deg[s] = 6 * d + 1 if x == y else 4 * d
            for (u, v), wt in _pair_moves(x, y, d, lam):
                iu, iv = bidx.get(u), bidx.get(v)
                rows.append(s)
                cols.append(out if iu is None or iv is None else iu * nb_ + iv)
                vals.append(wt)
    rows.append(out)
    cols.append(out)
    vals.append(2.0)
    H = sparse.csr_matrix((vals, (rows, cols)), shape=(n_pairs + 1, n_pairs + 1))
    H.sum_duplicates()
    pts = np.array([[x, y] for x in ball for y in ball], dtype=np.int64)
    index = {tuple(np.ravel(p)): k for k, p in enumerate(pts)}
    return PairKernel(params, box_radius, "pair", pts, H, deg, diag, index)


def build_difference_kernel(params: ModelParams, box_radius: int | None = None,
                            geometry: str = "box") -> PairKernel:
    """Fiber-summed kernel on pair differences z.

    geometry "box": points with |z|_1 <= box_radius; "classes": the same ball
    reduced by lattice symmetries (entries are class totals, exact for any
    source because every point of a class has the same class-to-class weights);
    "torus": all differences on (Z/LZ)^d, no truncation.
    """
    d, lam = params.d, params.lam
    stay = 1.0 + 1.0 / (2 * d * lam)
    if geometry == "torus":
        L = params.L
        n = L**d
        nbr = torus_neighbor_table(L, d)
        rows = np.concatenate([np.repeat(np.arange(n), 2 * d), [0, n]])
        cols = np.concatenate([nbr.ravel(), [0, n]])
        vals = np.concatenate([np.full(2 * d * n, 1.0 / d), [stay, 2.0]])
        H = sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
        H.sum_duplicates()
        pts = site_coords(np.arange(n), L, d)
        diag = np.zeros(n, dtype=bool)
        diag[0] = True
        deg = np.where(diag, 6 * d + 1, 4 * d).astype(float)
        return PairKernel(params, L // 2, "difference", pts, H, deg, diag, {}, "torus", None)
    if box_radius is None or box_radius < 1:
        raise ValueError("box_radius: must be >= 1")
    if geometry == "classes":
        pts, mult = canonical_classes(box_radius, d)
        keyf = canonical
    elif geometry == "box":
        pts, mult = l1_ball(box_radius, d), None
        keyf = lambda z: z
    else:
        raise ValueError(f"geometry: unknown value {geometry!r}")
    index = {tuple(int(v) for v in p): k for k, p in enumerate(pts)}
    n = len(pts)
    rows, cols, vals = [], [], []
    for k, p in enumerate(pts):
        z = tuple(int(v) for v in p)
        if not any(z):
            rows.append(k)
            cols.append(k)
            vals.append(stay)
        for j in range(d):
            for s in (-1, 1):
                q = list(z)
                q[j] += s
                rows.append(k)
                cols.append(index.get(keyf(tuple(q)), n))
                vals.append(1.0 / d)
    rows.append(n)
    cols.append(n)
    vals.append(2.0)
    H = sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
    H.sum_duplicates()
    diag = ~pts.any(axis=1)
    deg = np.where(diag, 6 * d + 1, 4 * d).astype(float)
    return PairKernel(params, box_radius, "difference", pts, H, deg, diag, index, geometry, mult)


@dataclass
class SeriesResult:
    values: np.ndarray      # in-box entries, indexed like kernel.points
    escaped: float          # mass that left the box, weighted as if it stayed put
    tail_bound: float       # bound on the dropped series terms
    n_max: int
    t: float

    @property
    def in_box(self) -> float:
        return float(self.values.sum())


def default_n_max(t: float, rowmax: float) -> int:
    a = 2.0 * t * rowmax
    return int(math.ceil(a + 40.0 * math.sqrt(a) + 20))


def series_tail_bound(t: float, rowmax: float, n_max: int) -> float:
    """exp(-2t) sum_{n > n_max} (t rowmax)^n / n!, computed in log space."""
    if t == 0:
        return 0.0
    lam_ = t * rowmax
    logsf = stats.poisson.logsf(n_max, lam_)
    return float(math.exp(min(lam_ - 2.0 * t + logsf, 700.0)))


def qhat_series(kernel: PairKernel, source, t: float, n_max: int | None = None,
                tol: float = 1e-8) -> SeriesResult:
    """exp(-2t) sum_n t^n/n! H^n applied to the indicator of ``source``."""
    if t < 0:
        raise ValueError("t: must be nonnegative")
    rho = kernel.rowmax
    if n_max is None:
        n_max = default_n_max(t, rho)
    bound = series_tail_bound(t, rho, n_max)
    while bound >= tol:
        if n_max > 10_000:
            raise TruncationError(f"tail bound {bound:.3g} not below {tol} within n_max <= 10000")
        n_max = min(10_001, 2 * n_max)
        bound = series_tail_bound(t, rho, n_max)
    HT = kernel.H.T.tocsr()
    y = np.zeros(kernel.H.shape[0])
    y[kernel.state(source)] = 1.0
    acc = np.zeros_like(y)
    logs = -2.0 * t
    acc += y * math.exp(logs)
    for n in range(1, n_max + 1):
        if t == 0:
            break
        y = HT @ y * (t / n)
        m = np.abs(y).max()
        if m == 0:
            break
        if m > 1e100 or m < 1e-100:
            y /= m
            logs += math.log(m)
        if logs > -700:
            acc += y * math.exp(logs)
    return SeriesResult(acc[:-1], float(acc[-1]), bound, n_max, t)


def escape_weight(params: ModelParams, t: float, rowmax: float) -> float:
    """Largest total mass one escaped unit can produce by time t."""
    if params.d >= 3:
        h = h_constant(params)
        if h > 0:
            return 1.0 + 1.0 / h
    return math.exp((rowmax - 2.0) * t)


@dataclass
class MomentBound:
    value: float       # in-box mass plus escaped mass (a lower bound)
    upper: float
    error_bound: float
    escaped: float
    tail_bound: float

    @property
    def lower(self) -> float:
        return self.value


def source_key(kernel: PairKernel, x) -> tuple:
    """State of the pair (O, x) in ``kernel``."""
    x = tuple(int(v) for v in np.ravel(x))
    return x if kernel.kind == "difference" else (0,) * kernel.params.d + x


def moment_bound(kernel: PairKernel, res: SeriesResult) -> MomentBound:
    """Certified bracket for the total mass of a series result.

    Escaped mass contributes at least 1 per unit (second moments from the
    all-ones start are at least 1) and at most ``escape_weight``.
    """
    wmax = escape_weight(kernel.params, res.t, kernel.rowmax)
    lo = res.in_box + res.escaped
    hi = res.in_box + res.escaped * wmax + res.tail_bound
    return MomentBound(lo, hi, hi - lo, res.escaped, res.tail_bound)


def second_moment(kernel: PairKernel, x, t: float, tol: float = 1e-8) -> MomentBound:
    """E_1[eta_t(O) eta_t(x)] with a certified bracket."""
    return moment_bound(kernel, qhat_series(kernel, source_key(kernel, x), t, tol=tol))


def fiber_sums(kernel: PairKernel, res: SeriesResult) -> dict:
    """Sum pair entries over fibers y - x = z."""
    if kernel.kind != "pair":
        raise ValueError("fiber sums need a pair kernel")
    diff = kernel.points[:, 1, :] - kernel.points[:, 0, :]
    out = {}
    for z, v in zip(map(tuple, diff), res.values):
        out[z] = out.get(z, 0.0) + v
    return out


def sup_entry_bound(kernel: PairKernel, t: float, tol: float = 1e-8) -> float:
    """Upper bound on every entry of qhat_t from a diagonal source.

    Each pair entry is at most its fiber sum; escaped mass is added in full.
    """
    if kernel.kind != "difference":
        raise ValueError("use a difference kernel")
    res = qhat_series(kernel, (0,) * kernel.params.d, t, tol=tol)
    wmax = escape_weight(kernel.params, t, kernel.rowmax)
    return float(kernel.point_values(res.values).max() + res.escaped * wmax + res.tail_bound)


# ----------------------------------------------------------- tiny torus

def torus_neighbor_table(L: int, d: int) -> np.ndarray:
    n = L**d
    coords = site_coords(np.arange(n), L, d)
    tab = np.empty((n, 2 * d), dtype=np.int64)
    for k in range(2 * d):
        j, s = k >> 1, (1 if k & 1 else -1)
        c = coords.copy()
        c[:, j] += s
        tab[:, k] = site_index(c, L)
    return tab


@dataclass
class TorusMoments:
    first: np.ndarray     # E eta_t(x), shape (n,)
    second: np.ndarray    # E eta_t(x) eta_t(y), shape (n, n)


def tiny_torus_generators(params: ModelParams):
    """(A, B): first-moment generator on sites and pair generator on ordered pairs."""
    L, d, lam = params.L, params.d, params.lam
    n = L**d
    if n > 16:
        raise SizeError(f"tiny torus oracle needs L^d <= 16, got {n}")
    nbr = torus_neighbor_table(L, d)
    A = -np.eye(n)
    for x in range(n):
        for k in range(2 * d):
            A[x, nbr[x, k]] += 1.0 / (2 * d)
    B = -2.0 * np.eye(n * n)
    w = 1.0 / (2 * d)
    for x in range(n):
        for y in range(n):
            s = x * n + y
            if x == y:
                B[s, s] += 1.0 / (2 * d * lam)
                for k in range(2 * d):
                    u = nbr[x, k]
                    B[s, u * n + u] += w
                    B[s, u * n + x] += w
                    B[s, x * n + u] += w
            else:
                for k in range(2 * d):
                    B[s, nbr[x, k] * n + y] += w
                    B[s, x * n + nbr[y, k]] += w
    return A, B


def tiny_torus_exact(params: ModelParams, t: float, eta0=None) -> TorusMoments:
    """Exact first and second moments on a torus with at most 16 sites."""
    A, B = tiny_torus_generators(params)
    n = A.shape[0]
    e0 = np.ones(n) if eta0 is None else np.asarray(eta0, dtype=float)
    m1 = linalg.expm(t * A) @ e0
    m2 = linalg.expm(t * B) @ np.outer(e0, e0).ravel()
    return TorusMoments(m1, m2.reshape(n, n))


# ----------------------------------------------------- beta-walk estimator

def beta_walk_second_moment(params: ModelParams, x, t: float, paths: int = 100_000,
                            seed: int = 0) -> tuple[float, float]:
    """Importance-sampling estimate of E_1[eta_t(O) eta_t(x)] on Z^d.

    The pair difference follows the beta walk (uniform over the 4d or 6d+1
    admissible moves) for a Poisson(2t) number of steps; the path weight is the
    product of Theta = H deg / 2 along it. Returns (mean, standard error).
    """
    d, lam = params.d, params.lam
    rng = np.random.Generator(np.random.Philox(int(stream_key(seed, 7))))
    z = np.tile(np.asarray(x, dtype=np.int64), (paths, 1))
    logw = np.zeros(paths)
    steps = rng.poisson(2.0 * t, size=paths)
    n_diag = 6 * d + 1
    stay = math.log(n_diag / (4.0 * d * lam))
    move = math.log(n_diag / (4.0 * d))
    for n in range(int(steps.max()) if paths else 0):
        act = steps > n
        on = act & ~z.any(axis=1)
        off = act & ~on
        # off the diagonal: 4d equally likely moves, two per unit vector
        k = rng.integers(0, 2 * d, size=paths)
        axis, sgn = k >> 1, np.where(k & 1, 1, -1)
        # on the diagonal: index 0 stays with weight 1/(2d lambda), 1..2d keep
        # z = 0 via (u, u), the remaining 4d shift z by a unit vector
        m = rng.integers(0, n_diag, size=paths)
        shift = off | (on & (m > 2 * d))
        kk = np.where(on, (m - 2 * d - 1) % (2 * d), k)
        axis = np.where(on, kk >> 1, axis)
        sgn = np.where(on, np.where(kk & 1, 1, -1), sgn)
        rows = np.nonzero(shift)[0]
        z[rows, axis[rows]] += sgn[rows]
        logw += np.where(on, np.where(m == 0, stay, move), 0.0)
    wts = np.exp(logw)
    return float(wts.mean()), float(wts.std(ddof=1) / math.sqrt(paths))
