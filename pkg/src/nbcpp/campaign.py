"""Replica runner and analysis for the occupation-time CLT experiments.

One trajectory per replica serves every N: it is started from the equilibrium
initial condition, the accumulator kernel tracks the per-site integrals of eta
and eta**2 and the largest squared jump, and at each snapshot time tN all
statistics are evaluated for every origin at once with FFT correlations.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from . import clt, torus
from .lattice import site_index
from .params import ModelParams
from .sim import InitialCondition, init_state

QUANTITIES = ("X", "M_over_sqrtN", "R_over_sqrtN", "QV_over_N", "max_jump_sq")
SPATIAL = ("X", "X2", "M", "M2", "R2", "QV", "QV2")


@dataclass(frozen=True)
class CltConfig:
    d: int = 5
    lam: float = 1.0
    L: int = 15
    N: tuple = (25.0, 100.0, 400.0)
    times: tuple = (0.5, 1.0)
    replicas: int = 100
    seed: int = 0
    burn_in: float | None = 20.0
    origins: int = 10

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(float(v) for v in self.N))
        object.__setattr__(self, "times", tuple(float(v) for v in self.times))
        if any(v <= 0 for v in self.N):
            raise ValueError("N: values must be positive")
        if any(v < 0 for v in self.times) or list(self.times) != sorted(set(self.times)):
            raise ValueError("times: must be increasing and nonnegative")
        if self.replicas < 1:
            raise ValueError("replicas: must be >= 1")
        if self.origins < 1:
            raise ValueError("origins: must be >= 1")
        self.params  # validates d, lambda, L

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.d, self.lam, self.L)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def digest(self, exclude=("replicas",)) -> str:
        """Hash of everything that determines a single replica's output."""
        doc = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


def separated_origins(L: int, d: int, k: int) -> np.ndarray:
    """k origins from {0, L//2}^d with even weight, by weight then lexicographic."""
    words = [w for w in itertools.product((0, 1), repeat=d) if sum(w) % 2 == 0]
    words.sort(key=lambda w: (sum(w), tuple(-v for v in w)))
    if k > len(words):
        raise ValueError(f"origins: at most {len(words)} separated origins for d={d}")
    return np.array(words[:k], dtype=np.int64) * (L // 2)


@dataclass
class ReplicaResult:
    """samples[i, j, q, k]: quantity q at N[i], times[j], origin k.

    spatial[i, j, s]: averages over all torus origins (see SPATIAL), and
    cross[i]: the all-origin average of X_{t1} X_{t2} for every pair of times.
    """

    replica: int
    samples: np.ndarray
    spatial: np.ndarray
    cross: np.ndarray
    events: int
    burn_in: float
    status: str = "ok"

    def to_npz(self, path):
        np.savez(path, replica=self.replica, samples=self.samples, spatial=self.spatial,
                 cross=self.cross, events=self.events, burn_in=self.burn_in, status=self.status)

    @classmethod
    def from_npz(cls, path) -> "ReplicaResult":
        z = np.load(path)
        return cls(int(z["replica"]), z["samples"], z["spatial"], z["cross"], int(z["events"]),
                   float(z["burn_in"]), str(z["status"]))


def _tables(cfg: CltConfig):
    out = {}
    for N in cfg.N:
        g = torus.torus_resolvent(1.0 / N, cfg.L, cfg.d)
        out[N] = (g, torus.qv_weight(g, cfg.lam))
    return out


def run_replica(cfg: CltConfig, replica: int, tables=None) -> ReplicaResult:
    p = cfg.params
    shape = (p.L,) * p.d
    tables = _tables(cfg) if tables is None else tables
    ic = InitialCondition("equilibrium", burn_in=cfg.burn_in)
    st = init_state(p, ic, cfg.seed, replica)
    eta0 = st.eta.reshape(shape).copy()
    S = np.zeros((p.n_sites, K.NCOL))
    S[:, K.W] = st.eta
    S[:, K.ELAST] = 1.0
    strides, inv_s, inv_L = K.geometry(p.L, p.d)
    origins = separated_origins(p.L, p.d, cfg.origins)
    oidx = site_index(origins, p.L)
    nN, nt, no = len(cfg.N), len(cfg.times), len(origins)
    samples = np.full((nN, nt, len(QUANTITIES), no), np.nan)
    spatial = np.full((nN, nt, len(SPATIAL)), np.nan)
    cross = np.full((nN, nt, nt), np.nan)
    xfields = {}
    stops = sorted({N * t for N in cfg.N for t in cfg.times})
    t, next_t, ctr, ls0, t0 = 0.0, st.next_time, st.counter, 0.0, 0.0
    c = p.drift
    events = st.events
    status = "ok"
    for tau in stops:
        t, next_t, ctr, ls0, t0, nev, code = K.advance_accum(
            S, p.L, p.d, p.lam, t, tau, next_t, st.key, ctr, ls0, t0, strides, inv_s, inv_L)
        ctr = np.uint64(ctr)
        events += nev
        if code == K.OVERFLOWED:
            status = "overflow"
            break
        if code == K.STALLED:
            raise RuntimeError(f"replica {replica}: event clock stalled near t={t}")
        E = math.exp(ls0 + c * (tau - t0))
        K.flush(S, E, tau, c)
        eta = (S[:, K.W] * E).reshape(shape)
        occ1 = S[:, K.OCC1].reshape(shape)
        occ2 = S[:, K.OCC2].reshape(shape)
        jump = S[:, K.JUMP].reshape(shape)
        for i, N in enumerate(cfg.N):
            for j, tt in enumerate(cfg.times):
                if N * tt != tau:
                    continue
                g, q = tables[N]
                sN = math.sqrt(N)
                X = (occ1 - tau) / sN
                R = (-torus.correlate(eta - 1.0, g) + torus.correlate(eta0 - 1.0, g)
                     + torus.correlate(occ1 - tau, g) / N)
                M = sN * X - R
                QV = torus.correlate(occ2, q) / N
                flat = [a.ravel() for a in (X, M / sN, R / sN, QV)]
                for qi, a in enumerate(flat):
                    samples[i, j, qi] = a[oidx]
                g2 = (g * g).ravel()
                jflat = jump.ravel()
                for k, o in enumerate(origins):
                    gc = np.roll(g2.reshape(shape), tuple(o), axis=tuple(range(p.d))).ravel()
                    samples[i, j, 4, k] = float(np.max(gc * jflat)) / N
                m = M / sN
                spatial[i, j] = [X.mean(), (X * X).mean(), m.mean(), (m * m).mean(),
                                 ((R / sN) ** 2).mean(), QV.mean(), (QV * QV).mean()]
                xfields[(i, j)] = X.ravel().copy()
    for i in range(nN):
        for j1, j2 in itertools.product(range(nt), repeat=2):
            if (i, j1) in xfields and (i, j2) in xfields:
                cross[i, j1, j2] = float(np.mean(xfields[(i, j1)] * xfields[(i, j2)]))
    return ReplicaResult(replica, samples, spatial, cross, int(events), float(st.burn_in), status)


# ------------------------------------------------------------------ analysis

@dataclass
class CampaignSummary:
    config: dict
    c1: float
    n_replicas: int
    n_samples: int
    per_N: list = field(default_factory=list)
    variance: dict = field(default_factory=dict)
    normality: dict = field(default_factory=dict)
    fdd: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan")


def _cluster_se(values, clusters):
    """SE of the grand mean treating each cluster's values as one unit."""
    v = np.asarray(values, dtype=float)
    labels, inv = np.unique(clusters, return_inverse=True)
    sums = np.bincount(inv, weights=v)
    counts = np.bincount(inv)
    n = len(labels)
    mean = sums.sum() / counts.sum()
    resid = sums - mean * counts
    return float(mean), float(math.sqrt(n / (n - 1) * (resid**2).sum()) / counts.sum())


def summarize(cfg: CltConfig, results: list[ReplicaResult], c1: float, resamples: int = 1000,
              seed: int = 0) -> CampaignSummary:
    """Ensemble statistics per N; tests use the largest N and the last grid time."""
    ok = [r for r in results if r.status == "ok"]
    samples = np.stack([r.samples for r in ok])  # (rep, N, t, q, origin)
    spatial = np.stack([r.spatial for r in ok])
    nrep, _, nt, _, no = samples.shape
    clusters = np.repeat(np.arange(nrep), no)
    summ = CampaignSummary(cfg.to_dict(), c1, nrep, nrep * no)
    for i, N in enumerate(cfg.N):
        row = {"N": N}
        for j, t in enumerate(cfg.times):
            s = samples[:, i, j]
            flat = {q: s[:, qi].ravel() for qi, q in enumerate(QUANTITIES)}
            x = flat["X"]
            qv = flat["QV_over_N"]
            r2 = flat["R_over_sqrtN"] ** 2
            entry = {
                "t": t,
                "mean_X": _cluster_se(x, clusters),
                "var_X": float(np.var(x, ddof=1)),
                "mean_M": _cluster_se(flat["M_over_sqrtN"], clusters),
                "mean_R2": _cluster_se(r2, clusters),
                "mean_QV": _cluster_se(qv, clusters),
                "var_QV": float(np.var(qv, ddof=1)),
                "mean_max_jump_sq": _cluster_se(flat["max_jump_sq"], clusters),
                "spatial_mean_X": _mean_se(spatial[:, i, j, 0]),
                "spatial_mean_X2": _mean_se(spatial[:, i, j, 1]),
                "spatial_mean_M": _mean_se(spatial[:, i, j, 2]),
                "spatial_mean_R2": _mean_se(spatial[:, i, j, 4]),
                "spatial_mean_QV": _mean_se(spatial[:, i, j, 5]),
            }
            row[f"t={t:g}"] = entry
        summ.per_N.append(row)
    i, j = len(cfg.N) - 1, nt - 1
    t = cfg.times[j]
    x = samples[:, i, j, 0].ravel()
    if x.size >= clt.MIN_SAMPLES:
        vt = clt.variance_test(x, t, c1, clusters=clusters, resamples=resamples, seed=seed)
        summ.variance = {"N": cfg.N[i], "t": t, "ratio": vt.ratio, "ci": [vt.ci_low, vt.ci_high],
                         "half_width": vt.half_width, "contains_1": vt.contains(1.0),
                         "degenerate": vt.degenerate, "n": vt.n}
        if t > 0:
            nt_ = clt.normality_test(x / math.sqrt(c1 * t))
            summ.normality = {"N": cfg.N[i], "t": t, "ks_statistic": nt_.statistic,
                              "pvalue": nt_.pvalue, "skewness": nt_.skewness,
                              "excess_kurtosis": nt_.excess_kurtosis, "n": nt_.n}
    if x.size >= clt.MIN_FDD_SAMPLES and nt <= 5:
        cols = np.stack([samples[:, i, jj, 0].ravel() for jj in range(nt)], axis=1)
        ft = clt.fdd_test(cols, cfg.times, c1)
        summ.fdd = {"N": cfg.N[i], "times": list(cfg.times), "covariance": ft.covariance.tolist(),
                    "target": ft.target.tolist(), "relative_deviation": ft.relative_deviation.tolist(),
                    "max_deviation": ft.max_deviation}
    return summ


def run_campaign(cfg: CltConfig, workers: int = 1, cache_dir=None, progress=None) -> list[ReplicaResult]:
    """All replicas, sorted by index; cached replicas are loaded instead of rerun."""
    from .orchestrate import map_replicas

    return map_replicas(_CampaignTask(cfg), range(cfg.replicas), workers, cache_dir,
                        ReplicaResult.from_npz, lambda r, path: r.to_npz(path), progress)


class _CampaignTask:
    def __init__(self, cfg):
        self.cfg = cfg
        self._tables = None

    def __call__(self, replica):
        if self._tables is None:
            self._tables = _tables(self.cfg)
        return run_replica(self.cfg, replica, self._tables)


def cache_path(root, cfg: CltConfig):
    from pathlib import Path

    return Path(root) / f"clt-{cfg.digest()}"
