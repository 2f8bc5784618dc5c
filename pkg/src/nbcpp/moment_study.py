"""Monte Carlo first and second moments from the all-ones start on the torus.

Each replica contributes the field at a set of spread base sites (pooled as
site samples, with replicas as clusters) and the spatial autocorrelation
mean_x eta(x) eta(x + z) for every offset in a small l1 ball, obtained from one
FFT per observation time.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .lattice import canonical, l1_ball, site_index
from .orchestrate import map_replicas
from .params import ModelParams
from .sim import batch_run


@dataclass(frozen=True)
class MomentStudyConfig:
    d: int = 5
    lam: float = 1.0
    L: int = 15
    replicas: int = 500
    seed: int = 11
    times: tuple = (0.5, 1.0, 2.0, 5.0, 20.0, 40.0)
    base_sites: int = 20
    spacing: int = 5
    offset_radius: int = 3

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(v) for v in self.times))

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.d, self.lam, self.L)

    def digest(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if k != "replicas"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]

    def bases(self) -> np.ndarray:
        """Points of {0, s, 2s, ...}^d taken at even strides through the lexicographic list."""
        grid = np.array(list(itertools.product(range(0, self.L - self.spacing + 1, self.spacing),
                                               repeat=self.d)))
        step = max(1, len(grid) // self.base_sites)
        return grid[::step][: self.base_sites]

    def offsets(self) -> np.ndarray:
        return l1_ball(self.offset_radius, self.d)


@dataclass
class MomentReplica:
    replica: int
    base: np.ndarray       # (times, bases)
    pairs: np.ndarray      # (bases, offsets) at the last time
    autocorr: np.ndarray   # (times, offsets): mean_x eta(x) eta(x + z)
    mean: np.ndarray       # (times,): spatial mean

    def to_npz(self, path):
        np.savez(path, replica=self.replica, base=self.base, pairs=self.pairs,
                 autocorr=self.autocorr, mean=self.mean)

    @classmethod
    def from_npz(cls, path):
        z = np.load(path)
        return cls(int(z["replica"]), z["base"], z["pairs"], z["autocorr"], z["mean"])


class _Task:
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, replica):
        cfg = self.cfg
        p = cfg.params
        shape = (p.L,) * p.d
        fields = batch_run(p, cfg.times, 1, cfg.seed, first_replica=replica)[0]
        bases = cfg.bases()
        offs = cfg.offsets()
        bidx = site_index(bases, p.L)
        oidx = site_index(np.mod(offs, p.L), p.L)
        pidx = site_index(bases[:, None, :] + offs[None, :, :], p.L)
        base = fields[:, bidx]
        auto = np.empty((len(cfg.times), len(offs)))
        for m in range(len(cfg.times)):
            f = np.fft.rfftn(fields[m].reshape(shape))
            ac = np.fft.irfftn(f * np.conj(f), s=shape).ravel() / p.n_sites
            auto[m] = ac[oidx]
        return MomentReplica(replica, base, fields[-1][pidx], auto, fields.mean(axis=1))


def run_study(cfg: MomentStudyConfig, workers: int = 1, cache_root=None, progress=None):
    cache = None if cache_root is None else Path(cache_root) / f"moments-{cfg.digest()}"
    return map_replicas(_Task(cfg), range(cfg.replicas), workers, cache,
                        MomentReplica.from_npz, lambda r, path: r.to_npz(path), progress)


# ------------------------------------------------------------------ analysis

def cluster_mean(values: np.ndarray) -> tuple[float, float]:
    """Mean of all entries and its SE with the first axis as clusters."""
    per = values.reshape(values.shape[0], -1)
    n, k = per.shape
    sums = per.sum(axis=1)
    mean = sums.sum() / (n * k)
    se = math.sqrt(n / (n - 1) * ((sums - mean * k) ** 2).sum()) / (n * k)
    return float(mean), float(se)


def cluster_covariance(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Sample covariance of paired samples, delete-one-cluster jackknife SE.

    a, b have shape (clusters, k).
    """
    n, k = a.shape
    sa, sb, sab = a.sum(axis=1), b.sum(axis=1), (a * b).sum(axis=1)
    A, B, AB, tot = sa.sum(), sb.sum(), sab.sum(), n * k

    def est(A, B, AB, m):
        return AB / m - (A / m) * (B / m)

    full = est(A, B, AB, tot)
    loo = est(A - sa, B - sb, AB - sab, tot - k)
    se = math.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum())
    return float(full), float(se)


def offset_classes(offsets: np.ndarray) -> dict:
    """Canonical class -> indices of the offsets belonging to it."""
    out: dict = {}
    for i, z in enumerate(offsets):
        out.setdefault(canonical(z), []).append(i)
    return dict(sorted(out.items(), key=lambda kv: (sum(kv[0]), kv[0])))


def summarize(cfg: MomentStudyConfig, results: list[MomentReplica]) -> dict:
    base = np.stack([r.base for r in results])          # (rep, time, base)
    pairs = np.stack([r.pairs for r in results])        # (rep, base, offset)
    auto = np.stack([r.autocorr for r in results])      # (rep, time, offset)
    means = np.stack([r.mean for r in results])          # (rep, time)
    offs = cfg.offsets()
    classes = offset_classes(offs)
    out = {"replicas": len(results), "site_samples": int(base.shape[0] * base.shape[2]),
           "times": list(cfg.times), "mean": [], "second_moment": [], "spatial": []}
    for m, t in enumerate(cfg.times):
        mu, se = cluster_mean(base[:, m])
        out["mean"].append({"t": t, "mean": mu, "se": se})
        m2, se2 = cluster_mean(base[:, m] ** 2)
        out["second_moment"].append({"t": t, "mean": m2, "se": se2})
        row = {"t": t, "spatial_mean": cluster_mean(means[:, m][:, None])}
        row["classes"] = {",".join(map(str, c)): cluster_mean(auto[:, m, idx].mean(axis=1)[:, None])
                          for c, idx in classes.items()}
        out["spatial"].append(row)
    cov = {}
    last = base[:, -1]  # (rep, base)
    for c, idx in classes.items():
        a = np.repeat(last, len(idx), axis=1)
        b = pairs[:, :, idx].reshape(pairs.shape[0], -1)
        cov[",".join(map(str, c))] = cluster_covariance(a, b)
    out["covariance"] = {"t": cfg.times[-1], "classes": cov}
    return out
