import math

import numpy as np
import pytest
from scipy import integrate

from nbcpp import clt, sim
from nbcpp.campaign import CltConfig, run_replica, separated_origins, summarize
from nbcpp.config import ConfigError
from nbcpp.lattice import site_coords, site_index
from nbcpp.params import ModelParams
from nbcpp.sim import EventLog, InitialCondition


def logged_run(p, t_end, seed=0, replica=0, burn_in=2.0):
    s = sim.init_state(p, InitialCondition("equilibrium", burn_in=burn_in), seed, replica)
    eta0 = s.eta.copy()
    _, _, ev = sim.run_until(s, t_end, record=10**7)
    return eta0, ev, s


def prefix(ev, k):
    return EventLog(ev.time[:k], ev.site[:k], ev.source[:k])


# ------------------------------------------------------------ functional

def test_functional_trivial_fields():
    p = ModelParams(3, 1.0, L=5)
    tab = clt.resolvent_table(p, 0.25)
    s = sim.init_state(p)
    assert clt.resolvent_functional(s, 0.25, tab) == pytest.approx(0.0, abs=1e-12)
    s.weights[:] = 0.0
    assert clt.resolvent_functional(s, 0.25, tab) == pytest.approx(-4.0, rel=1e-12)


def test_functional_matches_naive_sum():
    p = ModelParams(2, 0.8, L=5)
    tab = clt.resolvent_table(p, 0.5)
    s = sim.init_state(p, seed=3)
    sim.run_until(s, 2.0)
    coords = site_coords(np.arange(p.n_sites), p.L, p.d)
    o = (1, 3)
    ref = sum(tab.g[site_index(np.mod(x - np.array(o), p.L), p.L)] * (s.eta[i] - 1)
              for i, x in enumerate(coords))
    assert clt.resolvent_functional(s, 0.5, tab, origin=o) == pytest.approx(ref, rel=1e-12)


def test_functional_rejects_mismatched_table():
    p = ModelParams(3, 1.0, L=5)
    s = sim.init_state(p)
    with pytest.raises(ConfigError, match="g_table"):
        clt.resolvent_functional(s, 0.5, clt.resolvent_table(ModelParams(3, 1.0, L=7), 0.5))
    with pytest.raises(ConfigError, match="g_table"):
        clt.resolvent_functional(s, 0.5, clt.resolvent_table(p, 0.25))
    with pytest.raises(ConfigError, match="g_table"):
        clt.resolvent_functional(s, 0.5, np.ones(125))


# ------------------------------------------------------------ occupation

def test_occupation_at_zero_and_frozen_field():
    p = ModelParams(3, 1.0, L=5)
    eta0 = np.full(p.n_sites, 2.0)
    empty = EventLog(np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64))
    X = clt.occupation_process(p, eta0, empty, 10.0, 4.0, [0.0, 0.5, 1.0])
    c = p.drift
    ref = [(2 * math.expm1(c * 4 * t) / c - 4 * t) / 2 for t in (0.0, 0.5, 1.0)]
    np.testing.assert_allclose(X, ref, rtol=1e-13, atol=1e-15)
    rec = clt.decompose(p, eta0, empty, 10.0, 4.0, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(rec.X, ref, rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        clt.occupation_process(p, eta0, empty, 1.0, 4.0, [1.0])


def test_zero_field_gives_deterministic_occupation():
    p = ModelParams(3, 1.0, L=5)
    eta0 = np.zeros(p.n_sites)
    _, ev, _ = logged_run(p, 8.0)
    rec = clt.decompose(p, eta0, ev, 8.0, 4.0, [0.5, 1.0, 2.0])
    np.testing.assert_allclose(rec.X, [-1.0, -2.0, -4.0], rtol=1e-12)
    np.testing.assert_array_equal(rec.QV, 0.0)
    assert rec.max_jump_sq == 0.0


def test_replay_matches_python_occupation():
    p = ModelParams(3, 1.0, L=5)
    eta0, ev, _ = logged_run(p, 20.0, seed=4)
    times = [0.25, 0.5, 1.0]
    ref = clt.occupation_process(p, eta0, ev, 20.0, 20.0, times, origin=(1, 2, 0))
    rec = clt.decompose(p, eta0, ev, 20.0, 20.0, times, origin=(1, 2, 0))
    np.testing.assert_allclose(rec.X, ref, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("N", [4.0, 25.0])
def test_martingale_identity(N):
    p = ModelParams(3, 1.0, L=7)
    eta0, ev, _ = logged_run(p, N, seed=5)
    rec = clt.decompose(p, eta0, ev, N, N, [0.25, 0.5, 1.0], origin=(3, 0, 3))
    assert rec.identity_error() < 1e-8
    assert np.all(np.isfinite(rec.M)) and np.all(np.isfinite(rec.R))


def test_martingale_drift_between_events():
    p = ModelParams(2, 1.0, L=5)
    N = 3.0
    eta0, ev, _ = logged_run(p, 30.0, seed=6)
    gaps = np.diff(ev.time)
    k = int(np.argmax(gaps[10:])) + 10
    s1, s2 = ev.time[k], ev.time[k + 1]
    a, b = s1 + 0.1 * (s2 - s1), s1 + 0.9 * (s2 - s1)
    rec = clt.decompose(p, eta0, ev, 30.0, N, [a / N, b / N])
    tab = clt.resolvent_table(p, 1 / N)
    eta_a = sim.replay_naive(p, eta0, prefix(ev, k + 1), a)
    c = p.drift
    ref, _ = integrate.quad(lambda s: clt.martingale_drift(p, eta_a * math.exp(c * (s - a)), 1 / N, tab),
                            a, b, epsabs=1e-13, epsrel=1e-12)
    assert rec.M[1] - rec.M[0] == pytest.approx(ref, rel=1e-8, abs=1e-10)
    assert ref != 0.0


def test_quadratic_variation_and_max_jump():
    p = ModelParams(2, 1.0, L=5)
    N = 2.0
    eta0, ev, _ = logged_run(p, 10.0, seed=7)
    n_ev = int(np.searchsorted(ev.time, 10.0))
    ev = prefix(ev, min(n_ev, 300))
    t_end = float(ev.time[-1]) + 1e-9
    times = np.linspace(0, t_end / N, 9)
    rec = clt.decompose(p, eta0, ev, t_end, N, times, origin=(2, 1))
    assert rec.QV[0] == 0.0
    assert np.all(np.diff(rec.QV) >= 0)
    assert np.all(np.diff(rec.max_jump_sq_path) >= 0)
    # jump sizes of G from an explicit replay
    g = clt.resolvent_table(p, 1 / N).centered((2, 1))
    eta = np.array(eta0)
    t, best = 0.0, 0.0
    for s, x, y in zip(ev.time, ev.site, ev.source):
        eta = eta * math.exp(p.drift * (s - t))
        t = s
        new = 0.0 if y < 0 else eta[x] + eta[y]
        best = max(best, (g[x] * (new - eta[x])) ** 2)
        eta[x] = new
    assert rec.max_jump_sq == pytest.approx(best / N, rel=1e-9)
    assert clt.max_jump_diagnostic(rec) == rec.max_jump_sq


def test_decompose_argument_checks():
    p = ModelParams(2, 1.0, L=5)
    eta0, ev, _ = logged_run(p, 2.0)
    with pytest.raises(ValueError):
        clt.decompose(p, eta0, ev, 2.0, 4.0, [1.0])
    with pytest.raises(ValueError):
        clt.decompose(p, eta0, ev, 2.0, 1.0, [0.5, 0.2])


# ------------------------------------------------------------ statistics

def test_variance_test_cases():
    rng = np.random.default_rng(1)
    x = rng.normal(0, 2.0, 2000)
    v = clt.variance_test(x, 1.0, 4.0, resamples=300)
    assert v.ci_low < v.ratio < v.ci_high and v.contains(1.0)
    for k in (0.5, 3.0):
        w = clt.variance_test(k * x, 1.0, 4.0, resamples=300)
        assert w.ratio == pytest.approx(k * k * v.ratio, rel=1e-12)
        assert w.ci_low == pytest.approx(k * k * v.ci_low, rel=1e-12)
    assert clt.variance_test(x, 0.0, 4.0).degenerate
    assert clt.variance_test(np.zeros(600), 1.0, 4.0).degenerate
    with pytest.raises(clt.StatisticsError):
        clt.variance_test(x[:100], 1.0, 4.0)


def test_cluster_bootstrap_widens_for_duplicated_samples():
    rng = np.random.default_rng(2)
    base = rng.normal(size=100)
    x = np.repeat(base, 10)
    labels = np.repeat(np.arange(100), 10)
    naive = clt.variance_test(x, 1.0, 1.0, resamples=400, seed=1)
    clus = clt.variance_test(x, 1.0, 1.0, clusters=labels, resamples=400, seed=1)
    assert clus.half_width > 2 * naive.half_width
    with pytest.raises(clt.StatisticsError):
        clt.bootstrap(x, np.var, clusters=labels[:10])


def test_bootstrap_is_reproducible():
    x = np.random.default_rng(3).normal(size=700)
    assert clt.variance_test(x, 1.0, 1.0, seed=5) == clt.variance_test(x, 1.0, 1.0, seed=5)


def test_ks_calibration():
    pvals = [clt.normality_test(np.random.default_rng(s).normal(size=1000)).pvalue for s in range(40)]
    assert sum(p < 0.05 for p in pvals) <= 6
    shifted = clt.normality_test(np.random.default_rng(0).normal(0.3, 1, 1000))
    assert shifted.pvalue < 1e-6
    const = clt.normality_test(np.full(1000, 0.1))
    assert const.pvalue < 1e-6
    with pytest.raises(clt.StatisticsError):
        clt.normality_test(np.zeros(10))


def test_fdd_cases():
    rng = np.random.default_rng(4)
    b1 = rng.normal(0, 1, 5000)
    b2 = b1 + rng.normal(0, 1, 5000)
    f = clt.fdd_test(np.column_stack([b1, b2]), [1.0, 2.0], 1.0)
    assert f.max_deviation < 0.1
    one = clt.fdd_test(b1, [1.0], 1.0)
    assert one.covariance.shape == (1, 1)
    rank1 = clt.fdd_test(np.column_stack([b1, b1]), [1.0, 2.0], 1.0)
    assert np.linalg.matrix_rank(rank1.covariance) == 1
    assert rank1.relative_deviation[1, 1] == pytest.approx(0.5, abs=0.05)
    with pytest.raises(clt.StatisticsError):
        clt.fdd_test(np.zeros((5000, 6)), [1, 2, 3, 4, 5, 6], 1.0)
    with pytest.raises(clt.StatisticsError):
        clt.fdd_test(np.zeros((10, 2)), [1, 2], 1.0)


def test_strictly_decreasing():
    assert clt.strictly_decreasing([3, 2, 1])
    assert not clt.strictly_decreasing([3, 3, 1])


# ------------------------------------------------------------ campaign

SMALL = CltConfig(d=3, lam=1.0, L=7, N=(4.0, 9.0), times=(0.5, 1.0), replicas=3, seed=8,
                  burn_in=2.0, origins=4)


def test_separated_origins():
    o = separated_origins(15, 5, 10)
    assert len(o) == 10 and len({tuple(v) for v in o}) == 10
    assert np.all(np.isin(o, (0, 7))) and np.all((o != 0).sum(axis=1) % 2 == 0)


def test_campaign_replica_matches_decompose():
    res = run_replica(SMALL, 1)
    p = SMALL.params
    eta0, ev, _ = logged_run(p, 9.0, seed=SMALL.seed, replica=1, burn_in=SMALL.burn_in)
    origins = separated_origins(p.L, p.d, SMALL.origins)
    for i, N in enumerate(SMALL.N):
        for k, o in enumerate(origins):
            rec = clt.decompose(p, eta0, ev, 9.0, N, SMALL.times, origin=o)
            sN = math.sqrt(N)
            got = res.samples[i, :, :, k]
            np.testing.assert_allclose(got[:, 0], rec.X, rtol=1e-9, atol=1e-9)
            np.testing.assert_allclose(got[:, 1], rec.M / sN, rtol=1e-8, atol=1e-8)
            np.testing.assert_allclose(got[:, 2], rec.R / sN, rtol=1e-8, atol=1e-8)
            np.testing.assert_allclose(got[:, 3], rec.QV / N, rtol=1e-9)
            np.testing.assert_allclose(got[:, 4], rec.max_jump_sq_path, rtol=1e-9)


def test_campaign_replica_and_summary_are_deterministic(tmp_path):
    a = [run_replica(SMALL, r) for r in range(3)]
    b = [run_replica(SMALL, r) for r in range(3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.samples, y.samples)
        np.testing.assert_array_equal(x.spatial, y.spatial)
    a[0].to_npz(tmp_path / "r.npz")
    back = type(a[0]).from_npz(tmp_path / "r.npz")
    np.testing.assert_array_equal(back.samples, a[0].samples)
    s1 = summarize(SMALL, a, c1=1.0, resamples=50, seed=0)
    s2 = summarize(SMALL, b, c1=1.0, resamples=50, seed=0)
    assert s1.per_N == s2.per_N


def test_martingale_ensemble_mean_is_zero():
    cfg = CltConfig(d=3, lam=1.0, L=7, N=(4.0, 9.0), times=(0.5, 1.0), replicas=60, seed=9,
                    burn_in=2.0, origins=4)
    s = summarize(cfg, [run_replica(cfg, r) for r in range(cfg.replicas)], c1=1.0, resamples=20)
    for row in s.per_N:
        for t in cfg.times:
            mean, se = row[f"t={t:g}"]["mean_M"]
            assert abs(mean) < 4 * se
