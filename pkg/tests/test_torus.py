import numpy as np
import pytest

from nbcpp import torus
from nbcpp.moments import build_difference_kernel, second_moment
from nbcpp.params import ModelParams


@pytest.mark.parametrize("theta,L,d", [(0.5, 7, 3), (0.05, 9, 3), (0.2, 5, 5)])
def test_fft_resolvent_matches_image_sum(theta, L, d):
    g = torus.torus_resolvent(theta, L, d)
    gi, bound = torus.torus_resolvent_images(theta, L, d, periods=3 if d == 3 else 2)
    assert np.abs(g - gi).max() <= bound + 1e-10


@pytest.mark.parametrize("theta,L,d", [(1.0, 5, 2), (1 / 400, 15, 5), (1e-3, 9, 3)])
def test_resolvent_equation(theta, L, d):
    g = torus.torus_resolvent(theta, L, d)
    lhs = (theta + 1) * g - torus.neighbor_sum(g) / (2 * d)
    delta = np.zeros_like(g)
    delta[(0,) * d] = 1.0
    np.testing.assert_allclose(lhs, delta, atol=1e-12 * g.max())
    assert g.sum() == pytest.approx(1 / theta, rel=1e-12)
    assert g.min() > 0
    with pytest.raises(ValueError):
        torus.torus_resolvent(0.0, L, d)


def test_correlate_matches_loop():
    rng = np.random.default_rng(0)
    L, d = 5, 2
    f, k = rng.random((L, L)), rng.random((L, L))
    out = torus.correlate(f, k)
    for o in np.ndindex(L, L):
        ref = sum(k[(x[0] - o[0]) % L, (x[1] - o[1]) % L] * f[x] for x in np.ndindex(L, L))
        assert out[o] == pytest.approx(ref, rel=1e-12)


def test_weight_totals():
    lam, theta, L, d = 0.7, 0.1, 7, 3
    g = torus.torus_resolvent(theta, L, d)
    r = 1 / (2 * lam * d)
    assert torus.compensator_weight(g, lam).sum() == pytest.approx((1 - r) / theta, rel=1e-12)
    g2 = (g * g).sum()
    assert torus.qv_weight(g, lam).sum() == pytest.approx(r * g2 * (1 + 2 * d * lam), rel=1e-12)


@pytest.mark.parametrize("L,d", [(5, 2), (6, 3), (7, 3)])
def test_mode_classes_cover_the_spectrum(L, d):
    ev, mult = torus.mode_classes(L, d)
    assert mult.sum() == L**d
    full = np.sort(torus.symbol(L, d).ravel() - 1)
    rebuilt = np.sort(np.repeat(ev, mult.astype(int)))
    np.testing.assert_allclose(rebuilt, full, atol=1e-13)


def test_prediction_second_moment_matches_difference_chain():
    p = ModelParams(3, 1.0, L=7)
    pred = torus.predict(p, [10.0], t=0.5, burn_in=4.0)[0]
    k = build_difference_kernel(p, geometry="torus")
    exact = second_moment(k, (0, 0, 0), 4.0, tol=1e-12).value
    assert pred.second_moment == pytest.approx(exact, rel=1e-4)


def test_prediction_step_convergence():
    p = ModelParams(3, 1.0, L=7)
    a = torus.predict(p, [20.0], burn_in=3.0, ds=0.02)[0]
    b = torus.predict(p, [20.0], burn_in=3.0, ds=0.01)[0]
    for f in ("var_x", "mean_r2", "mean_qv"):
        assert getattr(a, f) == pytest.approx(getattr(b, f), rel=2e-3)
    assert a.var_x > 0 and a.mean_r2 > 0 and a.mean_qv > 0
