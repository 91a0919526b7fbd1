import numpy as np
import pytest
from scipy import special, stats

from vlshift import _kernels as K


def test_norm_logcdf_matches_scipy_across_range():
    xs = np.concatenate([
        np.linspace(-40, -26.5, 30),
        np.linspace(-26, 8, 200),
        np.linspace(8.5, 40, 30),
    ])
    ref = special.log_ndtr(xs)
    mine = np.array([K.norm_logcdf_std(x) for x in xs])
    # relative agreement in log space; tails matter for censored terms
    assert np.max(np.abs(mine - ref) / (np.abs(ref) + 1e-12)) < 1e-9


def test_norm_logpdf():
    xs = np.linspace(-10, 10, 41)
    ref = stats.norm.logpdf(xs)
    mine = np.array([K.norm_logpdf_std(x) for x in xs])
    assert np.allclose(mine, ref, rtol=1e-14)


def test_tau_logpdf_core_overflow_guard():
    # far right tail: the double-exponential term overflows exp -> density 0
    assert K.tau_logpdf_core(1000.0, 1.0, 1.0, 1.0, 1.0, 1.0) == -np.inf
    v = K.tau_logpdf_core(0.3, 1.2, 0.2, 0.3, 0.7, 0.8)
    assert np.isfinite(v)


def test_growth_rate_core_matches_numpy_eig():
    rng = np.random.default_rng(2)
    for _ in range(100):
        k = rng.uniform(0.5, 8)
        delta = rng.uniform(0.2, 4)
        c = rng.uniform(2, 20)
        rho = rng.uniform(0.3, 12)
        beta_star = rng.uniform(0.1, 200)
        A = np.array([[-k, 0, beta_star], [k, -delta, 0], [0, rho, -c]])
        lam_ref = np.max(np.linalg.eigvals(A).real)
        lam = K.growth_rate_core(k, delta, c, rho, beta_star)
        assert lam == pytest.approx(lam_ref, rel=1e-9, abs=1e-9)


def test_nn_forward_positive_and_deterministic():
    rng = np.random.default_rng(3)
    w1 = rng.normal(size=(64, 3))
    b1 = rng.normal(size=64)
    w2 = rng.normal(size=(3, 64))
    b2 = rng.normal(size=3) - 5.0  # drive softplus toward its small range
    mean = np.zeros(3)
    std = np.ones(3)
    a = K.nn_forward(8.0, 1.7, 3.0, w1, b1, w2, b2, mean, std)
    b = K.nn_forward(8.0, 1.7, 3.0, w1, b1, w2, b2, mean, std)
    assert np.all(a > 0)
    assert np.array_equal(a, b)


def test_path_loglik_core_against_python_reference():
    # dense trajectory for the reference comparison
    y0 = np.array([8e7 - 1.0, 1.0, 0.0, 0.0])
    st, n_seg, ts, ys, Q = K.solve_tcl(
        5.666667e-7, 4.0, 1.7, 3.0, 10.0, y0, 30.0, 1e-8, 1e-10, 100000
    )
    assert st == K.OK
    times = np.array([2.0, 4.0, 6.0, 9.0, 14.0])
    t0, tau, eta, kappa = -1.0, 0.4, 2.658, 0.5
    zs = []
    for t in times:
        v = K.dense_eval_v(ts, ys, Q, n_seg, t + tau - t0)
        zs.append(np.log10(v) if v > 1e-30 else -np.inf)
    zs = np.array(zs)
    values = zs + np.array([0.3, -0.2, 0.1, 0.0, -3.0])
    censored = np.array([0, 0, 0, 0, 1], dtype=np.uint8)
    values[4] = eta
    ref = (stats.norm.logpdf(values[:4], zs[:4], kappa).sum()
           + stats.norm.logcdf(eta, zs[4], kappa))
    mine = K.path_loglik_core(ts, ys, Q, n_seg, t0, tau, times, values,
                              censored, eta, kappa)
    assert mine == pytest.approx(ref, rel=1e-12)


def test_path_loglik_censored_before_infection_contributes_one():
    y0 = np.array([8e7 - 1.0, 1.0, 0.0, 0.0])
    _, n_seg, ts, ys, Q = K.solve_tcl(
        5.666667e-7, 4.0, 1.7, 3.0, 10.0, y0, 30.0, 1e-8, 1e-10, 100000
    )
    times = np.array([-5.0])
    values = np.array([2.658])
    censored = np.array([1], dtype=np.uint8)
    out = K.path_loglik_core(ts, ys, Q, n_seg, 0.0, 0.0, times, values,
                             censored, 2.658, 0.5)
    assert out == 0.0
    # a detected observation before infection is impossible
    censored = np.array([0], dtype=np.uint8)
    out = K.path_loglik_core(ts, ys, Q, n_seg, 0.0, 0.0, times, values,
                             censored, 2.658, 0.5)
    assert out == -np.inf
