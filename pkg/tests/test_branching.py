import numpy as np
import pytest

from vlshift.model import FIG1_PARAMS, ModelParams
from vlshift import branching
from vlshift.timeshift import simulate_w


def _bisect_cubic(k, delta, c, target, lo, hi, iters=200):
    """Independent bisection oracle for (x+k)(x+delta)(x+c) = target."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (mid + k) * (mid + delta) * (mid + c) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_growth_rate_fig1_against_bisection_oracle():
    p = FIG1_PARAMS
    target = p.beta_star * p.k * p.rho  # 544 for the Fig-1 values
    assert target == pytest.approx(544.0, rel=1e-12)
    oracle = _bisect_cubic(4.0, 1.7, 10.0, 544.0, 0.0, 20.0)
    lam = branching.growth_rate(p)
    assert lam == pytest.approx(oracle, abs=1e-10)
    assert lam == pytest.approx(3.58, abs=0.01)


def test_growth_rate_critical_exactly_zero():
    p = ModelParams(R0=1.0, k=4.0, delta=1.0, rho=10.0, c=10.0, S0=1e6)
    assert p.beta_star == pytest.approx(1.0)
    assert branching.growth_rate(p) == 0.0


def test_growth_rate_subcritical_negative():
    p = ModelParams(R0=0.5, k=4.0, delta=1.7, rho=3.0, c=10.0)
    assert branching.growth_rate(p) < 0.0


def test_sign_lambda_iff_r0_randomized():
    rng = np.random.default_rng(7)
    for _ in range(200):
        p = ModelParams(
            R0=rng.uniform(0.05, 25),
            k=rng.uniform(0.5, 8),
            delta=rng.uniform(0.2, 4),
            rho=rng.uniform(0.3, 12),
            c=rng.uniform(2, 20),
        )
        lam = branching.growth_rate(p)
        if p.R0 > 1:
            assert lam > 0
        elif p.R0 < 1:
            assert lam < 0


def test_extinction_probs_fig1_closed_form():
    q1, q2, q3 = branching.extinction_probs(FIG1_PARAMS)
    assert q3 == pytest.approx(47.0 / 166.0, rel=1e-12)
    assert q1 == q2
    assert q1 == pytest.approx(0.4415, abs=2e-4)


def test_extinction_probs_critical_boundary():
    p = ModelParams(R0=1.0, k=4.0, delta=1.0, rho=10.0, c=10.0, S0=1e6)
    assert branching.extinction_probs(p) == (1.0, 1.0, 1.0)


def test_q_one_is_root_of_corrected_quadratic():
    rng = np.random.default_rng(8)
    for _ in range(200):
        p = ModelParams(
            R0=rng.uniform(0.1, 25), k=rng.uniform(0.5, 8),
            delta=rng.uniform(0.2, 4), rho=rng.uniform(0.3, 12),
            c=rng.uniform(2, 20),
        )
        val = branching.extinction_quadratic(p, 1.0)
        scale = p.rho * (p.c + p.beta_star)
        assert abs(val) < 1e-9 * scale


def test_returned_q3_is_minimal_root():
    rng = np.random.default_rng(9)
    for _ in range(100):
        p = ModelParams(
            R0=rng.uniform(1.1, 25), k=rng.uniform(0.5, 8),
            delta=rng.uniform(0.2, 4), rho=rng.uniform(0.3, 12),
            c=rng.uniform(2, 20),
        )
        _, _, q3 = branching.extinction_probs(p)
        assert 0 < q3 < 1
        scale = p.rho * (p.c + p.beta_star)
        assert abs(branching.extinction_quadratic(p, q3)) < 1e-9 * scale


def test_q_star_monotone_in_r0_along_beta_ray():
    qs = [branching.extinction_probs(
        ModelParams(R0=r0, k=4.0, delta=1.7, rho=3.0, c=10.0))[0]
        for r0 in np.linspace(1.2, 20, 15)]
    assert np.all(np.diff(qs) < 0)


def test_eigen_residual():
    s = branching.bp_summary(FIG1_PARAMS)
    u = np.array(s.u)
    res = u @ branching.mean_matrix(FIG1_PARAMS) - s.lam * u
    assert np.max(np.abs(res)) < 1e-10
    assert np.all(u > 0)
    assert sum(s.u) == pytest.approx(1.0, abs=1e-12)
    assert s.mu_w == s.u[0]


def test_mu_w_matches_martingale_mean_monte_carlo():
    # E[exp(-lam T) u.X(T)] over all runs (extinct contribute 0) is the
    # martingale mean u.X(0) = mu_w; checked at T = 6/lam within 3 SE
    p = FIG1_PARAMS
    s = branching.bp_summary(p)
    rng = np.random.default_rng(123)
    w, _ = simulate_w(p, 60_000, rng, horizon_mult=6.0)
    vals = np.where(np.isnan(w), 0.0, w)
    se = vals.std() / np.sqrt(vals.size)
    assert abs(vals.mean() - s.mu_w) < 3 * se


def test_subcritical_error_for_law_callers():
    p = ModelParams(R0=0.8, k=4.0, delta=1.7, rho=3.0, c=10.0)
    s = branching.bp_summary(p)  # summary itself is fine
    assert s.q_star == 1.0
    with pytest.raises(branching.SubcriticalError):
        branching.require_supercritical(p)
