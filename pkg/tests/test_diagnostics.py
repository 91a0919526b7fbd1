import numpy as np

from vlshift import diagnostics as dg


def test_iid_chains_rhat_near_one_ess_near_n():
    rng = np.random.default_rng(0)
    draws = rng.standard_normal((4, 5000))
    assert abs(dg.split_rhat(draws) - 1.0) < 0.01
    ess = dg.ess_bulk(draws)
    assert 0.8 * 20000 < ess <= 20000


def test_shifted_chains_flag_nonconvergence():
    rng = np.random.default_rng(1)
    draws = rng.standard_normal((4, 2000))
    draws[0] += 3.0
    assert dg.split_rhat(draws) > 1.2


def test_trending_single_chain_flagged():
    draws = np.linspace(0, 1, 4000)[None, :]
    assert dg.split_rhat(draws) > 1.2


def test_ar1_ess_matches_theory():
    # ESS of an AR(1) chain is about n (1 - rho) / (1 + rho)
    rho = 0.9
    rng = np.random.default_rng(2)
    n, m = 40000, 4
    draws = np.empty((m, n))
    for c in range(m):
        x = 0.0
        eps = rng.standard_normal(n)
        for i in range(n):
            x = rho * x + np.sqrt(1 - rho**2) * eps[i]
            draws[c, i] = x
    ess = dg.ess_bulk(draws)
    expected = m * n * (1 - rho) / (1 + rho)
    assert 0.6 * expected < ess < 1.6 * expected


def test_summarize_keys():
    rng = np.random.default_rng(3)
    out = dg.summarize({"x": rng.standard_normal((2, 1000))})
    assert set(out["x"]) == {"rhat", "ess_bulk", "mean", "sd", "q2.5", "q50", "q97.5"}
