import numpy as np
import pytest

from vlshift.model import (
    FIG1_PARAMS,
    DomainError,
    ModelParams,
    REACTIONS,
    State,
    beta_from_r0,
    initial_state,
    r0_from_beta,
    rates,
)


def test_beta_from_r0_fig1_value():
    # direct substitution: 8 * 1.7 * 10 / (3 * 8e7)
    assert beta_from_r0(FIG1_PARAMS) == pytest.approx(5.66667e-7, rel=1e-5)


def test_beta_from_r0_critical_case():
    p = ModelParams(R0=1.0, delta=1.0, rho=10.0, c=10.0, S0=1e6)
    assert beta_from_r0(p) == pytest.approx(1e-6, rel=1e-12)


def test_r0_beta_round_trip_exact():
    beta = beta_from_r0(FIG1_PARAMS)
    assert r0_from_beta(beta, FIG1_PARAMS) == pytest.approx(8.0, rel=1e-12)


def test_round_trip_randomized():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = ModelParams(
            R0=rng.uniform(0.1, 30),
            k=rng.uniform(0.5, 8),
            delta=rng.uniform(0.2, 4),
            rho=rng.uniform(0.3, 12),
            c=rng.uniform(2, 20),
            S0=rng.uniform(1e4, 1e9),
        )
        assert r0_from_beta(beta_from_r0(p), p) == pytest.approx(p.R0, rel=1e-12)


def test_beta_from_r0_requires_positive():
    p = ModelParams(R0=0.0, delta=1.0, rho=1.0)
    with pytest.raises(DomainError):
        beta_from_r0(p)


@pytest.mark.parametrize("field,value", [
    ("k", -1.0), ("delta", 0.0), ("rho", -2.0), ("c", 0.0), ("R0", -0.5),
])
def test_invalid_params_raise(field, value):
    kwargs = dict(R0=8.0, k=4.0, delta=1.7, rho=3.0, c=10.0)
    kwargs[field] = value
    with pytest.raises(DomainError):
        ModelParams(**kwargs)


def test_rates_only_eclipse_exit_at_start():
    s = State(S=int(8e7) - 1, E=1, I=0, V=0)
    r = rates(s, FIG1_PARAMS)
    assert np.allclose(r, [0.0, 4.0, 0.0, 0.0, 0.0])


def test_rates_pure_clearance():
    p = ModelParams(R0=8.0, delta=1.7, rho=3.0, c=10.0)
    r = rates(State(S=0, E=0, I=0, V=5), p)
    assert np.allclose(r, [0.0, 0.0, 0.0, 0.0, 50.0])


def test_rates_fig1_mixed_state():
    # production is rho * I, not rho * V
    r = rates(State(S=int(8e7), E=0, I=1, V=1), FIG1_PARAMS)
    assert r[0] == pytest.approx(45.3333, rel=1e-4)
    assert r[1] == 0.0
    assert r[2] == pytest.approx(1.7)
    assert r[3] == pytest.approx(3.0)
    assert r[4] == pytest.approx(10.0)


def test_infection_rate_bilinear_homogeneity():
    # doubling S and halving beta (via S0) leaves the infection rate unchanged
    p = FIG1_PARAMS
    p2 = ModelParams(R0=p.R0, k=p.k, delta=p.delta, rho=p.rho, c=p.c,
                     S0=2 * p.S0)
    s = State(S=1000, E=2, I=3, V=7)
    s2 = State(S=2000, E=2, I=3, V=7)
    assert rates(s, p)[0] == pytest.approx(rates(s2, p2)[0], rel=1e-12)


def test_cell_count_non_increasing_per_reaction():
    for rx in REACTIONS:
        ds, de, di, dv = rx.delta_state
        assert ds + de + di <= 0


def test_reaction_table_matches_expected_stoichiometry():
    expected = {
        "infection": (-1, 1, 0, 0),
        "eclipse_exit": (0, -1, 1, 0),
        "cell_removal": (0, 0, -1, 0),
        "virion_production": (0, 0, 0, 1),
        "virion_clearance": (0, 0, 0, -1),
    }
    assert {r.rate_kind: r.delta_state for r in REACTIONS} == expected


def test_rates_nonnegative_on_random_states():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s = State(*(int(x) for x in rng.integers(0, 1000, size=4)))
        assert np.all(rates(s, FIG1_PARAMS) >= 0)


def test_state_rejects_negative_counts():
    with pytest.raises(DomainError):
        State(S=-1, E=0, I=0, V=0)


def test_initial_state():
    s = initial_state(FIG1_PARAMS)
    assert (s.S, s.E, s.I, s.V) == (int(8e7) - 1, 1, 0, 0)
