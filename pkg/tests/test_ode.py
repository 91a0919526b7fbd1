import numpy as np
import pytest
from numba import njit

from vlshift.model import FIG1_PARAMS, DomainError, ModelParams
from vlshift import ode
from vlshift.branching import growth_rate


@njit(cache=True)
def _rk4_oracle(beta, k, delta, rho, c, y0, t_end, dt):
    """Independent fixed-step classical RK4 integrator (test oracle)."""
    n_steps = int(np.ceil(t_end / dt))
    y = y0.copy()
    t = 0.0
    t_peak = 0.0
    v_peak = 0.0

    def rhs(y):
        out = np.empty(4)
        flux = beta * y[0] * y[3]
        out[0] = -flux
        out[1] = flux - k * y[1]
        out[2] = k * y[1] - delta * y[2]
        out[3] = rho * y[2] - c * y[3]
        return out

    for _ in range(n_steps):
        h = min(dt, t_end - t)
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        if y[3] > v_peak:
            v_peak = y[3]
            t_peak = t
    return t_peak, v_peak, y


@pytest.fixture(scope="module")
def fig1_traj():
    return ode.solve(FIG1_PARAMS)


@pytest.fixture(scope="module")
def rk4_fig1():
    p = FIG1_PARAMS
    y0 = np.array([p.S0 - 1.0, 1.0, 0.0, 0.0])
    return _rk4_oracle(p.beta, p.k, p.delta, p.rho, p.c, y0, 12.0, 1e-4)


def test_peak_against_rk4_oracle(fig1_traj, rk4_fig1):
    t_peak_o, v_peak_o, _ = rk4_fig1
    stats = ode.peak_stats(fig1_traj)
    assert stats.t_peak == pytest.approx(t_peak_o, abs=0.01)
    assert stats.log10_v_peak == pytest.approx(np.log10(v_peak_o), abs=0.01)
    # peak value to 4 significant figures against the oracle
    assert stats.log10_v_peak == pytest.approx(np.log10(v_peak_o), rel=1e-4)


def test_solution_values_against_rk4_oracle():
    p = FIG1_PARAMS
    y0 = np.array([p.S0 - 1.0, 1.0, 0.0, 0.0])
    traj = ode.solve(p, t_end=8.0)
    _, _, y_final = _rk4_oracle(p.beta, p.k, p.delta, p.rho, p.c, y0, 8.0, 1e-4)
    mine = traj.states(8.0)
    assert np.allclose(mine, y_final, rtol=1e-4)


def test_beta_zero_decoupled_system():
    # no infection: S frozen at S0-1, E decays, V rises then decays
    p = ModelParams(R0=0.0, k=4.0, delta=1.7, rho=3.0, c=10.0)
    traj = ode.solve(p, t_end=10.0)
    ts = np.linspace(0.0, 10.0, 101)
    states = traj.states(ts)
    assert np.allclose(states[:, 0], p.S0 - 1.0, rtol=1e-9)
    # E(t) = exp(-k t) exactly
    assert np.allclose(states[:, 1], np.exp(-4.0 * ts), rtol=1e-6, atol=1e-9)
    v = states[:, 3]
    i_max = int(np.argmax(v))
    assert 0 < i_max < 100
    assert np.all(np.diff(v[: i_max + 1]) >= -1e-12)
    assert v[-1] < v[i_max]


def test_cell_conservation(fig1_traj):
    # S + E + I + delta * integral(I) = S0 at all output points (1e-6 relative)
    p = FIG1_PARAMS
    grid = np.linspace(0.0, 30.0, 30001)
    states = fig1_traj.states(grid)
    int_i = np.concatenate(
        [[0.0], np.cumsum((states[1:, 2] + states[:-1, 2]) / 2
                          * np.diff(grid))]
    )
    total = states[:, 0] + states[:, 1] + states[:, 2] + p.delta * int_i
    assert np.max(np.abs(total - p.S0) / p.S0) < 1e-6


def test_tolerance_refinement_convergence():
    # restricted to values above 1e-3 counts: below that the solution sits at
    # the absolute-tolerance floor where relative comparison is vacuous
    p = FIG1_PARAMS
    t_check = np.linspace(0.5, 29.5, 60)
    a = ode.solve(p, t_end=30.0).states(t_check)
    b = ode.solve(p, t_end=30.0, rtol=1e-9, atol=1e-11).states(t_check)
    mask = np.abs(b) > 1e-3
    rel = np.abs(a - b)[mask] / np.abs(b)[mask]
    assert mask.sum() > 100
    assert np.max(rel) < 1e-5


def test_nonnegativity_at_interpolation_points(fig1_traj):
    grid = np.linspace(0.0, 50.0, 5000)
    states = fig1_traj.states(grid)
    assert np.min(states) > -1e-6 * FIG1_PARAMS.S0


def test_log10_v_minus_inf_at_t0(fig1_traj):
    assert ode.log10_v(fig1_traj, 0.0) == -np.inf


def test_log10_v_peak_consistency(fig1_traj):
    stats = ode.peak_stats(fig1_traj)
    assert ode.log10_v(fig1_traj, stats.t_peak) == pytest.approx(
        stats.log10_v_peak, abs=1e-9
    )


def test_monotone_rise_to_peak(fig1_traj):
    stats = ode.peak_stats(fig1_traj)
    grid = np.linspace(0.05, stats.t_peak, 800)
    lv = ode.log10_v(fig1_traj, grid)
    assert np.all(np.diff(lv) > -1e-9)


def test_no_peak_error_subcritical():
    p = ModelParams(R0=0.5, k=4.0, delta=1.7, rho=3.0, c=10.0)
    traj = ode.solve(p, t_end=20.0)
    with pytest.raises(ode.NoPeakError):
        ode.peak_stats(traj)


def test_doubling_rho_raises_peak():
    base = ode.peak_stats(ode.solve(FIG1_PARAMS))
    p2 = ModelParams(R0=8.0, k=4.0, delta=1.7, rho=6.0, c=10.0)
    high = ode.peak_stats(ode.solve(p2))
    assert high.log10_v_peak > base.log10_v_peak


def test_early_growth_slope_matches_branching_rate(fig1_traj):
    # slope of ln V on the window V in [1e2, 1e4] matches lambda within 1%
    lam = growth_rate(FIG1_PARAMS)
    grid = np.linspace(0.1, 5.0, 2000)
    v = fig1_traj.v(grid)
    sel = (v >= 1e2) & (v <= 1e4)
    slope = np.polyfit(grid[sel], np.log(v[sel]), 1)[0]
    assert slope == pytest.approx(lam, rel=0.01)


def test_domain_errors(fig1_traj):
    with pytest.raises(DomainError):
        fig1_traj.states(-0.5)
    with pytest.raises(DomainError):
        fig1_traj.states(50.5)
    with pytest.raises(DomainError):
        ode.solve(FIG1_PARAMS, t_end=-1.0)


def test_t0_translation():
    p = FIG1_PARAMS.with_t0(-5.0)
    traj = ode.solve(p, t_end=10.0)
    base = ode.solve(FIG1_PARAMS, t_end=15.0)
    ts = np.linspace(-4.0, 9.0, 40)
    assert np.allclose(traj.states(ts), base.states(ts + 5.0), rtol=1e-7)


def test_trajectory_csv_dump(tmp_path, fig1_traj):
    path = tmp_path / "traj.csv"
    ode.write_trajectory_csv(fig1_traj, path, np.arange(0.0, 10.0),
                             header_lines=["test dump"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# test dump"
    assert lines[1] == "t,S,E,I,V,log10V"
    assert len(lines) == 12
    assert lines[2].endswith("-inf")  # V(0) = 0


def test_dense_output_matches_scipy():
    from scipy.integrate import solve_ivp

    p = FIG1_PARAMS
    traj = ode.solve(p)

    def rhs(t, y):
        flux = p.beta * y[0] * y[3]
        return [-flux, flux - p.k * y[1], p.k * y[1] - p.delta * y[2],
                p.rho * y[2] - p.c * y[3]]

    sol = solve_ivp(rhs, (0.0, 50.0), [p.S0 - 1.0, 1.0, 0.0, 0.0],
                    method="RK45", rtol=1e-8, atol=1e-10, dense_output=True)
    ts = np.linspace(0.01, 49.9, 300)
    mine = traj.states(ts)
    ref = sol.sol(ts).T
    assert np.max(np.abs(mine - ref) / (np.abs(ref) + 1.0)) < 1e-8
