"""Per-individual likelihoods.

Three routes, all sharing one dense trajectory solve:

* path likelihood -- censored-normal product for a fixed shifted
  trajectory: Normal-PDF terms for detected points, Normal-CDF terms at
  the detection limit for censored ones;
* exact marginal -- the path likelihood integrated against the time-shift
  density by adaptive Gauss-Kronrod quadrature, scaled by the survival
  mass (1 - q*);
* Laplace marginal -- the closed form
  sqrt(2*pi) * (1 - q*) * path_lik(tau0) * f(tau0) * H(tau0)
  around the mode tau0 of h = log(path_lik * f), with
  H = sqrt(-1 / h''(tau0)).

The Laplace route requires at least one detected observation and a
concave optimum; otherwise it falls back to the exact quadrature (an
all-censored h can be plateau-like, where the Gaussian assumption has no
business being applied).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _kernels as K
from .model import DomainError, ModelParams
from .ode import IntegrationError, Trajectory, solve
from .timeshift import ShiftedTrajectory, TimeShiftLaw, tau_logpdf, tau_quantile

EXACT_QUANTILE_MASS = 1e-8    # quadrature covers [q(eps), q(1-eps)] of the law
LAPLACE_QUANTILE_MASS = 1e-6  # mode search interval
MODE_GRID_POINTS = 96


class CurvatureError(RuntimeError):
    """h''(tau0) >= 0: the Laplace closed form does not apply."""


@dataclass(frozen=True)
class IndividualSeries:
    """One subject's (time, log10 VL, censored) observations.

    Censored entries record the detection limit eta exactly and mean
    "at most eta".  Times are measured on the data's clock (day 0 at the
    peak observed VL for the cohort format used here) and must be
    strictly increasing.  Empty series are allowed.
    """

    id: str
    times: np.ndarray
    values: np.ndarray
    censored: np.ndarray
    eta: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.censored, dtype=bool)
        if not (t.shape == v.shape == c.shape):
            raise DomainError(f"series {self.id}: mismatched array lengths")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise DomainError(f"series {self.id}: times must be strictly increasing")
        if np.any(c & (v != self.eta)):
            raise DomainError(
                f"series {self.id}: censored values must equal eta ({self.eta})"
            )
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "censored", c)

    @property
    def n_obs(self) -> int:
        return self.times.size

    @property
    def n_detected(self) -> int:
        return int(np.sum(~self.censored))

    def cens_uint8(self) -> np.ndarray:
        return self.censored.astype(np.uint8)


@dataclass
class LikelihoodContext:
    """Shared pieces of a likelihood evaluation: law, noise scale, and a
    trajectory cache keyed by the parameters (read-only after warm-up when
    shared across threads)."""

    law: TimeShiftLaw
    kappa: float
    _cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kappa <= 0:
            raise DomainError(f"kappa must be > 0, got {self.kappa}")

    def trajectory(self, p: ModelParams, horizon: float) -> Trajectory:
        key = (p.R0, p.k, p.delta, p.rho, p.c, p.t0)
        hit = self._cache.get(key)
        if hit is None or hit.horizon < horizon:
            hit = solve(p, t_end=p.t0 + horizon)
            self._cache[key] = hit
        return hit


def _required_horizon(series: IndividualSeries, p: ModelParams, tau_hi: float) -> float:
    if series.n_obs == 0:
        return 1.0
    return max(1.0, float(series.times.max()) + max(tau_hi, 0.0) - p.t0 + 0.5)


def path_loglik(series: IndividualSeries, straj: ShiftedTrajectory, kappa: float) -> float:
    """Censored-normal log path likelihood given a fixed shift.

    A detected observation on the -inf branch sends the whole product to
    -inf; censored observations there contribute probability one.  Empty
    series return 0 (the empty product).
    """
    if kappa <= 0:
        raise DomainError(f"kappa must be > 0, got {kappa}")
    if series.n_obs == 0:
        return 0.0
    ts, ys, Q = straj.traj.dense_arrays()
    out = K.path_loglik_core(
        ts, ys, Q, ts.size - 1, straj.t0, straj.tau,
        series.times, series.values, series.cens_uint8(), series.eta, kappa,
    )
    if np.isnan(out):
        raise DomainError("observation beyond trajectory horizon")
    return float(out)


def deterministic_loglik(series: IndividualSeries, p: ModelParams, kappa: float) -> float:
    """Baseline log likelihood with the shift collapsed to a point mass at 0
    and no extinction factor."""
    if series.n_obs == 0:
        return 0.0
    traj = solve(p, t_end=p.t0 + _required_horizon(series, p, 0.0))
    return path_loglik(series, ShiftedTrajectory(traj=traj, tau=0.0), kappa)


def _h_callable(series, traj, law, kappa):
    ts, ys, Q = traj.dense_arrays()
    n_seg = ts.size - 1
    times = series.times
    values = series.values
    cens = series.cens_uint8()
    eta = series.eta
    t0 = traj.t0

    def h(tau: float) -> float:
        pl = K.path_loglik_core(ts, ys, Q, n_seg, t0, tau, times, values, cens, eta, kappa)
        if np.isnan(pl):
            raise DomainError("tau pushed an observation beyond the trajectory horizon")
        if pl == -np.inf:
            return -np.inf
        return pl + K.tau_logpdf_core(tau, law.lam, law.mu_w, law.a, law.d, law.p)

    return h


def marginal_lik_exact(
    series: IndividualSeries,
    p: ModelParams,
    law: TimeShiftLaw,
    kappa: float,
    rel_tol: float = 1e-10,
) -> float:
    """(1 - q*) * integral of path_lik(tau) f(tau) dtau by adaptive
    Gauss-Kronrod over the central 1 - 2e-8 mass of the law.

    The integrand is rescaled by its mode value so the quadrature works
    near unity; an empty series returns exactly 1 - q*.  The trajectory
    is solved at tighter-than-default tolerance so the integrand itself
    is smooth at the requested quadrature accuracy.
    """
    if kappa <= 0:
        raise DomainError(f"kappa must be > 0, got {kappa}")
    if series.n_obs == 0:
        return 1.0 - law.q_star
    tau_lo = tau_quantile(law, EXACT_QUANTILE_MASS)
    tau_hi = tau_quantile(law, 1.0 - EXACT_QUANTILE_MASS)
    horizon = _required_horizon(series, p, tau_hi)
    traj = solve(p, t_end=p.t0 + horizon, rtol=1e-11, atol=1e-13)
    h = _h_callable(series, traj, law, kappa)

    # coarse mode location for rescaling and as a quadrature breakpoint
    grid = np.linspace(tau_lo, tau_hi, 257)
    hv = np.array([h(t) for t in grid])
    if not np.any(np.isfinite(hv)):
        return 0.0
    i0 = int(np.nanargmax(hv))
    h_ref = hv[i0]
    tau_ref = grid[i0]

    def integrand(tau):
        v = h(tau)
        return 0.0 if v == -np.inf else np.exp(v - h_ref)

    val, _ = integrate.quad(
        integrand, tau_lo, tau_hi,
        points=[tau_ref], limit=400, epsabs=1e-290, epsrel=rel_tol,
    )
    return float((1.0 - law.q_star) * np.exp(h_ref) * val)


def marginal_lik_laplace(
    series: IndividualSeries,
    p: ModelParams,
    law: TimeShiftLaw,
    kappa: float,
    ctx: LikelihoodContext | None = None,
    fallback_to_exact: bool = True,
) -> float:
    """Closed-form Laplace value of the marginal likelihood.

    All-censored series go straight to the exact quadrature (their h can
    be plateau-like).  A non-concave optimum raises CurvatureError unless
    fallback_to_exact is set, in which case the exact value is returned.
    """
    if kappa <= 0:
        raise DomainError(f"kappa must be > 0, got {kappa}")
    if series.n_obs == 0:
        return 1.0 - law.q_star
    if series.n_detected == 0:
        return marginal_lik_exact(series, p, law, kappa)
    tau_lo = tau_quantile(law, LAPLACE_QUANTILE_MASS)
    tau_hi = tau_quantile(law, 1.0 - LAPLACE_QUANTILE_MASS)
    horizon = _required_horizon(series, p, tau_hi)
    traj = ctx.trajectory(p, horizon) if ctx else solve(p, t_end=p.t0 + horizon)
    ts, ys, Q = traj.dense_arrays()
    loglik, tau0, width, status = K.laplace_marginal_core(
        ts, ys, Q, ts.size - 1, traj.t0,
        series.times, series.values, series.cens_uint8(), series.eta, kappa,
        law.lam, law.mu_w, np.log1p(-law.q_star), law.a, law.d, law.p,
        tau_lo, tau_hi, MODE_GRID_POINTS, False,
    )
    if status == K.OK:
        return float(np.exp(loglik))
    if status == K.ZERO_LIK:
        return 0.0
    if status == K.CURVATURE_ERROR:
        if fallback_to_exact:
            return marginal_lik_exact(series, p, law, kappa)
        raise CurvatureError(
            f"series {series.id}: non-concave optimum at tau0 = {tau0}"
        )
    raise IntegrationError("trajectory too short for requested shifts", float(tau0))


def laplace_mode(
    series: IndividualSeries,
    p: ModelParams,
    law: TimeShiftLaw,
    kappa: float,
) -> tuple[float, float]:
    """(tau0, H(tau0)) of the Laplace approximation, for diagnostics."""
    tau_lo = tau_quantile(law, LAPLACE_QUANTILE_MASS)
    tau_hi = tau_quantile(law, 1.0 - LAPLACE_QUANTILE_MASS)
    horizon = _required_horizon(series, p, tau_hi)
    traj = solve(p, t_end=p.t0 + horizon)
    ts, ys, Q = traj.dense_arrays()
    _, tau0, width, status = K.laplace_marginal_core(
        ts, ys, Q, ts.size - 1, traj.t0,
        series.times, series.values, series.cens_uint8(), series.eta, kappa,
        law.lam, law.mu_w, np.log1p(-law.q_star), law.a, law.d, law.p,
        tau_lo, tau_hi, MODE_GRID_POINTS, False,
    )
    if status != K.OK:
        raise CurvatureError(f"no usable Laplace mode (status {status})")
    return float(tau0), float(width)


def profile_rows(
    series: IndividualSeries,
    base: ModelParams,
    kappa: float,
    law_fn,
    grids: dict,
    kappa_grid=None,
):
    """Laplace-vs-exact comparison rows over 1-D profile grids.

    law_fn maps ModelParams -> TimeShiftLaw (surrogate- or MC-backed).
    grids maps parameter name in {R0, delta, rho, t0} to value arrays.
    Returns rows (parameter, value, exact, laplace, abs_err).
    """
    rows = []

    def eval_point(name, value, p, kap):
        law = law_fn(p)
        exact = marginal_lik_exact(series, p, law, kap)
        laplace = marginal_lik_laplace(series, p, law, kap, fallback_to_exact=False)
        rows.append((name, value, exact, laplace, abs(exact - laplace)))

    for name, values in grids.items():
        for v in values:
            kwargs = {name: float(v)}
            from dataclasses import replace
            eval_point(name, float(v), replace(base, **kwargs), kappa)
    if kappa_grid is not None:
        for v in kappa_grid:
            eval_point("kappa", float(v), base, float(v))
    return rows


def write_profile_csv(rows, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["parameter", "value", "exact", "laplace", "abs_err"])
        for r in rows:
            w.writerow([r[0]] + [f"{x:.14g}" for x in r[1:]])
