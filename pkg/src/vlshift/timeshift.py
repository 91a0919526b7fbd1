"""The random time-shift law and its Monte-Carlo calibration.

Conditional on non-extinction, the time shift is tau = log(W / mu_W) / lambda
where W is the limit of the martingale exp(-lambda t) u.X(t) of the
linearized chain.  W | survival is approximated by a generalized-gamma
family GG(a, d, p) with density

    g(w) = p w^(d-1) exp(-(w/a)^p) / (a^d Gamma(d/p)),

whose pushforward gives the tau density

    f(tau) = p lam mu_W^d / (a^d Gamma(d/p))
             * exp(-(mu_W e^(lam tau) / a)^p + lam tau d).

Only the ratio mu_W / a enters, so any joint rescaling of (a, mu_W) leaves
tau-space quantities unchanged.  The full law is the mixture of an
extinction point mass q* (the EXTINCT outcome) and this density.

The (a, d, p) triple is calibrated here by simulating the linear branching
chain exactly to T = 8 / lambda (the martingale residual exp(-lam T) is
below 4e-4 by then), reading off W for surviving paths, and fitting the
generalized gamma by maximum likelihood in log-parameter space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from . import _kernels as K
from .branching import SubcriticalError, require_supercritical
from .model import DomainError, ModelParams
from .ode import Trajectory, log10_v


class _Extinct:
    """Sentinel for the extinction outcome of the time-shift mixture."""

    __slots__ = ()

    def __repr__(self):
        return "EXTINCT"


EXTINCT = _Extinct()


@dataclass(frozen=True)
class TimeShiftLaw:
    """Mixture law of the time shift: extinction mass plus a GG pushforward."""

    lam: float
    mu_w: float
    q_star: float
    a: float
    d: float
    p: float

    def __post_init__(self):
        for name in ("lam", "mu_w", "a", "d", "p"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise DomainError(f"{name} must be > 0 and finite, got {v}")
        if not 0.0 <= self.q_star < 1.0:
            raise DomainError(f"q_star must be in [0, 1), got {self.q_star}")

    @property
    def alpha(self) -> float:
        """Gamma shape d/p of the transformed variable ((W/a)^p ~ Gamma(d/p, 1))."""
        return self.d / self.p


# --- generalized-gamma building blocks (W-space) ---------------------------


def gg_logpdf(w, a, d, p):
    w = np.asarray(w, dtype=float)
    out = np.full(w.shape, -np.inf)
    pos = w > 0
    wp = w[pos]
    out[pos] = (
        np.log(p)
        - d * np.log(a)
        - special.gammaln(d / p)
        + (d - 1.0) * np.log(wp)
        - (wp / a) ** p
    )
    return out if out.ndim else float(out)


def gg_cdf(w, a, d, p):
    w = np.asarray(w, dtype=float)
    return special.gammainc(d / p, np.maximum(w, 0.0) ** p / a**p)


def gg_sample(n, a, d, p, rng):
    """Draws via the Gamma transform: W = a G^(1/p), G ~ Gamma(d/p, 1)."""
    g = rng.gamma(d / p, 1.0, size=n)
    return a * g ** (1.0 / p)


# --- tau-space law ----------------------------------------------------------


def tau_logpdf(law: TimeShiftLaw, tau):
    """Log density of tau conditional on non-extinction."""
    tau = np.asarray(tau, dtype=float)
    lt = law.lam * tau
    s = law.p * (np.log(law.mu_w / law.a) + lt)
    with np.errstate(over="ignore"):
        out = (
            np.log(law.p)
            + np.log(law.lam)
            + law.d * np.log(law.mu_w / law.a)
            - special.gammaln(law.alpha)
            - np.exp(s)
            + lt * law.d
        )
    out = np.where(s > 700.0, -np.inf, out)
    return float(out) if out.ndim == 0 else out


def tau_pdf(law: TimeShiftLaw, tau):
    return np.exp(tau_logpdf(law, tau))


def tau_cdf(law: TimeShiftLaw, tau):
    """CDF of tau conditional on non-extinction."""
    tau = np.asarray(tau, dtype=float)
    s = law.p * (np.log(law.mu_w / law.a) + law.lam * tau)
    out = special.gammainc(law.alpha, np.exp(np.minimum(s, 700.0)))
    return float(out) if out.ndim == 0 else out


def tau_quantile(law: TimeShiftLaw, q):
    """Quantile of tau | non-extinction via the Gamma quantile transform."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise DomainError("quantile level must lie strictly inside (0, 1)")
    g = special.gammaincinv(law.alpha, q)
    out = (np.log(law.a) + np.log(g) / law.p - np.log(law.mu_w)) / law.lam
    return float(out) if out.ndim == 0 else out


def sample_tau(law: TimeShiftLaw, rng):
    """One draw from the mixture: EXTINCT with probability q*, else a shift."""
    if rng.random() < law.q_star:
        return EXTINCT
    g = rng.gamma(law.alpha, 1.0)
    w = law.a * g ** (1.0 / law.p)
    return float(np.log(w / law.mu_w) / law.lam)


def sample_taus(law: TimeShiftLaw, n, rng):
    """Vector draws: (taus, extinct_mask); taus are NaN where extinct."""
    extinct = rng.random(n) < law.q_star
    g = rng.gamma(law.alpha, 1.0, size=n)
    w = law.a * g ** (1.0 / law.p)
    taus = np.log(w / law.mu_w) / law.lam
    taus[extinct] = np.nan
    return taus, extinct


def sample_tau_conditional(law: TimeShiftLaw, rng):
    """A shift conditioned on non-extinction (posterior-predictive use)."""
    g = rng.gamma(law.alpha, 1.0)
    w = law.a * g ** (1.0 / law.p)
    return float(np.log(w / law.mu_w) / law.lam)


# --- Monte-Carlo calibration of (a, d, p) -----------------------------------


class InsufficientSurvivorsError(RuntimeError):
    """Too few surviving branching paths to fit the survival distribution."""


@dataclass(frozen=True)
class GGFit:
    """Fitted GG parameters plus diagnostics of the Monte-Carlo fit."""

    a: float
    d: float
    p: float
    ks_distance: float
    n_sims: int
    n_survivors: int
    horizon: float

    @property
    def survivor_fraction(self) -> float:
        return self.n_survivors / self.n_sims


def fit_gg_mle(w: np.ndarray, xatol: float = 1e-8):
    """Maximum-likelihood GG fit in (log a, log d, log p).

    Nelder-Mead from a moment-matched Gamma start (p = 1); tolerance is on
    the log-parameters.
    """
    w = np.asarray(w, dtype=float)
    mean = w.mean()
    var = w.var()
    d0 = max(mean * mean / max(var, 1e-12), 1e-3)
    a0 = max(var / max(mean, 1e-12), 1e-6)
    x0 = np.log([a0, d0, 1.0])
    logw = np.log(w)
    sum_logw = logw.sum()
    n = w.size

    def nll(x):
        a, d, p = np.exp(x)
        val = (
            n * (np.log(p) - d * np.log(a) - special.gammaln(d / p))
            + (d - 1.0) * sum_logw
            - np.sum((w / a) ** p)
        )
        return -val / n

    res = optimize.minimize(
        nll, x0, method="Nelder-Mead",
        options={"xatol": xatol, "fatol": 1e-12, "maxiter": 4000},
    )
    a, d, p = np.exp(res.x)
    return float(a), float(d), float(p)


def _ks_distance_sample_vs_cdf(sample: np.ndarray, cdf_vals: np.ndarray) -> float:
    n = sample.size
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(i / n - cdf_vals, cdf_vals - (i - 1) / n)))


BP_POPULATION_CAP = 1e7


def simulate_w(p: ModelParams, n_sims: int, rng, horizon_mult: float = 8.0):
    """W summaries from exact branching simulations; NaN marks extinction."""
    summary = require_supercritical(p)
    horizon = horizon_mult / summary.lam
    seeds = rng.integers(0, 2**32 - 1, size=n_sims).astype(np.uint32)
    w = K.bp_batch_w(
        seeds, p.beta_star, p.k, p.delta, p.rho, p.c,
        horizon, BP_POPULATION_CAP, summary.lam, *summary.u,
    )
    return w, horizon


def fit_gg_params(p: ModelParams, n_sims: int, rng, horizon_mult: float = 8.0) -> GGFit:
    """Calibrate (a, d, p) by MLE over simulated martingale limits.

    Requires R0 > 1, n_sims >= 10^4 and at least 1000 surviving paths.
    """
    if n_sims < 10_000:
        raise DomainError(f"n_sims must be >= 10000, got {n_sims}")
    w, horizon = simulate_w(p, n_sims, rng, horizon_mult)
    w = w[~np.isnan(w)]
    if w.size < 1000:
        raise InsufficientSurvivorsError(
            f"only {w.size} of {n_sims} paths survived; need >= 1000"
        )
    a, d, pp = fit_gg_mle(w)
    ws = np.sort(w)
    ks = _ks_distance_sample_vs_cdf(ws, gg_cdf(ws, a, d, pp))
    return GGFit(
        a=a, d=d, p=pp, ks_distance=ks,
        n_sims=n_sims, n_survivors=int(w.size), horizon=horizon,
    )


def law_from_fit(p: ModelParams, fit: GGFit) -> TimeShiftLaw:
    s = require_supercritical(p)
    return TimeShiftLaw(lam=s.lam, mu_w=s.mu_w, q_star=s.q_star,
                        a=fit.a, d=fit.d, p=fit.p)


def fit_time_shift_law(p: ModelParams, n_sims: int, rng,
                       horizon_mult: float = 8.0) -> tuple[TimeShiftLaw, GGFit]:
    fit = fit_gg_params(p, n_sims, rng, horizon_mult)
    return law_from_fit(p, fit), fit


# --- shifted trajectories ---------------------------------------------------


@dataclass(frozen=True)
class ShiftedTrajectory:
    """A deterministic trajectory translated in time by tau."""

    traj: Trajectory
    tau: float

    @property
    def t0(self) -> float:
        return self.traj.t0


def shift_eval(straj: ShiftedTrajectory, t):
    """Model log10 VL at clock time t:

        log10 V(t + tau)   if t + tau > t0 and t > t0,
        -inf               otherwise.

    Times beyond the trajectory horizon are a domain error.
    """
    t = np.asarray(t, dtype=float)
    shifted = t + straj.tau
    live = (shifted > straj.t0) & (t > straj.t0)
    if np.any(live & (shifted > straj.traj.t_end + 1e-12)):
        raise DomainError("t + tau beyond trajectory horizon")
    out = np.full(t.shape, -np.inf)
    if np.any(live):
        vals = log10_v(straj.traj, np.where(live, shifted, straj.t0))
        out = np.where(live, vals, -np.inf)
    return float(out) if out.ndim == 0 else out


# --- export for surrogate training -------------------------------------------

GG_TABLE_COLUMNS = ["R0", "delta", "rho", "a", "d", "p", "lambda", "q_star"]


def write_gg_table(path, rows, header_lines=()):
    """CSV of (theta -> a, d, p) pairs: R0, delta, rho, a, d, p, lambda, q_star."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(GG_TABLE_COLUMNS)
        for row in rows:
            w.writerow([f"{x:.12g}" for x in row])


def read_gg_table(path):
    rows = []
    with open(path) as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header != GG_TABLE_COLUMNS:
            raise DomainError(f"unexpected gg table header: {header}")
        for row in reader:
            rows.append([float(x) for x in row])
    return np.array(rows)
