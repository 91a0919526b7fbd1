"""Hierarchical Metropolis-within-Gibbs sampler.

The model: individual parameters (R0_i, delta_i, rho_i) follow Normal
population distributions with shared means and standard deviations
(phi), written in non-centred form theta_i = mu + sigma * z_i with
standard-normal z; infection times t0_i carry Gumbel(-7, 3) priors; a
shared observation-noise scale kappa completes the state.  One sweep
updates each individual's block (z_R0, z_delta, z_rho, t0) with its own
4-D Gaussian random walk, then the shared 7-vector (phi, kappa) with a
7-D Gaussian random walk; acceptance uses the blocked conditionals, so
an individual update touches only that subject's likelihood while the
shared update re-evaluates everyone (in parallel).

Positivity is handled by rejection: proposals implying sigma <= 0,
kappa <= 0, a nonpositive natural parameter, R0 at or below criticality,
or a point outside the surrogate's hypercube get log-density -inf.

Proposal covariances are tuned from a pilot run only (sample covariance
scaled by 2.38^2/dim plus a 1e-9 diagonal jitter); the main run uses
frozen proposals, preserving the Markov property.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from . import _kernels as K
from . import diagnostics
from .likelihood import IndividualSeries
from .model import DomainError, ModelParams, DEFAULT_K, DEFAULT_C, DEFAULT_S0
from .ode import DEFAULT_ATOL, DEFAULT_RTOL
from .surrogate import SurrogateModel

SHARED_NAMES = ("mu_R0", "mu_delta", "mu_rho",
                "sigma_R0", "sigma_delta", "sigma_rho", "kappa")
IND_NAMES = ("z_R0", "z_delta", "z_rho", "t0")
EPS_CRIT = 1e-6  # individuals need R0 > 1 + this for a defined law


class InitializationError(RuntimeError):
    """Could not find a positive-density starting state."""


# --- priors -------------------------------------------------------------------


def gamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    out = np.where(
        x > 0,
        (shape - 1.0) * np.log(np.maximum(x, 1e-300)) - x / scale
        - shape * np.log(scale) - special.gammaln(shape),
        -np.inf,
    )
    return float(out) if out.ndim == 0 else out


def halfnormal_logpdf(x, scale):
    x = np.asarray(x, dtype=float)
    out = np.where(
        x >= 0,
        0.5 * np.log(2.0 / np.pi) - np.log(scale) - 0.5 * (x / scale) ** 2,
        -np.inf,
    )
    return float(out) if out.ndim == 0 else out


def gumbel_logpdf(x, loc, scale):
    u = (np.asarray(x, dtype=float) - loc) / scale
    out = -u - np.exp(-u) - np.log(scale)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PriorSpec:
    """Hyper-priors (shape-scale Gamma convention) and the t0 prior.

    Defaults reproduce the documented means and central intervals:
    Gamma(10/3, 3) for mu_R0 (mean 10, 95% ~ (2.3, 23.3)), Gamma(26, 0.05)
    for mu_delta (mean 1.3, 95% ~ (0.85, 1.85)), Gamma(10, 0.3) for mu_rho,
    half-normal (3, 1, 3) scales for the sigmas, half-normal(1) for kappa,
    Gumbel(-7, 3) for t0 (median about -5.9 days).  All overridable.
    """

    mu_r0: tuple = (10.0 / 3.0, 3.0)
    mu_delta: tuple = (26.0, 0.05)
    mu_rho: tuple = (10.0, 0.3)
    sigma_r0_scale: float = 3.0
    sigma_delta_scale: float = 1.0
    sigma_rho_scale: float = 3.0
    kappa_scale: float = 1.0
    t0_loc: float = -7.0
    t0_scale: float = 3.0


@dataclass(frozen=True)
class Hyperparams:
    mu_R0: float
    mu_delta: float
    mu_rho: float
    sigma_R0: float
    sigma_delta: float
    sigma_rho: float
    kappa: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mu_R0, self.mu_delta, self.mu_rho,
                         self.sigma_R0, self.sigma_delta, self.sigma_rho,
                         self.kappa])

    @staticmethod
    def from_array(x) -> "Hyperparams":
        return Hyperparams(*[float(v) for v in x])


@dataclass(frozen=True)
class IndividualBlock:
    z_R0: float
    z_delta: float
    z_rho: float
    t0: float

    def as_array(self) -> np.ndarray:
        return np.array([self.z_R0, self.z_delta, self.z_rho, self.t0])


def log_prior_hyper(h, prior: PriorSpec = PriorSpec()) -> float:
    """Log prior density of the shared block; -inf outside support."""
    arr = h.as_array() if isinstance(h, Hyperparams) else np.asarray(h, dtype=float)
    mu_r0, mu_d, mu_p, s_r0, s_d, s_p, kap = arr
    total = (
        gamma_logpdf(mu_r0, *prior.mu_r0)
        + gamma_logpdf(mu_d, *prior.mu_delta)
        + gamma_logpdf(mu_p, *prior.mu_rho)
        + halfnormal_logpdf(s_r0, prior.sigma_r0_scale)
        + halfnormal_logpdf(s_d, prior.sigma_delta_scale)
        + halfnormal_logpdf(s_p, prior.sigma_rho_scale)
        + halfnormal_logpdf(kap, prior.kappa_scale)
    )
    # sigma = 0 exactly would degenerate the NCP map; treat as out of support
    if s_r0 <= 0 or s_d <= 0 or s_p <= 0 or kap <= 0:
        return -np.inf
    return float(total)


_LOG_2PI = float(np.log(2.0 * np.pi))


def log_prior_individual(b, prior: PriorSpec = PriorSpec()) -> float:
    """Standard-normal z's plus the Gumbel t0 prior."""
    arr = b.as_array() if isinstance(b, IndividualBlock) else np.asarray(b, dtype=float)
    z = arr[:3]
    return float(
        -0.5 * np.dot(z, z) - 1.5 * _LOG_2PI
        + gumbel_logpdf(arr[3], prior.t0_loc, prior.t0_scale)
    )


def _log_prior_individual_batch(z: np.ndarray, t0: np.ndarray, prior: PriorSpec):
    return (
        -0.5 * np.sum(z * z, axis=1) - 1.5 * _LOG_2PI
        + gumbel_logpdf(t0, prior.t0_loc, prior.t0_scale)
    )


# --- data packing and likelihood backend --------------------------------------


@dataclass
class PackedData:
    """CSR-style packing of a cohort for the compiled batch kernels."""

    ids: list
    times_flat: np.ndarray
    values_flat: np.ndarray
    cens_flat: np.ndarray
    offsets: np.ndarray
    eta: float
    max_time: np.ndarray  # per-individual last observation time (or -inf)

    @property
    def n(self) -> int:
        return len(self.ids)

    @staticmethod
    def from_series(series: list[IndividualSeries]) -> "PackedData":
        if not series:
            raise DomainError("empty cohort")
        etas = {s.eta for s in series}
        if len(etas) != 1:
            raise DomainError(f"mixed detection limits in cohort: {etas}")
        times = np.concatenate([s.times for s in series]) if series else np.empty(0)
        values = np.concatenate([s.values for s in series])
        cens = np.concatenate([s.cens_uint8() for s in series])
        offsets = np.zeros(len(series) + 1, dtype=np.int64)
        np.cumsum([s.n_obs for s in series], out=offsets[1:])
        max_time = np.array(
            [s.times.max() if s.n_obs else -np.inf for s in series]
        )
        return PackedData(
            ids=[s.id for s in series],
            times_flat=times, values_flat=values, cens_flat=cens,
            offsets=offsets, eta=float(etas.pop()), max_time=max_time,
        )


@dataclass
class EvalContext:
    """Everything a chain needs to turn parameters into log likelihoods."""

    data: PackedData
    model: SurrogateModel | None
    prior: PriorSpec = field(default_factory=PriorSpec)
    k: float = DEFAULT_K
    c: float = DEFAULT_C
    s0: float = DEFAULT_S0
    mode: str = "laplace"  # 'laplace' | 'deterministic' | 'constant' (test hook)
    eps_crit: float = EPS_CRIT
    rtol: float = DEFAULT_RTOL
    # looser absolute tolerance than the library solver default: inside the
    # sampler V only matters near/above the detection limit, where the log10
    # error at 1e-6 is ~3e-6 -- far below the observation noise scale
    atol: float = 1e-6
    n_grid: int = 96

    def __post_init__(self):
        if self.mode not in ("laplace", "deterministic", "constant"):
            raise DomainError(f"unknown likelihood mode {self.mode!r}")
        if self.mode == "laplace" and self.model is None:
            raise DomainError("laplace mode needs a surrogate model")

    def logliks(self, nat: np.ndarray, t0: np.ndarray, kappa: float) -> np.ndarray:
        """Per-individual log marginal likelihoods at natural parameters.

        nat is (N, 3) of (R0, delta, rho).  Invalid rows come back -inf.
        """
        n = nat.shape[0]
        if self.mode == "constant":
            return np.zeros(n)
        r0, delta, rho = nat[:, 0].copy(), nat[:, 1].copy(), nat[:, 2].copy()
        t0 = np.asarray(t0, dtype=float).copy()

        if self.mode == "deterministic":
            valid = (r0 > 0) & (delta > 0) & (rho > 0)
            t_end = np.maximum(self.data.max_time - t0 + 0.5, 1.0)
            return K.batch_deterministic_loglik(
                r0, delta, rho, t0, kappa, valid.astype(np.uint8),
                self.k, self.c, self.s0,
                self.data.times_flat, self.data.values_flat,
                self.data.cens_flat, self.data.offsets, self.data.eta,
                t_end, self.rtol, self.atol,
            )

        m = self.model
        lo = np.asarray(m.bounds.lo)
        hi = np.asarray(m.bounds.hi)
        valid = (
            (r0 > 1.0 + self.eps_crit) & (delta > 0) & (rho > 0)
            & (r0 >= lo[0]) & (r0 <= hi[0])
            & (delta >= lo[1]) & (delta <= hi[1])
            & (rho >= lo[2]) & (rho <= hi[2])
        )
        lam = np.zeros(n)
        mu_w = np.ones(n)
        log_qbar = np.zeros(n)
        a = np.ones(n)
        d = np.ones(n)
        p = np.ones(n)
        for i in range(n):
            if not valid[i]:
                continue
            beta_star = r0[i] * delta[i] * self.c / rho[i]
            lam_i = K.growth_rate_core(self.k, delta[i], self.c, rho[i], beta_star)
            if lam_i <= 0:
                valid[i] = False
                continue
            u_e, u_i, u_v = K.left_eigvec_core(self.k, delta[i], rho[i], lam_i)
            q3 = min(1.0, self.c * (delta[i] + rho[i]) / (rho[i] * (self.c + beta_star)))
            q1 = min(1.0, delta[i] / (delta[i] + rho[i] - rho[i] * q3))
            if q1 >= 1.0:
                valid[i] = False
                continue
            adp = K.nn_forward(r0[i], delta[i], rho[i],
                               m.w1, m.b1, m.w2, m.b2, m.in_mean, m.in_std)
            lam[i] = lam_i
            mu_w[i] = u_e
            log_qbar[i] = np.log1p(-q1)
            a[i], d[i], p[i] = adp[0], adp[1], adp[2]

        alpha = d / p
        g_lo = special.gammaincinv(alpha, 1e-6)
        g_hi = special.gammaincinv(alpha, 1.0 - 1e-6)
        with np.errstate(divide="ignore", invalid="ignore"):
            tau_lo = (np.log(a) + np.log(g_lo) / p - np.log(mu_w)) / lam
            tau_hi = (np.log(a) + np.log(g_hi) / p - np.log(mu_w)) / lam
        tau_lo = np.where(valid, tau_lo, 0.0)
        tau_hi = np.where(valid, tau_hi, 1.0)
        t_end = np.maximum(self.data.max_time + tau_hi - t0 + 0.5, 1.0)

        out, _status = K.batch_laplace_loglik(
            r0, delta, rho, t0, kappa, lam, mu_w, log_qbar, a, d, p,
            tau_lo, tau_hi, valid.astype(np.uint8),
            self.k, self.c, self.s0,
            self.data.times_flat, self.data.values_flat, self.data.cens_flat,
            self.data.offsets, self.data.eta,
            t_end, self.rtol, self.atol, self.n_grid,
        )
        return out


# --- sampler state -------------------------------------------------------------


@dataclass
class HierarchicalState:
    """One draw of the chain plus its cached per-individual log likelihoods."""

    z: np.ndarray        # (N, 3) non-centred coordinates
    t0: np.ndarray       # (N,)
    hyper: np.ndarray    # (7,) shared block
    loglik: np.ndarray   # (N,) cached log marginal likelihoods
    iteration: int = 0

    def natural(self) -> np.ndarray:
        """Implied (R0_i, delta_i, rho_i) from the non-centred coordinates."""
        mu = self.hyper[:3]
        sigma = self.hyper[3:6]
        return mu + sigma * self.z

    @property
    def kappa(self) -> float:
        return float(self.hyper[6])

    def hyperparams(self) -> Hyperparams:
        return Hyperparams.from_array(self.hyper)

    def copy(self) -> "HierarchicalState":
        return HierarchicalState(
            z=self.z.copy(), t0=self.t0.copy(), hyper=self.hyper.copy(),
            loglik=self.loglik.copy(), iteration=self.iteration,
        )


def audit_state(state: HierarchicalState, ctx: EvalContext) -> float:
    """Max |cached - recomputed| log likelihood (debug audit mode)."""
    fresh = ctx.logliks(state.natural(), state.t0, state.kappa)
    both_inf = np.isneginf(fresh) & np.isneginf(state.loglik)
    diff = np.abs(fresh - state.loglik)
    diff[both_inf] = 0.0
    return float(np.max(diff)) if diff.size else 0.0


def individual_conditional_logpost(i: int, state: HierarchicalState,
                                   ctx: EvalContext) -> float:
    """Log conditional density of individual i's block (up to a constant)."""
    nat = state.natural()[i:i + 1]
    ll = ctx.logliks(nat, state.t0[i:i + 1], state.kappa)[0]
    block = np.array([state.z[i, 0], state.z[i, 1], state.z[i, 2], state.t0[i]])
    return float(ll + log_prior_individual(block, ctx.prior))


# --- proposals -----------------------------------------------------------------


@dataclass
class ProposalSpec:
    """Cholesky factors of the per-block random-walk covariances."""

    ind_chol: np.ndarray     # (N, 4, 4)
    shared_chol: np.ndarray  # (7, 7)

    @staticmethod
    def diagonal(n: int, ind_scales=None, shared_scales=None) -> "ProposalSpec":
        ind_scales = np.asarray(
            [0.12, 0.12, 0.12, 0.35] if ind_scales is None else ind_scales
        )
        shared_scales = np.asarray(
            [0.25, 0.03, 0.12, 0.08, 0.015, 0.05, 0.015]
            if shared_scales is None else shared_scales
        )
        ind = np.zeros((n, 4, 4))
        ind[:] = np.diag(ind_scales)
        return ProposalSpec(ind_chol=ind, shared_chol=np.diag(shared_scales))


def _safe_chol(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(np.diag(np.maximum(np.diag(cov), 1e-9)))


def tune_proposals(ind_draws: np.ndarray, shared_draws: np.ndarray) -> ProposalSpec:
    """Optimal-scaling covariances from pilot draws.

    ind_draws is (n_pilot, N, 4); shared_draws is (n_pilot, 7).  Each
    block covariance is scaled by 2.38^2/dim with a 1e-9 diagonal jitter;
    rank-deficient pilots fall back to a jittered diagonal.
    """
    n_pilot, n_ind, _ = ind_draws.shape
    if n_pilot < 10:
        raise DomainError("pilot too short to tune proposals")
    ind_chol = np.zeros((n_ind, 4, 4))
    s4 = 2.38**2 / 4.0
    for i in range(n_ind):
        cov = np.cov(ind_draws[:, i, :].T) * s4 + 1e-9 * np.eye(4)
        ind_chol[i] = _safe_chol(cov)
    s7 = 2.38**2 / 7.0
    cov = np.cov(shared_draws.T) * s7 + 1e-9 * np.eye(7)
    return ProposalSpec(ind_chol=ind_chol, shared_chol=_safe_chol(cov))


# --- the Metropolis-within-Gibbs sweep ------------------------------------------


def mwg_step(state: HierarchicalState, proposals: ProposalSpec,
             ctx: EvalContext, rng) -> tuple[HierarchicalState, np.ndarray, bool]:
    """One sweep: every individual block, then the shared block.

    Individual conditionals are mutually independent given the shared
    parameters, so all N proposals are evaluated in one parallel batch
    and accepted element-wise; the shared step re-evaluates every
    individual's likelihood (also in parallel).  Rejected blocks keep
    their previous values and cached likelihoods exactly.
    """
    n = state.z.shape[0]
    prior = ctx.prior

    # --- individual blocks
    eps = rng.standard_normal((n, 4))
    step = np.einsum("nij,nj->ni", proposals.ind_chol, eps)
    z_prop = state.z + step[:, :3]
    t0_prop = state.t0 + step[:, 3]

    mu = state.hyper[:3]
    sigma = state.hyper[3:6]
    nat_prop = mu + sigma * z_prop
    ll_prop = ctx.logliks(nat_prop, t0_prop, state.kappa)
    lp_prop = _log_prior_individual_batch(z_prop, t0_prop, prior)
    lp_cur = _log_prior_individual_batch(state.z, state.t0, prior)

    log_alpha = (ll_prop + lp_prop) - (state.loglik + lp_cur)
    accept_ind = np.log(rng.random(n)) < log_alpha
    state.z[accept_ind] = z_prop[accept_ind]
    state.t0[accept_ind] = t0_prop[accept_ind]
    state.loglik[accept_ind] = ll_prop[accept_ind]

    # --- shared block
    hyper_prop = state.hyper + proposals.shared_chol @ rng.standard_normal(7)
    u_shared = rng.random()
    lp_hyper_prop = log_prior_hyper(hyper_prop, prior)
    accept_shared = False
    if np.isfinite(lp_hyper_prop):
        nat_prop = hyper_prop[:3] + hyper_prop[3:6] * state.z
        ll_prop = ctx.logliks(nat_prop, state.t0, float(hyper_prop[6]))
        lp_hyper_cur = log_prior_hyper(state.hyper, prior)
        log_alpha_shared = (ll_prop.sum() + lp_hyper_prop) - (
            state.loglik.sum() + lp_hyper_cur
        )
        if np.log(u_shared) < log_alpha_shared:
            accept_shared = True
            state.hyper = hyper_prop
            state.loglik = ll_prop

    state.iteration += 1
    return state, accept_ind, accept_shared


# --- chain orchestration ---------------------------------------------------------


@dataclass
class FitConfig:
    seed: int
    chains: int = 4
    iterations: int = 100_000
    burnin: int = 10_000
    pilot_iterations: int = 5_000
    pilot_burnin: int = 500
    mode: str = "laplace"
    prior: PriorSpec = field(default_factory=PriorSpec)
    n_jobs: int = 1             # chains run in parallel processes when > 1
    threads_per_chain: int = 0  # 0: leave numba's thread count alone
    store_individuals: bool = True

    def __post_init__(self):
        if self.seed is None:
            raise DomainError("a seed is mandatory for reproducibility")
        if self.chains < 1:
            raise DomainError("need at least one chain")
        if self.burnin >= self.iterations:
            raise DomainError("burnin must be smaller than iterations")


@dataclass
class ChainResult:
    shared_draws: np.ndarray       # (iterations, 7)
    ind_draws: np.ndarray | None   # (iterations, N, 4) when stored
    accept_ind_rate: float
    accept_shared_rate: float
    runtime_s: float
    final_state: HierarchicalState
    proposals: ProposalSpec


def init_state(ctx: EvalContext, rng, max_tries: int = 100) -> HierarchicalState:
    """Draw overdispersed starting points from the priors until the
    posterior density is positive; raises after max_tries failures."""
    prior = ctx.prior
    n = ctx.data.n
    for _ in range(max_tries):
        hyper = np.array([
            rng.gamma(prior.mu_r0[0], prior.mu_r0[1]),
            rng.gamma(prior.mu_delta[0], prior.mu_delta[1]),
            rng.gamma(prior.mu_rho[0], prior.mu_rho[1]),
            0.1 + abs(rng.normal(0.0, prior.sigma_r0_scale / 6.0)),
            0.05 + abs(rng.normal(0.0, prior.sigma_delta_scale / 6.0)),
            0.1 + abs(rng.normal(0.0, prior.sigma_rho_scale / 6.0)),
            0.2 + abs(rng.normal(0.0, prior.kappa_scale / 4.0)),
        ])
        z = rng.normal(0.0, 0.2, size=(n, 3))
        t0 = prior.t0_loc + prior.t0_scale * 0.3 * rng.standard_normal(n)
        nat = hyper[:3] + hyper[3:6] * z
        ll = ctx.logliks(nat, t0, float(hyper[6]))
        if np.all(np.isfinite(ll)) and np.isfinite(log_prior_hyper(hyper, prior)):
            return HierarchicalState(z=z, t0=t0, hyper=hyper, loglik=ll)
    raise InitializationError(
        f"no positive-density start found in {max_tries} prior draws"
    )


def _run_sweeps(state, proposals, ctx, rng, n_iter, store_shared=None,
                store_ind=None, offset=0):
    acc_i = 0.0
    acc_s = 0
    for it in range(n_iter):
        state, a_i, a_s = mwg_step(state, proposals, ctx, rng)
        acc_i += a_i.mean()
        acc_s += a_s
        if store_shared is not None:
            store_shared[offset + it] = state.hyper
        if store_ind is not None:
            store_ind[offset + it, :, :3] = state.z
            store_ind[offset + it, :, 3] = state.t0
    return state, acc_i / max(n_iter, 1), acc_s / max(n_iter, 1)


def run_chain(ctx: EvalContext, cfg: FitConfig, chain_index: int) -> ChainResult:
    """Pilot, tune, then the main run for one chain."""
    if cfg.threads_per_chain > 0:
        import numba
        numba.set_num_threads(cfg.threads_per_chain)
    t_start = time.time()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, chain_index]))
    n = ctx.data.n
    state = init_state(ctx, rng)

    # two-stage pilot: crude diagonal proposals, tune, re-pilot, tune again
    proposals = ProposalSpec.diagonal(n)
    for stage_iters in (cfg.pilot_iterations // 3,
                        cfg.pilot_iterations - cfg.pilot_iterations // 3):
        keep = max(stage_iters - cfg.pilot_burnin, 10)
        pil_sh = np.empty((stage_iters, 7))
        pil_in = np.empty((stage_iters, n, 4))
        state, _, _ = _run_sweeps(state, proposals, ctx, rng, stage_iters,
                                  pil_sh, pil_in)
        proposals = tune_proposals(pil_in[-keep:], pil_sh[-keep:])

    shared = np.empty((cfg.iterations, 7))
    ind = np.empty((cfg.iterations, n, 4)) if cfg.store_individuals else None
    state, acc_i, acc_s = _run_sweeps(state, proposals, ctx, rng,
                                      cfg.iterations, shared, ind)
    return ChainResult(
        shared_draws=shared, ind_draws=ind,
        accept_ind_rate=float(acc_i), accept_shared_rate=float(acc_s),
        runtime_s=time.time() - t_start, final_state=state,
        proposals=proposals,
    )


def _chain_worker(args):
    series_list, model, cfg, chain_index = args
    data = PackedData.from_series(series_list)
    ctx = EvalContext(data=data, model=model, prior=cfg.prior, mode=cfg.mode)
    return run_chain(ctx, cfg, chain_index)


@dataclass
class FitResult:
    shared: np.ndarray             # (chains, kept_iterations, 7) post burn-in
    individuals: np.ndarray | None # (chains, kept, N, 4)
    ids: list
    accept_ind: list
    accept_shared: list
    runtime_s: float
    config: FitConfig
    summary: dict = field(default_factory=dict)

    def shared_by_name(self) -> dict:
        return {name: self.shared[:, :, j] for j, name in enumerate(SHARED_NAMES)}

    def compute_summary(self) -> dict:
        per_param = diagnostics.summarize(self.shared_by_name())
        self.summary = {
            "parameters": per_param,
            "max_rhat": max(v["rhat"] for v in per_param.values()),
            "min_ess": min(v["ess_bulk"] for v in per_param.values()),
            "accept_ind": self.accept_ind,
            "accept_shared": self.accept_shared,
            "runtime_s": self.runtime_s,
            "chains": self.config.chains,
            "iterations": self.config.iterations,
            "burnin": self.config.burnin,
            "mode": self.config.mode,
        }
        return self.summary


def run_chains(series_list: list[IndividualSeries], model: SurrogateModel | None,
               cfg: FitConfig) -> FitResult:
    """Run all chains (in parallel processes when cfg.n_jobs > 1)."""
    t_start = time.time()
    args = [(series_list, model, cfg, c) for c in range(cfg.chains)]
    if cfg.n_jobs > 1 and cfg.chains > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(min(cfg.n_jobs, cfg.chains)) as pool:
            results = pool.map(_chain_worker, args)
    else:
        results = [_chain_worker(a) for a in args]

    kept = slice(cfg.burnin, cfg.iterations)
    shared = np.stack([r.shared_draws[kept] for r in results])
    individuals = None
    if cfg.store_individuals:
        individuals = np.stack([r.ind_draws[kept] for r in results])
    out = FitResult(
        shared=shared, individuals=individuals,
        ids=list(PackedData.from_series(series_list).ids),
        accept_ind=[r.accept_ind_rate for r in results],
        accept_shared=[r.accept_shared_rate for r in results],
        runtime_s=time.time() - t_start, config=cfg,
    )
    out.compute_summary()
    return out


# --- posterior predictive ----------------------------------------------------------


def posterior_predictive_rows(
    result: FitResult,
    model: SurrogateModel,
    grid=None,
    n_draws: int = 400,
    seed: int = 0,
    k: float = DEFAULT_K,
    c: float = DEFAULT_C,
):
    """Per-individual posterior-predictive VL bands on a day grid.

    For each retained draw: rebuild the individual's natural parameters,
    sample a time shift conditioned on non-extinction, and evaluate the
    shifted trajectory on the grid.  Returns rows
    (id, day, median, lo80, hi80, lo95, hi95); -inf marks the pre-infection
    branch.  Draws falling outside the surrogate hypercube are skipped (a
    handful at most; they carry zero posterior mass in practice).
    """
    from .ode import solve as ode_solve
    from .timeshift import ShiftedTrajectory, sample_tau_conditional, shift_eval
    from .surrogate import law_from_surrogate, ExtrapolationError

    if result.individuals is None:
        raise DomainError("posterior predictive needs stored individual draws")
    if grid is None:
        grid = np.arange(-10.0, 22.0)
    grid = np.asarray(grid, dtype=float)
    rng = np.random.default_rng(seed)
    n_chains, n_kept, n_ind, _ = result.individuals.shape
    total = n_chains * n_kept
    sel = np.linspace(0, total - 1, min(n_draws, total)).astype(int)

    rows = []
    for i, ident in enumerate(result.ids):
        z_vals = np.full((sel.size, grid.size), -np.inf)
        got = 0
        for j, flat in enumerate(sel):
            ci, it = divmod(int(flat), n_kept)
            hyper = result.shared[ci, it]
            blk = result.individuals[ci, it, i]
            nat = hyper[:3] + hyper[3:6] * blk[:3]
            t0 = blk[3]
            p = ModelParams(R0=float(nat[0]), k=k, delta=float(nat[1]),
                            rho=float(nat[2]), c=c, t0=float(t0))
            try:
                law = law_from_surrogate(model, p)
            except (ExtrapolationError, DomainError):
                continue
            tau = sample_tau_conditional(law, rng)
            horizon = float(grid.max()) - t0 + max(tau, 0.0) + 1.0
            traj = ode_solve(p, t_end=t0 + max(horizon, 2.0))
            z_vals[got] = shift_eval(ShiftedTrajectory(traj=traj, tau=tau), grid)
            got += 1
        if got == 0:
            raise DomainError(f"individual {ident}: no usable posterior draws")
        # clip the -inf branch to a finite sentinel for quantile interpolation
        z = np.maximum(z_vals[:got], -1e12)
        qs = np.quantile(z, [0.5, 0.10, 0.90, 0.025, 0.975], axis=0)
        qs = np.where(qs <= -1e11, -np.inf, qs)
        for gi, day in enumerate(grid):
            rows.append((ident, float(day), *[float(q) for q in qs[:, gi]]))
    return rows


def write_posterior_predictive_csv(rows, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("id,day,median,lo80,hi80,lo95,hi95\n")
        for r in rows:
            vals = ",".join("-inf" if not np.isfinite(x) else f"{x:.6g}"
                            for x in r[1:])
            fh.write(f"{r[0]},{vals}\n")


# --- artifact writers -------------------------------------------------------------


def write_draws_csv(result: FitResult, path, thin: int = 1, header_lines=()):
    """One row per kept iteration: chain, iteration, shared, individuals."""
    n_chains, n_iter, _ = result.shared.shape
    cols = ["chain", "iteration"] + list(SHARED_NAMES)
    if result.individuals is not None:
        for ident in result.ids:
            for nm in IND_NAMES:
                cols.append(f"{nm}[{ident}]")
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for ci in range(n_chains):
            for it in range(0, n_iter, thin):
                row = [str(ci), str(it + result.config.burnin)]
                row += [f"{x:.10g}" for x in result.shared[ci, it]]
                if result.individuals is not None:
                    row += [f"{x:.10g}" for x in result.individuals[ci, it].ravel()]
                fh.write(",".join(row) + "\n")


def write_summary_json(result: FitResult, path, extra=None):
    doc = dict(result.summary)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
