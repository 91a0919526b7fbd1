"""Within-host viral load fitting with time-shifted deterministic trajectories.

The library replaces stochastic simulation of a target-cell-limited chain
with a single deterministic solve plus a closed-form random time-shift law,
and builds a hierarchical Bayesian sampler (with an amortized neural
surrogate and a Laplace-approximated marginal likelihood) on top.  Exact
Gillespie simulators are included as validation oracles.

Module map:

    model      parameterization, reactions, R0 <-> beta
    ode        dense-output solver for the mean-field system
    branching  growth rate, eigenvectors, extinction probabilities
    timeshift  the time-shift law: density, sampling, Monte-Carlo fitting
    surrogate  amortized (R0, delta, rho) -> (a, d, p) network
    likelihood censored path / exact marginal / Laplace marginal
    inference  hierarchical Metropolis-within-Gibbs sampler
    diagnostics rank-normalized split R-hat and bulk ESS
    data       preprocessing rules and synthetic cohort generation
    ssa        exact Gillespie oracles (full chain and branching chain)
    cli        command-line pipeline (simulate / train-surrogate / fit / validate)
"""

from .model import (
    FIG1_PARAMS,
    DomainError,
    ModelParams,
    Reaction,
    REACTIONS,
    State,
    beta_from_r0,
    r0_from_beta,
    rates,
)

__all__ = [
    "FIG1_PARAMS",
    "DomainError",
    "ModelParams",
    "Reaction",
    "REACTIONS",
    "State",
    "beta_from_r0",
    "r0_from_beta",
    "rates",
]

__version__ = "0.1.0"
