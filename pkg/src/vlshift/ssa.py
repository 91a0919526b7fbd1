"""Exact Gillespie simulation oracles.

Direct-method simulators for the full target-cell-limited chain and its
linear branching approximation.  These exist for validation only:
extinction fractions against the closed form, empirical time-shift
distributions against the fitted law, and trajectory envelopes against
shifted deterministic solutions.  Runs are embarrassingly parallel with
one RNG seed per path, so batch results do not depend on scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .branching import require_supercritical
from .model import DomainError, ModelParams
from .ode import solve

BP_POPULATION_CAP = 1e7


@dataclass(frozen=True)
class SsaRun:
    """One stochastic path, thinned to a grid when one was requested."""

    times: np.ndarray          # snapshot grid (possibly empty)
    states: np.ndarray         # (len(times), n_compartments)
    extinct: bool
    t_cross: float             # first time V >= level; NaN if never / unrequested
    t_end: float
    final_state: tuple
    outcome: int               # K.SSA_* code
    event_counts: np.ndarray   # tallies per event type (infection, eclipse
                               # exit, removal, production, clearance)


def _seed(rng) -> np.uint32:
    return np.uint32(rng.integers(0, 2**32 - 1))


def ssa_simulate(
    p: ModelParams,
    t_max: float,
    rng,
    grid=None,
    escape_threshold: float = 0.0,
    crossing_level: float = 0.0,
) -> SsaRun:
    """One exact path of the full chain from (S0-1, 1, 0, 0).

    Times are measured from infection (the oracle never needs t0).
    escape_threshold > 0 stops the run once E+I+V reaches it (survival is
    then certain for any practical purpose); crossing_level > 0 records the
    first time V reaches the level.
    """
    grid_arr = np.empty(0) if grid is None else np.asarray(grid, dtype=float)
    grid_states = np.empty((grid_arr.size, 4))
    counts = np.zeros(5, dtype=np.int64)
    outcome, t_cross, t_end, s, e, i_, v = K.ssa_tcl_run(
        _seed(rng), p.S0, p.beta, p.k, p.delta, p.rho, p.c, t_max,
        float(escape_threshold), float(crossing_level), False, grid_arr,
        grid_states, counts,
    )
    return SsaRun(
        times=grid_arr, states=grid_states,
        extinct=(outcome == K.SSA_EXTINCT), t_cross=float(t_cross),
        t_end=float(t_end), final_state=(s, e, i_, v), outcome=int(outcome),
        event_counts=counts,
    )


def bp_simulate(p: ModelParams, t_max: float, rng,
                cap: float = BP_POPULATION_CAP) -> SsaRun:
    """One exact path of the linear branching chain from (E, I, V) = (1, 0, 0).

    Paths are aborted once E+I+V reaches `cap` (already deep in the
    deterministic regime); the stop time is reported so martingale
    summaries stay exact under optional stopping.
    """
    counts = np.zeros(5, dtype=np.int64)
    outcome, t_stop, e, i_, v = K.bp_run(
        _seed(rng), p.beta_star, p.k, p.delta, p.rho, p.c, t_max, cap, counts
    )
    return SsaRun(
        times=np.empty(0), states=np.empty((0, 3)),
        extinct=(outcome == K.SSA_EXTINCT), t_cross=float("nan"),
        t_end=float(t_stop), final_state=(e, i_, v), outcome=int(outcome),
        event_counts=counts,
    )


def simulate_batch_times(
    p: ModelParams,
    n_runs: int,
    rng,
    t_max: float = 1000.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Outcomes and stop times for a batch of full-chain runs (no snapshots)."""
    seeds = rng.integers(0, 2**32 - 1, size=n_runs).astype(np.uint32)
    outcomes, _, t_end = K.ssa_tcl_batch(
        seeds, p.S0, p.beta, p.k, p.delta, p.rho, p.c, t_max, 0.0, 0.0, False,
    )
    return outcomes, t_end


def extinction_fraction(
    p: ModelParams,
    n_runs: int,
    rng,
    escape_threshold: float = 2000.0,
    t_max: float = 1000.0,
) -> tuple[float, int]:
    """Fraction of full-chain runs that die out before escaping.

    The escape threshold declares survival once E+I+V reaches it; the
    residual extinction probability beyond a few thousand individuals is
    astronomically below the Monte-Carlo error.
    """
    seeds = rng.integers(0, 2**32 - 1, size=n_runs).astype(np.uint32)
    outcomes, _, _ = K.ssa_tcl_batch(
        seeds, p.S0, p.beta, p.k, p.delta, p.rho, p.c, t_max,
        float(escape_threshold), 0.0, False,
    )
    n_ext = int(np.sum(outcomes == K.SSA_EXTINCT))
    return n_ext / n_runs, n_ext


@dataclass(frozen=True)
class TimeShiftSample:
    """Empirical crossing-time shifts from surviving full-chain runs."""

    taus: np.ndarray      # shifts of surviving runs
    n_runs: int
    n_extinct: int
    t_det: float          # deterministic crossing time of the level
    level: float

    @property
    def survivor_fraction(self) -> float:
        return self.taus.size / self.n_runs


def deterministic_crossing_time(p: ModelParams, level: float) -> float:
    """First time the deterministic V reaches the level (bisection on the
    dense solution over the growth phase)."""
    p0 = p.with_t0(0.0)
    traj = solve(p0)
    grid = np.linspace(0.0, traj.horizon, 4096)
    v = traj.v(grid)
    above = np.nonzero(v >= level)[0]
    if above.size == 0:
        raise DomainError(f"deterministic V never reaches level {level}")
    i = above[0]
    if i == 0:
        return 0.0
    lo, hi = grid[i - 1], grid[i]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if traj.v(mid) >= level:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def empirical_timeshifts(
    p: ModelParams,
    n_runs: int,
    rng,
    level: float = 1e3,
    t_max: float = 60.0,
) -> TimeShiftSample:
    """Shifts tau_i = t_det(level) - t_i(level) over surviving runs.

    Positive tau means the stochastic path ran ahead of the mean-field
    path, matching the convention that the deterministic trajectory is
    evaluated at t + tau.  The level should sit inside the exponential
    window (default 1e3 virions).
    """
    require_supercritical(p)
    t_det = deterministic_crossing_time(p, level)
    seeds = rng.integers(0, 2**32 - 1, size=n_runs).astype(np.uint32)
    # crossing the level certifies survival; stop the run right there
    outcomes, t_cross, _ = K.ssa_tcl_batch(
        seeds, p.S0, p.beta, p.k, p.delta, p.rho, p.c, t_max,
        0.0, float(level), True,
    )
    crossed = np.isfinite(t_cross)
    taus = t_det - t_cross[crossed]
    n_extinct = int(np.sum(outcomes == K.SSA_EXTINCT))
    return TimeShiftSample(
        taus=taus, n_runs=n_runs, n_extinct=n_extinct,
        t_det=float(t_det), level=float(level),
    )


def write_run_csv(run: SsaRun, path, header_lines=()):
    """Thinned dump of one run: t, S, E, I, V."""
    if run.times.size == 0:
        raise DomainError("run was simulated without a snapshot grid")
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t,S,E,I,V\n")
        for t, row in zip(run.times, run.states):
            fh.write(f"{t:.10g}," + ",".join(f"{x:.10g}" for x in row) + "\n")


def write_summary_json(path, summary: dict):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
