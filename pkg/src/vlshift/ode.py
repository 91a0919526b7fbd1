"""Dense-output solver for the mean-field system.

The deterministic limit of the chain is

    S' = -beta S V,   E' = beta S V - k E,   I' = k E - delta I,
    V' = rho I - c V,

started from (S0 - 1, 1, 0, 0) at the infection time t0.  Solutions use
an adaptive Dormand-Prince 5(4) pair with its free quartic interpolant
(rtol 1e-8, atol 1e-10 by default) so the trajectory can be evaluated
anywhere in [t0, t_end] at interpolation accuracy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .model import DomainError, ModelParams

DEFAULT_T_END = 50.0  # days past infection; beyond every observation window
DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10


class IntegrationError(RuntimeError):
    """Solver could not complete; carries the last good internal time."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good time {last_time:g})")
        self.last_time = last_time


class NoPeakError(RuntimeError):
    """Trajectory has no macroscopic interior viral-load peak (R0 <= 1)."""


@dataclass(frozen=True)
class Trajectory:
    """Dense deterministic solution on [t0, t0 + horizon].

    Thread-safe and immutable after construction; evaluation just reads
    the stored step mesh and interpolation coefficients.
    """

    params: ModelParams
    t0: float
    horizon: float
    rtol: float
    atol: float
    _ts: np.ndarray
    _ys: np.ndarray
    _Q: np.ndarray

    @property
    def t_end(self) -> float:
        return self.t0 + self.horizon

    def _internal(self, t) -> np.ndarray:
        s = np.asarray(t, dtype=float) - self.t0
        if np.any(s < -1e-12) or np.any(s > self.horizon + 1e-12):
            raise DomainError(
                f"time outside trajectory domain [{self.t0}, {self.t_end}]"
            )
        return np.clip(s, 0.0, self.horizon)

    def states(self, t) -> np.ndarray:
        """Interpolated (S, E, I, V); shape (..., 4)."""
        s = self._internal(t)
        flat = np.atleast_1d(s).ravel()
        out = np.empty((flat.size, 4))
        n_seg = self._ts.size - 1
        buf = np.empty(4)
        for i, si in enumerate(flat):
            K.dense_eval_state(self._ts, self._ys, self._Q, n_seg, si, buf)
            out[i] = buf
        if np.isscalar(t) or np.ndim(t) == 0:
            return out[0]
        return out.reshape(np.shape(t) + (4,))

    def v(self, t):
        """Interpolated virion count V(t)."""
        s = self._internal(t)
        n_seg = self._ts.size - 1
        if np.isscalar(t) or np.ndim(t) == 0:
            return K.dense_eval_v(self._ts, self._ys, self._Q, n_seg, float(s))
        flat = np.atleast_1d(s).ravel()
        out = np.array(
            [K.dense_eval_v(self._ts, self._ys, self._Q, n_seg, si) for si in flat]
        )
        return out.reshape(np.shape(t))

    def dense_arrays(self):
        """Raw (ts, ys, Q) mesh for the compiled likelihood kernels."""
        return self._ts, self._ys, self._Q


def solve(
    p: ModelParams,
    t_end: float = None,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> Trajectory:
    """Solve the mean-field system from (S0-1, 1, 0, 0) at t0.

    t_end is absolute (same axis as t0); defaults to t0 + 50 days.
    """
    if t_end is None:
        t_end = p.t0 + DEFAULT_T_END
    horizon = t_end - p.t0
    if horizon <= 0:
        raise DomainError(f"t_end ({t_end}) must exceed t0 ({p.t0})")
    y0 = np.array([p.S0 - 1.0, 1.0, 0.0, 0.0])
    status, n_seg, ts, ys, Q = K.solve_tcl(
        p.beta, p.k, p.delta, p.rho, p.c, y0, horizon, rtol, atol, 1_000_000
    )
    if status != K.OK:
        raise IntegrationError("adaptive step failure", float(ts[n_seg]) + p.t0)
    return Trajectory(
        params=p, t0=p.t0, horizon=horizon, rtol=rtol, atol=atol,
        _ts=ts, _ys=ys, _Q=Q,
    )


def log10_v(traj: Trajectory, t):
    """log10 V(t); -inf wherever V is at or below the numeric floor.

    The floor (1e-30 virions) keeps censored-likelihood evaluations finite
    everywhere except the exact initial instant where V is identically 0.
    """
    v = traj.v(t)
    with np.errstate(divide="ignore"):
        out = np.where(np.asarray(v) > K.V_FLOOR, np.log10(np.maximum(v, K.V_FLOOR)), -np.inf)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class PeakStats:
    """Location and height of the viral-load peak."""

    t_peak: float  # absolute time (same axis as t0)
    log10_v_peak: float


def peak_stats(traj: Trajectory, grid_points: int = 2048) -> PeakStats:
    """Locate the V peak: dense-grid argmax plus golden-section refinement."""
    if traj.params.R0 <= 1.0:
        raise NoPeakError(
            f"R0 = {traj.params.R0} <= 1: subcritical trajectory has no "
            "macroscopic peak"
        )
    ts, ys, Q = traj.dense_arrays()
    n_seg = ts.size - 1
    grid = np.linspace(0.0, traj.horizon, grid_points)
    vals = np.array([K.dense_eval_v(ts, ys, Q, n_seg, s) for s in grid])
    i = int(np.argmax(vals))
    lo = grid[max(0, i - 1)]
    hi = grid[min(grid_points - 1, i + 1)]

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1 = K.dense_eval_v(ts, ys, Q, n_seg, x1)
    f2 = K.dense_eval_v(ts, ys, Q, n_seg, x2)
    while hi - lo > 1e-10 * max(1.0, hi):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = K.dense_eval_v(ts, ys, Q, n_seg, x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = K.dense_eval_v(ts, ys, Q, n_seg, x1)
    s_peak = 0.5 * (lo + hi)
    v_peak = K.dense_eval_v(ts, ys, Q, n_seg, s_peak)
    if v_peak <= K.V_FLOOR:
        raise NoPeakError("flat trajectory: no finite viral-load peak")
    return PeakStats(t_peak=traj.t0 + s_peak, log10_v_peak=float(np.log10(v_peak)))


def write_trajectory_csv(traj: Trajectory, path, grid, header_lines=()) -> None:
    """Dump t, S, E, I, V, log10V at the caller's grid."""
    grid = np.asarray(grid, dtype=float)
    states = traj.states(grid)
    lv = log10_v(traj, grid)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["t", "S", "E", "I", "V", "log10V"])
        for i, t in enumerate(grid):
            w.writerow(
                [f"{t:.10g}"]
                + [f"{x:.10g}" for x in states[i]]
                + [f"{lv[i]:.10g}" if np.isfinite(lv[i]) else "-inf"]
            )
