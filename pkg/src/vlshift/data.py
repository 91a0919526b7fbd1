"""Dataset ingestion, preprocessing, and synthetic cohort generation.

Preprocessing applies the cohort-study rules for series censored at a
detection limit eta, in order:

1. exclude the subject if any above-eta detection lies outside a 14-day
   window around the peak observation;
2. trim leading/trailing runs of eta-observations to at most one
   bracketing eta on each side;
3. truncate at the first interior run of three consecutive
   eta-observations, keeping the first eta of that run;
4. exclude the subject if fewer than two above-eta observations remain.

Synthetic cohorts draw individual parameters from Normal population
models, infection times from Gumbel(-7, 3), simulate the shifted
deterministic trajectory with a sampled time shift, add Normal noise on
an integer-day grid, censor at eta and preprocess -- all under a
rejection loop enforcing a peak log-VL in [5, 10], a shifted peak time
in [4, 9] days post-infection, and log-VL below 4.5 at 21 days
post-infection.  Extinct shift draws trigger a redraw.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .likelihood import IndividualSeries
from .model import DomainError, ModelParams, DEFAULT_K, DEFAULT_C, DEFAULT_S0
from .ode import peak_stats, solve
from .timeshift import EXTINCT, ShiftedTrajectory, sample_tau, shift_eval

DEFAULT_ETA = 2.658  # log10 copies/mL detection limit of the reference assay
DEFAULT_DAY_GRID = np.arange(-10, 22)  # integer days relative to peak VL


class ParseError(DomainError):
    """Malformed input row; carries the offending line number."""


@dataclass(frozen=True)
class RawSeries:
    """Unprocessed (day, log10 VL) pairs for one subject."""

    id: str
    days: np.ndarray
    values: np.ndarray
    eta: float

    def __post_init__(self):
        d = np.asarray(self.days, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if d.shape != v.shape:
            raise DomainError(f"series {self.id}: mismatched day/value lengths")
        if d.size > 1 and not np.all(np.diff(d) > 0):
            raise DomainError(f"series {self.id}: days must be strictly increasing")
        object.__setattr__(self, "days", d)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Excluded:
    """Outcome of preprocessing when a subject is dropped."""

    id: str
    reason: str


def preprocess(raw: RawSeries) -> IndividualSeries | Excluded:
    """Apply the four filtering rules; values at or below eta are censored."""
    days = raw.days.copy()
    values = raw.values.copy()
    eta = raw.eta
    detected = values > eta

    # rule 1: detections confined to a 14-day window around the peak observation
    if np.any(detected):
        peak_day = days[int(np.argmax(values))]
        if np.any(detected & (np.abs(days - peak_day) > 14.0)):
            return Excluded(raw.id, "detection outside 14-day window around peak")

    # rule 2: collapse leading/trailing LOD runs to one bracketing point
    if np.any(detected):
        first = int(np.argmax(detected))
        last = int(len(detected) - 1 - np.argmax(detected[::-1]))
        start = max(first - 1, 0)
        stop = min(last + 1, len(days) - 1)
        days = days[start:stop + 1]
        values = values[start:stop + 1]
        detected = detected[start:stop + 1]

    # rule 3: truncate at the first interior run of 3 consecutive LOD points
    run = 0
    cut = None
    for j, det in enumerate(detected):
        if det:
            run = 0
        else:
            run += 1
            if run == 3:
                cut = j - 2
                break
    if cut is not None:
        days = days[:cut + 1]
        values = values[:cut + 1]
        detected = detected[:cut + 1]

    # rule 4: enough detections to define growth and decline
    if int(detected.sum()) < 2:
        return Excluded(raw.id, "fewer than 2 observations above the LOD")

    out_values = np.where(detected, values, eta)
    return IndividualSeries(
        id=raw.id, times=days, values=out_values,
        censored=~detected, eta=eta,
    )


# --- synthetic cohorts -----------------------------------------------------------


@dataclass(frozen=True)
class CohortConfig:
    """Population values and acceptance rules for synthetic generation.

    Defaults reproduce the reference synthetic setup: population means
    (8, 1.3, 3) with spreads (0.5, 0.15, 0.25), noise scale 0.5, eta
    2.658, integer-day observations on [-10, 21] around the peak-VL
    origin, peak log-VL in [5, 10], shifted peak 4..9 days post-infection
    and log-VL < 4.5 at day 21 post-infection.
    """

    n: int
    seed: int
    mu_R0: float = 8.0
    sigma_R0: float = 0.5
    mu_delta: float = 1.3
    sigma_delta: float = 0.15
    mu_rho: float = 3.0
    sigma_rho: float = 0.25
    kappa: float = 0.5
    eta: float = DEFAULT_ETA
    k: float = DEFAULT_K
    c: float = DEFAULT_C
    s0: float = DEFAULT_S0
    t0_loc: float = -7.0
    t0_scale: float = 3.0
    day_grid: np.ndarray = field(default_factory=lambda: DEFAULT_DAY_GRID.copy())
    peak_logvl_range: tuple = (5.0, 10.0)
    peak_day_range: tuple = (4.0, 9.0)
    tail_day: float = 21.0
    tail_logvl_max: float = 4.5
    max_rejections: int = 10_000

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("cohort size must be >= 1")


@dataclass(frozen=True)
class GroundTruth:
    """The parameters actually used for one accepted individual."""

    id: str
    R0: float
    delta: float
    rho: float
    t0: float
    tau: float
    noise: np.ndarray  # epsilon draws at the emitted observation days


@dataclass
class Cohort:
    series: list
    truth: list
    config: CohortConfig


def _law_source_mc(n_sims=10_000):
    from .timeshift import fit_time_shift_law

    def source(p: ModelParams, rng):
        law, _ = fit_time_shift_law(p, n_sims, rng)
        return law

    return source


def law_source_from_surrogate(model):
    from .surrogate import law_from_surrogate

    def source(p: ModelParams, rng):
        return law_from_surrogate(model, p)

    return source


def generate_cohort(cfg: CohortConfig, law_source=None, rng=None) -> Cohort:
    """Simulate a cohort under the rejection rules; returns accepted series
    plus their ground truth.  law_source maps (ModelParams, rng) to a
    TimeShiftLaw; the default calibrates each draw by Monte-Carlo (slow --
    pass a surrogate-backed source for bulk use)."""
    if law_source is None:
        law_source = _law_source_mc()
    root = np.random.SeedSequence(cfg.seed)
    series_out = []
    truth_out = []
    for i in range(cfg.n):
        rng_i = np.random.default_rng(root.spawn(1)[0])
        accepted = None
        for attempt in range(cfg.max_rejections):
            draw = _attempt_individual(cfg, law_source, rng_i, f"{i + 1}")
            if draw is not None:
                accepted = draw
                break
        if accepted is None:
            raise DomainError(
                f"individual {i + 1}: {cfg.max_rejections} consecutive "
                "rejections; check the cohort configuration"
            )
        series_out.append(accepted[0])
        truth_out.append(accepted[1])
    return Cohort(series=series_out, truth=truth_out, config=cfg)


def _attempt_individual(cfg: CohortConfig, law_source, rng, ident: str):
    r0 = rng.normal(cfg.mu_R0, cfg.sigma_R0)
    delta = rng.normal(cfg.mu_delta, cfg.sigma_delta)
    rho = rng.normal(cfg.mu_rho, cfg.sigma_rho)
    if r0 <= 1.0 + 1e-6 or delta <= 0 or rho <= 0:
        return None
    # Gumbel(t0_loc, t0_scale) via inverse transform
    t0 = cfg.t0_loc - cfg.t0_scale * np.log(-np.log(rng.random()))
    p = ModelParams(R0=r0, k=cfg.k, delta=delta, rho=rho, c=cfg.c,
                    t0=t0, S0=cfg.s0)
    try:
        law = law_source(p, rng)
    except DomainError:
        return None

    tau = sample_tau(law, rng)
    if tau is EXTINCT:
        return None

    horizon = max(float(cfg.day_grid.max()), cfg.tail_day + t0) - t0 + max(tau, 0.0) + 1.0
    traj = solve(p, t_end=t0 + max(horizon, 5.0))
    stats = peak_stats(traj)
    lo, hi = cfg.peak_logvl_range
    if not (lo <= stats.log10_v_peak <= hi):
        return None
    peak_day_post_infection = (stats.t_peak - t0) - tau
    lo, hi = cfg.peak_day_range
    if not (lo <= peak_day_post_infection <= hi):
        return None
    straj = ShiftedTrajectory(traj=traj, tau=tau)
    if shift_eval(straj, t0 + cfg.tail_day) >= cfg.tail_logvl_max:
        return None

    z = shift_eval(straj, cfg.day_grid.astype(float))
    noise = rng.normal(0.0, cfg.kappa, size=z.shape)
    y = z + noise
    censored = ~(y > cfg.eta)  # -inf + noise stays censored
    values = np.where(censored, cfg.eta, y)
    # preprocess sees the censored floor exactly as a real dataset would
    raw = RawSeries(id=ident, days=cfg.day_grid.astype(float),
                    values=values, eta=cfg.eta)
    processed = preprocess(raw)
    if isinstance(processed, Excluded):
        return None
    keep = np.isin(raw.days, processed.times)
    truth = GroundTruth(id=ident, R0=r0, delta=delta, rho=rho, t0=t0,
                        tau=float(tau), noise=noise[keep])
    return processed, truth


# --- file formats ------------------------------------------------------------------
#
# dataset CSV: header id,day,log10_vl (comment lines start with '#');
# sidecar JSON: eta, units, time origin, provenance;
# ground-truth CSV: id,R0,delta,rho,t0,tau.


def save_dataset(cohort: Cohort, data_path, meta_path, truth_path=None,
                 provenance=None):
    with open(data_path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        w = csv.writer(fh)
        w.writerow(["id", "day", "log10_vl"])
        for s in cohort.series:
            for t, v in zip(s.times, s.values):
                w.writerow([s.id, f"{t:.10g}", f"{v:.10g}"])
    meta = {
        "schema_version": 1,
        "eta": cohort.config.eta,
        "units": "log10 copies/mL",
        "time_origin": "days relative to peak observed VL",
        "n_individuals": len(cohort.series),
    }
    if provenance:
        meta["provenance"] = provenance
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if truth_path is not None:
        with open(truth_path, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            w = csv.writer(fh)
            w.writerow(["id", "R0", "delta", "rho", "t0", "tau"])
            for g in cohort.truth:
                w.writerow([g.id] + [f"{x:.12g}"
                                     for x in (g.R0, g.delta, g.rho, g.t0, g.tau)])


def load_truth(path):
    out = []
    with open(path) as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            out.append(GroundTruth(
                id=row["id"], R0=float(row["R0"]), delta=float(row["delta"]),
                rho=float(row["rho"]), t0=float(row["t0"]), tau=float(row["tau"]),
                noise=np.empty(0),
            ))
    return out


def load_dataset(data_path, meta_path) -> list:
    """Parse a dataset CSV + metadata JSON into IndividualSeries.

    Censoring is inferred by exact equality with eta.  Validation errors
    (bad schema, non-monotone or duplicated days, values below eta) are
    aggregated and raised together.
    """
    meta_path = Path(meta_path)
    if not meta_path.exists():
        raise ParseError(f"metadata file not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    if "eta" not in meta:
        raise ParseError(f"{meta_path}: missing required key 'eta'")
    eta = float(meta["eta"])

    by_id: dict = {}
    order: list = []
    errors: list = []
    with open(data_path) as fh:
        lines = [(n, line) for n, line in enumerate(fh, start=1)
                 if line.strip() and not line.startswith("#")]
    if not lines:
        raise ParseError(f"{data_path}: empty file")
    header = [h.strip() for h in lines[0][1].strip().split(",")]
    if header != ["id", "day", "log10_vl"]:
        raise ParseError(f"{data_path}: expected header id,day,log10_vl, got {header}")
    for n, line in lines[1:]:
        parts = line.strip().split(",")
        if len(parts) != 3:
            errors.append(f"line {n}: expected 3 fields, got {len(parts)}")
            continue
        ident = parts[0]
        try:
            day = float(parts[1])
            value = float(parts[2])
        except ValueError:
            errors.append(f"line {n}: non-numeric day or value")
            continue
        if ident not in by_id:
            by_id[ident] = []
            order.append(ident)
        by_id[ident].append((day, value, n))

    series = []
    for ident in order:
        rows = by_id[ident]
        days = np.array([r[0] for r in rows])
        values = np.array([r[1] for r in rows])
        if np.unique(days).size != days.size:
            dup = days[np.argmax(np.diff(np.sort(days)) == 0)]
            errors.append(f"id {ident}: duplicated day {dup:g}")
            continue
        if not np.all(np.diff(days) > 0):
            errors.append(f"id {ident}: days not strictly increasing")
            continue
        if np.any(values < eta):
            errors.append(f"id {ident}: value below the detection limit eta={eta}")
            continue
        series.append(IndividualSeries(
            id=ident, times=days, values=values,
            censored=(values == eta), eta=eta,
        ))
    if errors:
        raise ParseError("; ".join(errors))
    return series
