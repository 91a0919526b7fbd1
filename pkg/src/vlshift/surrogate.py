"""Amortized surrogate for the time-shift distribution parameters.

Calibrating (a, d, p) by Monte-Carlo is far too slow to sit inside a
likelihood, so a small multilayer perceptron (3 -> 64 -> 3, ReLU hidden
layer, soft-plus output) learns the map (R0, delta, rho) -> (a, d, p)
with k and c held at their fixed values.  Inputs are standardized; the
mean-squared-error loss is taken on the standardized target scale while
the soft-plus head keeps raw predictions strictly positive.

Training points are sampled uniformly on a hypercube that covers the
prior mass and pass a validity filter: the growth rate must be positive
and the central 95% of the time-shift density must lie within [-7, 7]
days (longer shifts than that are not biologically meaningful here).

Predictions outside the training hypercube raise rather than
extrapolate; the sampler treats such proposals as zero likelihood.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import DomainError, ModelParams, DEFAULT_K, DEFAULT_C
from .timeshift import (
    TimeShiftLaw,
    fit_gg_params,
    law_from_fit,
    tau_quantile,
)
from .branching import bp_summary

SCHEMA_VERSION = 1
HIDDEN_UNITS = 64
TAU_WINDOW = 7.0  # central 95% of tau must lie within +/- this many days

# covers the hyper-prior mass that matters while staying supercritical;
# proposals outside are rejected by the sampler, so the lower R0 edge also
# acts as a (documented) supercriticality margin
DEFAULT_BOUNDS_LO = (2.5, 0.6, 1.0)
DEFAULT_BOUNDS_HI = (25.0, 2.4, 9.0)
DEFAULT_N_TARGET = 20_000
DEFAULT_SIMS_PER_POINT = 10_000
DEFAULT_SURVIVOR_TARGET = 18_000  # equalizes label precision across the cube


class ExtrapolationError(DomainError):
    """Prediction requested outside the training hypercube."""


class TrainingError(RuntimeError):
    """Loss diverged or training could not proceed."""


@dataclass(frozen=True)
class Hypercube:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        for l, h in zip(self.lo, self.hi):
            if not (0 < l < h):
                raise DomainError(f"bad hypercube bounds {self.lo} .. {self.hi}")

    def contains(self, x) -> bool:
        return all(l <= v <= h for l, v, h in zip(self.lo, x, self.hi))

    def sample(self, n, rng) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return lo + (hi - lo) * rng.random((n, 3))


DEFAULT_BOUNDS = Hypercube(DEFAULT_BOUNDS_LO, DEFAULT_BOUNDS_HI)


@dataclass
class TrainingSet:
    """Accepted (theta, zeta) pairs with standardization constants."""

    inputs: np.ndarray    # (n, 3) of (R0, delta, rho)
    targets: np.ndarray   # (n, 3) of (a, d, p)
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    bounds: Hypercube
    k: float
    c: float
    n_attempted: int
    sims_per_point: int

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def standardized_inputs(self) -> np.ndarray:
        return (self.inputs - self.in_mean) / self.in_std


def standardize_columns(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, std


def is_valid_point(p: ModelParams, law: TimeShiftLaw) -> bool:
    """Growth rate positive and central 95% of tau within the window."""
    if law.lam <= 0:
        return False
    lo = tau_quantile(law, 0.025)
    hi = tau_quantile(law, 0.975)
    return -TAU_WINDOW <= lo and hi <= TAU_WINDOW


def label_candidate(
    theta,
    rng,
    sims_per_point: int,
    survivor_target: int | None = None,
    k: float = DEFAULT_K,
    c: float = DEFAULT_C,
):
    """Label one candidate point, or return None when the filter rejects it.

    The subcritical check is free; the tau-window check needs the fitted
    law.  survivor_target (when set) scales the per-point simulation count
    by 1/(1 - q*) so label precision stays uniform across the hypercube.
    Returns (fit, summary) on acceptance.
    """
    r0, delta, rho = theta
    p = ModelParams(R0=float(r0), k=k, delta=float(delta), rho=float(rho), c=c)
    summary = bp_summary(p)
    if summary.lam <= 0:
        return None
    n_sims = sims_per_point
    if survivor_target is not None:
        n_sims = max(
            n_sims,
            int(np.ceil(survivor_target / max(1e-6, 1.0 - summary.q_star))),
        )
    fit = fit_gg_params(p, n_sims, rng)
    law = law_from_fit(p, fit)
    if not is_valid_point(p, law):
        return None
    return fit, summary


def generate_training_data(
    bounds: Hypercube,
    n_target: int,
    sims_per_point: int,
    rng,
    survivor_target: int | None = DEFAULT_SURVIVOR_TARGET,
    k: float = DEFAULT_K,
    c: float = DEFAULT_C,
    progress=None,
) -> TrainingSet:
    """Rejection-sample the hypercube and label valid points by MC fitting.

    Raises when fewer than 1% of candidates pass the validity filter
    (the hypercube is badly chosen).  Parallelism lives inside the
    per-point simulation batch; candidate RNG streams are spawned from
    the root generator by candidate index, so the set is reproducible.
    """
    if n_target < 1000:
        raise DomainError(f"n_target must be >= 1000, got {n_target}")
    root = np.random.SeedSequence(rng.integers(0, 2**63 - 1))
    theta_rng = np.random.default_rng(root.spawn(1)[0])
    inputs = []
    targets = []
    attempted = 0
    while len(inputs) < n_target:
        attempted += 1
        theta = bounds.sample(1, theta_rng)[0]
        point_rng = np.random.default_rng(root.spawn(1)[0])
        labeled = label_candidate(theta, point_rng, sims_per_point,
                                  survivor_target, k, c)
        if attempted >= 400 and len(inputs) < 0.01 * attempted:
            raise DomainError(
                f"validity acceptance rate below 1% "
                f"({len(inputs)}/{attempted}); re-choose the hypercube"
            )
        if labeled is None:
            continue
        fit, _ = labeled
        inputs.append(theta)
        targets.append([fit.a, fit.d, fit.p])
        if progress is not None and len(inputs) % progress == 0:
            print(f"[training-data] {len(inputs)}/{n_target} "
                  f"(attempted {attempted})", flush=True)
    return training_set_from_rows(
        np.asarray(inputs), np.asarray(targets), bounds, k, c,
        sims_per_point, attempted,
    )


def training_set_from_rows(
    inputs: np.ndarray,
    targets: np.ndarray,
    bounds: Hypercube,
    k: float = DEFAULT_K,
    c: float = DEFAULT_C,
    sims_per_point: int = 0,
    n_attempted: int = 0,
) -> TrainingSet:
    """Assemble a TrainingSet (with standardization) from labeled rows,
    e.g. loaded back from an exported gg table CSV."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    in_mean, in_std = standardize_columns(inputs)
    out_mean, out_std = standardize_columns(targets)
    return TrainingSet(
        inputs=inputs, targets=targets,
        in_mean=in_mean, in_std=in_std, out_mean=out_mean, out_std=out_std,
        bounds=bounds, k=k, c=c,
        n_attempted=n_attempted, sims_per_point=sims_per_point,
    )


@dataclass
class SurrogateModel:
    """Trained 3 -> 64 -> 3 network plus everything needed to use it."""

    w1: np.ndarray          # (64, 3)
    b1: np.ndarray          # (64,)
    w2: np.ndarray          # (3, 64)
    b2: np.ndarray          # (3,)
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    bounds: Hypercube
    k: float
    c: float
    epochs_run: int = 0
    best_val_loss: float = float("nan")
    meta: dict = field(default_factory=dict)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Vectorized forward pass; x is (n, 3) raw (R0, delta, rho)."""
        xs = (np.atleast_2d(x) - self.in_mean) / self.in_std
        h = np.maximum(xs @ self.w1.T + self.b1, 0.0)
        raw = h @ self.w2.T + self.b2
        return _softplus(raw)


def _softplus(x):
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def train(
    ts: TrainingSet,
    rng,
    val_fraction: float = 0.1,
    patience: int = 30,
    learning_rate: float = 1e-3,
    batch_size: int = 128,
    max_epochs: int = 2000,
) -> SurrogateModel:
    """Adam on standardized-scale MSE with early stopping.

    Stops once the validation loss has not improved for `patience`
    epochs and returns the best-validation snapshot.  val_fraction = 0
    validates on the training set itself (capacity checks only).
    """
    if ts.n == 0:
        raise TrainingError("empty training set")
    if not (0.0 <= val_fraction < 0.5):
        raise DomainError(f"val_fraction must be in [0, 0.5), got {val_fraction}")

    x_all = ts.standardized_inputs()
    y_all = ts.targets
    n = ts.n
    if val_fraction == 0.0:
        x_tr, y_tr = x_all, y_all
        x_val, y_val = x_all, y_all
        n_val = 0
    else:
        idx = rng.permutation(n)
        n_val = max(1, int(round(val_fraction * n)))
        if n - n_val < 1:
            raise TrainingError("not enough points left to train on")
        val_idx, tr_idx = idx[:n_val], idx[n_val:]
        x_tr, y_tr = x_all[tr_idx], y_all[tr_idx]
        x_val, y_val = x_all[val_idx], y_all[val_idx]
    inv_var = 1.0 / ts.out_std**2

    # He initialization for the ReLU layer, small output layer
    w1 = rng.normal(0.0, np.sqrt(2.0 / 3.0), size=(HIDDEN_UNITS, 3))
    b1 = np.zeros(HIDDEN_UNITS)
    w2 = rng.normal(0.0, np.sqrt(2.0 / HIDDEN_UNITS), size=(3, HIDDEN_UNITS))
    b2 = np.zeros(3)

    params = [w1, b1, w2, b2]
    m = [np.zeros_like(q) for q in params]
    v = [np.zeros_like(q) for q in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    def val_loss():
        pred = _softplus(np.maximum(x_val @ w1.T + b1, 0.0) @ w2.T + b2)
        return float(np.mean(((pred - y_val) ** 2) * inv_var))

    best = np.inf
    best_snapshot = [q.copy() for q in params]
    bad_epochs = 0
    epochs_run = 0

    for epoch in range(max_epochs):
        order = rng.permutation(x_tr.shape[0])
        for start in range(0, x_tr.shape[0], batch_size):
            sel = order[start:start + batch_size]
            xb, yb = x_tr[sel], y_tr[sel]
            pre_h = xb @ w1.T + b1
            h = np.maximum(pre_h, 0.0)
            raw = h @ w2.T + b2
            pred = _softplus(raw)
            resid = (pred - yb) * inv_var
            scale = 2.0 / (xb.shape[0] * 3.0)
            d_raw = scale * resid * _sigmoid(raw)
            g_w2 = d_raw.T @ h
            g_b2 = d_raw.sum(axis=0)
            d_h = d_raw @ w2
            d_pre = d_h * (pre_h > 0.0)
            g_w1 = d_pre.T @ xb
            g_b1 = d_pre.sum(axis=0)

            step += 1
            for q, g, mq, vq in zip(params, (g_w1, g_b1, g_w2, g_b2), m, v):
                mq += (1 - beta1) * (g - mq)
                vq += (1 - beta2) * (g * g - vq)
                mhat = mq / (1 - beta1**step)
                vhat = vq / (1 - beta2**step)
                q -= learning_rate * mhat / (np.sqrt(vhat) + eps)

        epochs_run = epoch + 1
        vl = val_loss()
        if not np.isfinite(vl):
            raise TrainingError(f"validation loss diverged at epoch {epochs_run}")
        if vl < best:
            best = vl
            best_snapshot = [q.copy() for q in params]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= patience:
                break

    w1, b1, w2, b2 = best_snapshot
    return SurrogateModel(
        w1=w1, b1=b1, w2=w2, b2=b2,
        in_mean=ts.in_mean.copy(), in_std=ts.in_std.copy(),
        out_mean=ts.out_mean.copy(), out_std=ts.out_std.copy(),
        bounds=ts.bounds, k=ts.k, c=ts.c,
        epochs_run=epochs_run, best_val_loss=best,
        meta={
            "n_train": int(n - n_val),
            "n_val": int(n_val),
            "sims_per_point": ts.sims_per_point,
            "trained_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        },
    )


def predict(m: SurrogateModel, p: ModelParams) -> tuple[float, float, float]:
    """Deterministic forward pass at (R0, delta, rho); strictly positive."""
    if p.k != m.k or p.c != m.c:
        raise DomainError(
            f"surrogate was trained with fixed k={m.k}, c={m.c}; "
            f"got k={p.k}, c={p.c}"
        )
    x = (p.R0, p.delta, p.rho)
    if not m.bounds.contains(x):
        raise ExtrapolationError(
            f"(R0, delta, rho) = {x} outside training hypercube "
            f"{m.bounds.lo} .. {m.bounds.hi}"
        )
    out = K.nn_forward(
        x[0], x[1], x[2], m.w1, m.b1, m.w2, m.b2, m.in_mean, m.in_std
    )
    return float(out[0]), float(out[1]), float(out[2])


def law_from_surrogate(m: SurrogateModel, p: ModelParams) -> TimeShiftLaw:
    s = bp_summary(p)
    if s.lam <= 0:
        raise DomainError("subcritical parameters have no time-shift law")
    a, d, pp = predict(m, p)
    return TimeShiftLaw(lam=s.lam, mu_w=s.mu_w, q_star=s.q_star, a=a, d=d, p=pp)


# --- persistence (JSON, schema v1) ------------------------------------------


def save_model(m: SurrogateModel, path, provenance=None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "architecture": {
            "layers": [3, HIDDEN_UNITS, 3],
            "hidden_activation": "relu",
            "output_activation": "softplus",
        },
        "weights": {
            "w1": m.w1.tolist(),
            "b1": m.b1.tolist(),
            "w2": m.w2.tolist(),
            "b2": m.b2.tolist(),
        },
        "standardization": {
            "in_mean": m.in_mean.tolist(),
            "in_std": m.in_std.tolist(),
            "out_mean": m.out_mean.tolist(),
            "out_std": m.out_std.tolist(),
        },
        "hypercube": {"lo": list(m.bounds.lo), "hi": list(m.bounds.hi)},
        "fixed": {"k": m.k, "c": m.c},
        "training": {
            "epochs_run": m.epochs_run,
            "best_val_loss": m.best_val_loss,
            **m.meta,
        },
    }
    if provenance:
        doc["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> SurrogateModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DomainError(
            f"unsupported surrogate schema {doc.get('schema_version')!r}"
        )
    w = doc["weights"]
    s = doc["standardization"]
    cube = Hypercube(tuple(doc["hypercube"]["lo"]), tuple(doc["hypercube"]["hi"]))
    return SurrogateModel(
        w1=np.asarray(w["w1"]), b1=np.asarray(w["b1"]),
        w2=np.asarray(w["w2"]), b2=np.asarray(w["b2"]),
        in_mean=np.asarray(s["in_mean"]), in_std=np.asarray(s["in_std"]),
        out_mean=np.asarray(s["out_mean"]), out_std=np.asarray(s["out_std"]),
        bounds=cube, k=float(doc["fixed"]["k"]), c=float(doc["fixed"]["c"]),
        epochs_run=int(doc["training"].get("epochs_run", 0)),
        best_val_loss=float(doc["training"].get("best_val_loss", float("nan"))),
        meta={k: v for k, v in doc["training"].items()
              if k not in ("epochs_run", "best_val_loss")},
    )
