"""Build and load the cached surrogate artifacts used by the acceptance suite.

The acceptance criteria need a surrogate trained on >= 10^4 Monte-Carlo
labeled points, which takes hours to generate; this module builds that
table once (checkpointed, resumable) and trains/saves the model next to
it.  Everything is keyed by a fixed root seed, so a rebuild from scratch
reproduces the same artifacts.  Delete the cache directory to force a
rebuild.

Run directly to (re)build:  python3 tests/acceptance_cache.py
"""

import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from vlshift import surrogate as S
from vlshift import timeshift

CACHE_DIR = Path(__file__).resolve().parent.parent / ".acceptance_cache"
TABLE_PATH = CACHE_DIR / "training_table.csv"
PROGRESS_PATH = CACHE_DIR / "progress.json"
MODEL_PATH = CACHE_DIR / "surrogate.json"
SPLIT_PATH = CACHE_DIR / "holdout_split.json"

ROOT_SEED = 20240801
N_TARGET = 10_000
SIMS_PER_POINT = 10_000
SURVIVOR_TARGET = 18_000
BOUNDS = S.DEFAULT_BOUNDS
VAL_FRACTION = 0.1
TRAIN_SEED = 7

_COLUMNS = timeshift.GG_TABLE_COLUMNS


def _candidate_rng(index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([ROOT_SEED, index]))


def _load_rows():
    if not TABLE_PATH.exists():
        return []
    rows = []
    with open(TABLE_PATH) as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        for row in reader:
            rows.append([float(x) for x in row])
    return rows


def build_table(progress_every: int = 50) -> None:
    CACHE_DIR.mkdir(exist_ok=True)
    rows = _load_rows()
    attempted = 0
    if PROGRESS_PATH.exists():
        attempted = json.loads(PROGRESS_PATH.read_text())["attempted"]
    if not TABLE_PATH.exists():
        with open(TABLE_PATH, "w", newline="") as fh:
            csv.writer(fh).writerow(_COLUMNS)
    t_start = time.time()
    while len(rows) < N_TARGET:
        rng = _candidate_rng(attempted)
        theta = BOUNDS.sample(1, rng)[0]
        labeled = S.label_candidate(
            theta, rng, SIMS_PER_POINT, SURVIVOR_TARGET
        )
        attempted += 1
        if labeled is not None:
            fit, summary = labeled
            row = [theta[0], theta[1], theta[2], fit.a, fit.d, fit.p,
                   summary.lam, summary.q_star]
            rows.append(row)
            with open(TABLE_PATH, "a", newline="") as fh:
                csv.writer(fh).writerow([f"{x:.12g}" for x in row])
            PROGRESS_PATH.write_text(json.dumps({"attempted": attempted}))
            if len(rows) % progress_every == 0:
                rate = (time.time() - t_start) / max(1, len(rows))
                print(f"[cache] {len(rows)}/{N_TARGET} labeled "
                      f"(attempted {attempted}, ~{rate:.1f}s/pt recently)",
                      flush=True)
    print(f"[cache] table complete: {len(rows)} rows", flush=True)


def load_training_set() -> S.TrainingSet:
    rows = np.array(_load_rows())
    if rows.shape[0] < N_TARGET:
        raise RuntimeError(
            f"training table incomplete ({rows.shape[0]}/{N_TARGET}); "
            "run python3 tests/acceptance_cache.py"
        )
    return S.training_set_from_rows(
        rows[:N_TARGET, :3], rows[:N_TARGET, 3:6], BOUNDS,
        sims_per_point=SIMS_PER_POINT,
    )


def train_and_save() -> None:
    ts = load_training_set()
    # record the exact holdout split used for the accuracy criterion
    rng = np.random.default_rng(TRAIN_SEED)
    idx = rng.permutation(ts.n)
    n_val = int(round(VAL_FRACTION * ts.n))
    SPLIT_PATH.write_text(json.dumps({"val_idx": idx[:n_val].tolist()}))
    # train() re-derives the same split from the same generator state
    model = S.train(ts, np.random.default_rng(TRAIN_SEED),
                    val_fraction=VAL_FRACTION, patience=30)
    S.save_model(model, MODEL_PATH,
                 provenance={"root_seed": ROOT_SEED, "train_seed": TRAIN_SEED})
    print(f"[cache] model saved: epochs={model.epochs_run} "
          f"best_val={model.best_val_loss:.5f}", flush=True)


def ensure_cache() -> None:
    if not MODEL_PATH.exists():
        build_table()
        train_and_save()


def load_model() -> S.SurrogateModel:
    ensure_cache()
    return S.load_model(MODEL_PATH)


def holdout_indices() -> np.ndarray:
    return np.array(json.loads(SPLIT_PATH.read_text())["val_idx"], dtype=int)


if __name__ == "__main__":
    ensure_cache()
    print("[cache] ready")
