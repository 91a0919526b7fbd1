"""Command-line entry point.

Subcommands wire the pipeline end to end:

    simulate         generate a synthetic cohort (dataset, metadata, truth)
    train-surrogate  build training data and train the amortized surrogate
    fit              hierarchical MCMC fit of a dataset
    validate         run the simulation-oracle validation suite

Every command requires --seed and is deterministic given it.  Output
files carry a provenance header (version, seed, config hash).  Exit
codes: 2 for data errors, 3 for numerical validation failures, 4 for
I/O errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .model import DomainError, ModelParams

EXIT_DATA = 2
EXIT_VALIDATION = 3
EXIT_IO = 4


def _provenance(args) -> str:
    blob = json.dumps({k: repr(v) for k, v in sorted(vars(args).items())
                       if k != "func"}, sort_keys=True)
    digest = hashlib.sha256(blob.encode()).hexdigest()[:12]
    return f"vlshift {__version__} seed={args.seed} config={digest}"


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    from . import data as D

    cfg = D.CohortConfig(
        n=args.n, seed=args.seed,
        mu_R0=args.mu_r0, sigma_R0=args.sigma_r0,
        mu_delta=args.mu_delta, sigma_delta=args.sigma_delta,
        mu_rho=args.mu_rho, sigma_rho=args.sigma_rho,
        kappa=args.kappa, eta=args.eta,
    )
    if args.surrogate:
        from . import surrogate as S
        law_source = D.law_source_from_surrogate(S.load_model(args.surrogate))
    else:
        law_source = None  # per-individual Monte-Carlo calibration (slow)
    cohort = D.generate_cohort(cfg, law_source=law_source)
    out = _out_dir(args.out)
    prov = _provenance(args)
    D.save_dataset(cohort, out / "dataset.csv", out / "dataset.meta.json",
                   out / "ground_truth.csv", provenance=prov)
    print(f"wrote {len(cohort.series)} individuals to {out}")
    return 0


def cmd_train_surrogate(args) -> int:
    from . import surrogate as S
    from . import timeshift as T

    rng = np.random.default_rng(args.seed)
    bounds = S.Hypercube(tuple(args.bounds[:3]), tuple(args.bounds[3:]))
    out = _out_dir(Path(args.out).parent)
    prov = _provenance(args)

    if args.data_csv:
        rows = T.read_gg_table(args.data_csv)
        ts = S.training_set_from_rows(rows[:, :3], rows[:, 3:6], bounds,
                                      sims_per_point=args.sims_per_point)
    else:
        ts = S.generate_training_data(
            bounds, args.n_train, args.sims_per_point, rng,
            survivor_target=args.survivor_target, progress=500,
        )
        if args.save_data:
            from . import branching
            lam = np.empty(ts.n)
            q_star = np.empty(ts.n)
            for i, row in enumerate(ts.inputs):
                s = branching.bp_summary(ModelParams(
                    R0=row[0], k=ts.k, delta=row[1], rho=row[2], c=ts.c))
                lam[i] = s.lam
                q_star[i] = s.q_star
            T.write_gg_table(
                args.save_data,
                np.column_stack([ts.inputs, ts.targets, lam, q_star]),
                header_lines=[prov],
            )
    model = S.train(ts, np.random.default_rng(args.seed + 1),
                    val_fraction=args.val_fraction, patience=args.patience,
                    max_epochs=args.max_epochs)
    S.save_model(model, args.out, provenance={"header": prov})

    pred = model.forward(ts.inputs)
    rel = np.abs(pred - ts.targets) / ts.targets
    med = np.median(rel, axis=0)
    print(f"trained in {model.epochs_run} epochs; best val loss "
          f"{model.best_val_loss:.5f}")
    print(f"in-sample median relative error (a, d, p): "
          f"{med[0]:.3%} {med[1]:.3%} {med[2]:.3%}")
    return 0


def cmd_fit(args) -> int:
    from . import data as D
    from . import inference as I
    from . import surrogate as S

    series = D.load_dataset(args.data, args.meta)
    model = S.load_model(args.surrogate) if args.surrogate else None
    mode = "deterministic" if args.deterministic else "laplace"
    cfg = I.FitConfig(
        seed=args.seed, chains=args.chains, iterations=args.iters,
        burnin=args.burnin, pilot_iterations=args.pilot, mode=mode,
        n_jobs=args.jobs, threads_per_chain=args.threads_per_chain,
    )
    result = I.run_chains(series, model, cfg)
    out = _out_dir(args.out)
    prov = _provenance(args)
    I.write_draws_csv(result, out / "draws.csv", thin=args.thin,
                      header_lines=[prov])
    I.write_summary_json(result, out / "summary.json",
                         extra={"provenance": prov})
    if mode == "laplace":
        rows = I.posterior_predictive_rows(result, model, seed=args.seed)
        I.write_posterior_predictive_csv(rows, out / "posterior_predictive.csv",
                                         header_lines=[prov])
    max_rhat = result.summary["max_rhat"]
    print(f"chains={cfg.chains} iters={cfg.iterations} "
          f"max R-hat={max_rhat:.4f} min ESS={result.summary['min_ess']:.0f} "
          f"runtime={result.runtime_s:.0f}s")
    if max_rhat > 1.01:
        print("warning: R-hat above 1.01; chains may not have converged")
        if args.strict:
            return EXIT_VALIDATION
    return 0


def cmd_validate(args) -> int:
    from . import branching, likelihood, ssa, timeshift
    from . import data as D

    p = ModelParams(R0=args.r0, k=args.k, delta=args.delta, rho=args.rho,
                    c=args.c, t0=0.0)
    out = _out_dir(args.out)
    prov = _provenance(args)
    rng = np.random.default_rng(args.seed)
    report = {"provenance": prov, "params": vars(args).copy(), "checks": {}}
    report["params"].pop("func", None)
    failures = []

    summary = branching.bp_summary(p)
    report["checks"]["lambda"] = summary.lam
    report["checks"]["q_star"] = summary.q_star

    if summary.lam <= 0:
        report["checks"]["note"] = (
            "subcritical parameters: q* = 1, time-shift checks skipped"
        )
        ssa_frac, _ = ssa.extinction_fraction(p, args.runs, rng, t_max=200.0)
        report["checks"]["ssa_extinction_fraction"] = ssa_frac
    else:
        frac, _ = ssa.extinction_fraction(p, args.runs, rng)
        se = float(np.sqrt(summary.q_star * (1 - summary.q_star) / args.runs))
        ok = abs(frac - summary.q_star) < 3 * se
        report["checks"]["extinction"] = {
            "analytic": summary.q_star, "simulated": frac, "three_se": 3 * se,
            "pass": ok,
        }
        if not ok:
            failures.append("extinction fraction vs closed form")

        law, fit = timeshift.fit_time_shift_law(p, max(args.runs, 10_000), rng)
        sample = ssa.empirical_timeshifts(p, args.runs, rng)
        taus = np.sort(sample.taus)
        cdf = timeshift.tau_cdf(law, taus)
        i = np.arange(1, taus.size + 1)
        ks = float(np.max(np.maximum(i / taus.size - cdf,
                                     cdf - (i - 1) / taus.size)))
        ok = ks < 0.02
        report["checks"]["timeshift_ks"] = {
            "ks": ks, "n_survivors": int(taus.size), "pass": ok,
        }
        if not ok:
            failures.append("time-shift law vs simulated crossing shifts")

        # Laplace vs exact on a small synthetic individual
        cohort = D.generate_cohort(
            D.CohortConfig(n=1, seed=args.seed,
                           mu_R0=p.R0, sigma_R0=1e-6,
                           mu_delta=p.delta, sigma_delta=1e-6,
                           mu_rho=p.rho, sigma_rho=1e-6),
            law_source=lambda q, r: law,
        )
        ser = cohort.series[0]
        truth = cohort.truth[0]
        base = ModelParams(R0=truth.R0, k=p.k, delta=truth.delta,
                           rho=truth.rho, c=p.c, t0=truth.t0)
        grids = {
            "R0": np.linspace(base.R0 * 0.9, base.R0 * 1.1, args.profile_points),
            "t0": np.linspace(base.t0 - 1.0, base.t0 + 1.0, args.profile_points),
        }
        rows = likelihood.profile_rows(ser, base, 0.5, lambda q: law, grids)
        likelihood.write_profile_csv(rows, out / "profile.csv",
                                     header_lines=[prov])
        max_abs = max(r[4] for r in rows)
        ok = max_abs < 1e-7
        report["checks"]["laplace_vs_exact"] = {
            "max_abs_err": max_abs, "points": len(rows), "pass": ok,
            "note": "time-shift law held at the base point across the profile",
        }
        if not ok:
            failures.append("Laplace vs exact profile agreement")

    report["failures"] = failures
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    if failures:
        print("validation FAILED:", "; ".join(failures))
        return EXIT_VALIDATION
    print("validation passed; report at", out / "report.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vlshift",
        description="Within-host viral load fitting with random time-shifted "
                    "deterministic trajectories",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic cohort")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--surrogate", help="surrogate model JSON (else slow MC laws)")
    sim.add_argument("--mu-r0", type=float, default=8.0)
    sim.add_argument("--sigma-r0", type=float, default=0.5)
    sim.add_argument("--mu-delta", type=float, default=1.3)
    sim.add_argument("--sigma-delta", type=float, default=0.15)
    sim.add_argument("--mu-rho", type=float, default=3.0)
    sim.add_argument("--sigma-rho", type=float, default=0.25)
    sim.add_argument("--kappa", type=float, default=0.5)
    sim.add_argument("--eta", type=float, default=2.658)
    sim.set_defaults(func=cmd_simulate)

    tr = sub.add_parser("train-surrogate", help="train the amortized surrogate")
    tr.add_argument("--out", required=True, help="model JSON path")
    tr.add_argument("--seed", type=int, required=True)
    tr.add_argument("--n-train", type=int, default=20_000)
    tr.add_argument("--sims-per-point", type=int, default=10_000)
    tr.add_argument("--survivor-target", type=int, default=18_000)
    tr.add_argument("--bounds", type=float, nargs=6,
                    default=[2.5, 0.6, 1.0, 25.0, 2.4, 9.0],
                    metavar=("R0_LO", "D_LO", "RHO_LO", "R0_HI", "D_HI", "RHO_HI"))
    tr.add_argument("--val-fraction", type=float, default=0.1)
    tr.add_argument("--patience", type=int, default=30)
    tr.add_argument("--max-epochs", type=int, default=2000)
    tr.add_argument("--data-csv", help="reuse a previously exported gg table")
    tr.add_argument("--save-data", help="export the labeled table as CSV")
    tr.set_defaults(func=cmd_train_surrogate)

    fit = sub.add_parser("fit", help="hierarchical MCMC fit")
    fit.add_argument("--data", required=True)
    fit.add_argument("--meta", required=True)
    fit.add_argument("--surrogate")
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int, required=True)
    fit.add_argument("--chains", type=int, default=4)
    fit.add_argument("--iters", type=int, default=100_000)
    fit.add_argument("--burnin", type=int, default=10_000)
    fit.add_argument("--pilot", type=int, default=5_000)
    fit.add_argument("--thin", type=int, default=1)
    fit.add_argument("--jobs", type=int, default=1,
                     help="chains run in this many parallel processes")
    fit.add_argument("--threads-per-chain", type=int, default=0)
    fit.add_argument("--deterministic", action="store_true",
                     help="baseline: no time shift, no extinction factor")
    fit.add_argument("--strict", action="store_true",
                     help="exit nonzero when R-hat exceeds 1.01")
    fit.set_defaults(func=cmd_fit)

    val = sub.add_parser("validate", help="simulation-oracle validation suite")
    val.add_argument("--seed", type=int, required=True)
    val.add_argument("--out", required=True)
    val.add_argument("--r0", type=float, default=8.0)
    val.add_argument("--k", type=float, default=4.0)
    val.add_argument("--delta", type=float, default=1.7)
    val.add_argument("--rho", type=float, default=3.0)
    val.add_argument("--c", type=float, default=10.0)
    val.add_argument("--runs", type=int, default=10_000)
    val.add_argument("--profile-points", type=int, default=25)
    val.set_defaults(func=cmd_validate)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
