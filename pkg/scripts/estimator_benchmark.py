#!/usr/bin/env python3
"""Bias / RMSE / coverage benchmark for the two estimators across seeds.

For each seed: draw a fresh population from the chosen preset, estimate the
ATE by propensity matching (bootstrap CI) and by the causal forest (AIPW CI),
and score both against the oracle effect.

Usage: python scripts/estimator_benchmark.py [--seeds 20] [--n 4000] [--confounding strong]
"""

import argparse
import time

import numpy as np

from modeshift.data import usable_covariates
from modeshift.forest import ForestConfig, estimate_ate_forest, fit_causal_forest
from modeshift.psm import bootstrap_inference
from modeshift.synthdata import calibrated_config, generate_population, true_ate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--confounding", default="strong", choices=("randomized", "mild", "strong"))
    ap.add_argument("--trees", type=int, default=300)
    ap.add_argument("--bootstrap", type=int, default=200)
    ap.add_argument("--workers", type=int, default=2)
    args = ap.parse_args()

    truth = true_ate(
        calibrated_config(n=args.n, seed=0, confounding=args.confounding, effect="constant"),
        draws=500_000,
    ).value
    print(f"true ATE {truth:.4f}; {args.seeds} seeds at n={args.n} ({args.confounding})")

    rows = {"psm": [], "forest": []}
    start = time.time()
    for k in range(args.seeds):
        seed = 100 + k
        cfg = calibrated_config(n=args.n, seed=seed, confounding=args.confounding, effect="constant")
        d, _ = generate_population(cfg)
        covs, _ = usable_covariates(d)
        psm_est = bootstrap_inference(d, covs, b=args.bootstrap, seed=seed, workers=args.workers)
        model = fit_causal_forest(d, ForestConfig(num_trees=args.trees, seed=seed), covs, workers=args.workers)
        forest_est = estimate_ate_forest(model, d, "all")
        for name, est in (("psm", psm_est), ("forest", forest_est)):
            covered = est.estimate - 1.96 * est.standard_error <= truth <= est.estimate + 1.96 * est.standard_error
            rows[name].append((est.estimate - truth, covered))
        print(f"  seed {seed}: psm {psm_est.estimate:+.4f}  forest {forest_est.estimate:+.4f}")

    print(f"\n{time.time() - start:.0f}s elapsed")
    print(f"{'method':<10}{'bias':>9}{'sd':>9}{'rmse':>9}{'max|e|':>9}{'cover':>8}")
    for name, result in rows.items():
        errs = np.array([e for e, _ in result])
        cover = np.mean([c for _, c in result])
        print(
            f"{name:<10}{errs.mean():>+9.4f}{errs.std():>9.4f}"
            f"{np.sqrt((errs**2).mean()):>9.4f}{np.abs(errs).max():>9.4f}{cover:>8.2f}"
        )


if __name__ == "__main__":
    main()
