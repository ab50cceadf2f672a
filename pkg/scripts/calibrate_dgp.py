#!/usr/bin/env python3
"""Tune the synthetic-population presets against the survey's moments.

Solves, by coordinate iteration on large simulated samples:
  * treat_intercept   -> treated share near the target
  * outcome_intercept -> uninformed-group outcome mean near 0.22
  * effect_base       -> true ATE near 0.15
then reports the informed-group outcome mean (target 0.44 +/- 0.02), which is
determined by the confounder slopes. The resulting constants are frozen into
modeshift.synthdata._CALIBRATION.

Usage: python scripts/calibrate_dgp.py [--n 400000] [--confounding strong]
"""

import argparse
from dataclasses import replace

import numpy as np

from modeshift.synthdata import calibrated_config, generate_population, true_ate


def moments(cfg, n=400_000):
    d, _ = generate_population(replace(cfg, n=n))
    informed = d.column("informed") == 1
    y = d.column("used_pt")
    return {
        "share": float(informed.mean()),
        "y_informed": float(y[informed].mean()),
        "y_uninformed": float(y[~informed].mean()),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=400_000)
    ap.add_argument("--confounding", default="strong")
    ap.add_argument("--share-target", type=float, default=0.72)
    ap.add_argument("--rounds", type=int, default=6)
    args = ap.parse_args()

    cfg = calibrated_config(n=args.n, seed=20240501, confounding=args.confounding, effect="constant")
    for it in range(args.rounds):
        mom = moments(cfg, args.n)
        ate = true_ate(cfg, draws=400_000)
        print(
            f"round {it}: share={mom['share']:.4f} yT={mom['y_informed']:.4f} "
            f"yC={mom['y_uninformed']:.4f} ate={ate.value:.4f} | "
            f"t_int={cfg.treat_intercept:.4f} o_int={cfg.outcome_intercept:.4f} "
            f"eff={cfg.effect_base:.4f}"
        )
        # Logit-scale corrections, damped.
        d_t = np.log(args.share_target / (1 - args.share_target)) - np.log(mom["share"] / (1 - mom["share"]))
        d_o = np.log(0.22 / 0.78) - np.log(mom["y_uninformed"] / (1 - mom["y_uninformed"]))
        d_e = (0.15 - ate.value) / max(ate.value, 1e-6) * cfg.effect_base * 0.9
        cfg = replace(
            cfg,
            treat_intercept=cfg.treat_intercept + 0.9 * d_t,
            outcome_intercept=cfg.outcome_intercept + 0.9 * d_o,
            effect_base=cfg.effect_base + d_e,
        )
    mom = moments(cfg, args.n)
    ate = true_ate(cfg, draws=1_000_000)
    print(
        f"final: share={mom['share']:.4f} yT={mom['y_informed']:.4f} "
        f"yC={mom['y_uninformed']:.4f} ate={ate.value:.4f} (+/- {ate.mc_se:.5f})"
    )
    print(
        f"constants: treat_intercept={cfg.treat_intercept:.4f} "
        f"outcome_intercept={cfg.outcome_intercept:.4f} effect_base={cfg.effect_base:.4f}"
    )


if __name__ == "__main__":
    main()
