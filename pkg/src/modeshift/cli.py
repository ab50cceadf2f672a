"""Command-line interface; each analysis stage is independently invokable.

Exit codes: 0 success, 2 validation error (schema/config/input), 3 estimation
error (separation, degenerate groups, forest preconditions).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import diagnostics, impact as impact_mod, psm, report
from .config import default_config_text, load_config
from .data import (
    ESTIMATION_COVARIATES,
    apply_eligibility_filters,
    filter_log_json,
    parse_dataset,
    serialize_dataset,
    summarize_by_treatment,
    usable_covariates,
)
from .errors import EstimationError, ModeShiftError, ValidationError
from .forest import estimate_ate_forest, fit_causal_forest, oob_cate
from .impute import impute_chained
from .logit import fit_logit, predict_proba
from .pipeline import StageFailure, run_pipeline, write_outputs
from .synthdata import calibrated_config, true_ate, write_population

log = logging.getLogger("modeshift")


def _read_dataset(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_dataset(fh, provenance=os.path.basename(path))


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _scores(dataset, cfg):
    covs, dropped = usable_covariates(dataset, cfg.covariate_list() or ESTIMATION_COVARIATES)
    X = dataset.covariate_matrix(covs)
    model = fit_logit(X, dataset.column("informed"), covs, tol=cfg["logit.tolerance"], max_iter=cfg["logit.max_iterations"])
    return covs, model, predict_proba(model, X)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_pipeline(
        cfg,
        args.input,
        seed=args.seed,
        workers=args.workers,
        method=args.method,
        target=args.target,
        trim=True if args.trim else None,
        impute=True if args.impute else None,
    )
    write_outputs(result, args.out)
    log.info("report written to %s", os.path.join(args.out, "report.json"))
    return 0


def _cmd_filter(args) -> int:
    cfg = load_config(args.config)
    d = _read_dataset(args.input)
    filtered = apply_eligibility_filters(d, cfg.filter_config())
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "filtered.csv"), serialize_dataset(filtered))
    _write(
        os.path.join(args.out, "filter_log.json"),
        report.canonical_json({"n_input": len(d), "n_retained": len(filtered), "rules": filter_log_json(filtered)}),
    )
    log.info("retained %d of %d records", len(filtered), len(d))
    return 0


def _cmd_describe(args) -> int:
    d = _read_dataset(args.input)
    summary = summarize_by_treatment(d)
    payload = {
        "n_informed": summary.n_informed,
        "n_uninformed": summary.n_uninformed,
        "rows": [
            {
                "field": r.field,
                "mean_informed": r.mean_informed,
                "sd_informed": r.sd_informed,
                "n_informed": r.n_informed,
                "mean_uninformed": r.mean_uninformed,
                "sd_uninformed": r.sd_uninformed,
                "n_uninformed": r.n_uninformed,
            }
            for r in summary.rows
        ],
    }
    text = report.canonical_json(payload)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    d = _read_dataset(args.input).complete_cases()
    covs, _model, scores = _scores(d, cfg)
    estimates = []
    data_psm, scores_psm = d, scores
    if args.trim:
        data_psm = psm.trim_common_support(d, scores)
        kept = set(data_psm.ids)
        scores_psm = scores[np.array([rid in kept for rid in d.ids])]
    if args.method in ("psm", "both"):
        estimates.append(
            psm.bootstrap_inference(
                data_psm, covs, b=cfg["bootstrap.replications"], seed=args.seed, workers=args.workers
            ).to_dict()
        )
    if args.method in ("forest", "both"):
        model = fit_causal_forest(d, cfg.forest_config(args.seed), covs, workers=args.workers)
        targets = ("all", "overlap") if args.target == "both" else (args.target,)
        for target in targets:
            estimates.append(estimate_ate_forest(model, d, target).to_dict())
    text = report.canonical_json({"estimates": estimates})
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_balance(args) -> int:
    cfg = load_config(args.config)
    d = _read_dataset(args.input).complete_cases()
    covs, _model, scores = _scores(d, cfg)
    weights = psm.match_details(d, scores).weights
    rows = diagnostics.balance_table(d, covs, weights)
    text = report.balance_csv(rows)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_overlap(args) -> int:
    cfg = load_config(args.config)
    d = _read_dataset(args.input).complete_cases()
    _covs, _model, scores = _scores(d, cfg)
    rep = diagnostics.overlap_report(scores, d.column("informed"), bins=cfg["overlap.bins"])
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "overlap.json"), report.canonical_json(rep.to_dict()))
    _write(os.path.join(args.out, "overlap.svg"), report.overlap_svg(rep))
    return 0


def _cmd_stability(args) -> int:
    cfg = load_config(args.config)
    d = _read_dataset(args.input).complete_cases()
    fieldname = args.field or cfg["stability.field"]
    covs, _ = usable_covariates(d, cfg.covariate_list() or ESTIMATION_COVARIATES)
    mask = d.column(fieldname) == 1
    result = diagnostics.subsample_stability_check(d, mask, cfg.forest_config(args.seed), covs, workers=args.workers)
    text = report.canonical_json(
        {
            "field": fieldname,
            "n_subgroup": result.n_subgroup,
            "mean_difference": result.mean_difference,
            "p_value": result.p_value,
        }
    )
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_impute(args) -> int:
    cfg = load_config(args.config)
    d = _read_dataset(args.input)
    m = args.m or cfg["impute.m"]
    completions = impute_chained(d, m=m, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i, completion in enumerate(completions, start=1):
        _write(os.path.join(args.out, f"completion_{i}.csv"), serialize_dataset(completion))
    log.info("wrote %d completions to %s", m, args.out)
    return 0


def _cmd_simulate(args) -> int:
    cfg = calibrated_config(n=args.n, seed=args.seed, confounding=args.confounding, effect=args.effect)
    os.makedirs(args.out, exist_ok=True)
    write_population(cfg, os.path.join(args.out, "population.csv"), os.path.join(args.out, "oracle.csv"))
    oracle = true_ate(cfg, draws=args.oracle_draws)
    _write(
        os.path.join(args.out, "true_effect.json"),
        report.canonical_json({"true_ate": oracle.value, "mc_se": oracle.mc_se, "draws": oracle.draws}),
    )
    log.info("population.csv + oracle.csv written; true ATE %.4f (MC se %.5f)", oracle.value, oracle.mc_se)
    return 0


def _cmd_impact(args) -> int:
    cfg = load_config(args.config)
    savings = impact_mod.co2_savings_per_switcher(
        cfg["impact.avg_distance_car_km"],
        cfg["impact.avg_distance_pt_km"],
        cfg["impact.ef_car_g_per_pkm"],
        cfg["impact.ef_pt_g_per_pkm"],
    )
    summary = impact_mod.attribution_summary(
        args.ate, args.uptake_share, savings, cfg["impact.per_capita_transport_kg"]
    )
    text = report.canonical_json(
        {
            "ate": args.ate,
            "uptake_share": args.uptake_share,
            "co2_savings_kg_per_switcher": savings,
            "attributed_share": summary["attributed_share"],
            "national_share": summary["national_share"],
        }
    )
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_init_config(args) -> int:
    text = default_config_text()
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modeshift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, input_required=True, out_kind=None, seed=True, workers=False, config=True):
        if config:
            p.add_argument("--config", help="flat key=value config file")
        if input_required:
            p.add_argument("--input", required=True, help="survey CSV")
        if out_kind == "dir":
            p.add_argument("--out", required=True, help="output directory")
        elif out_kind == "file":
            p.add_argument("--out", help="output file (stdout when omitted)")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if workers:
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("run", help="full pipeline: CSV to report")
    common(p, out_kind="dir", workers=True)
    p.add_argument("--method", choices=("psm", "forest", "both"), default="both")
    p.add_argument("--target", choices=("all", "overlap", "both"), default="both",
                   help="forest target population(s) to report")
    p.add_argument("--trim", action="store_true", help="trim treated units beyond control support")
    p.add_argument("--impute", action="store_true", help="add the multiple-imputation branch")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("filter", help="apply eligibility filters")
    common(p, out_kind="dir", seed=False)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("describe", help="per-group descriptive statistics")
    common(p, out_kind="file", seed=False, config=False)
    p.set_defaults(func=_cmd_describe)

    p = sub.add_parser("estimate", help="PSM and/or forest effect estimates")
    common(p, out_kind="file", workers=True)
    p.add_argument("--method", choices=("psm", "forest", "both"), default="both")
    p.add_argument("--target", choices=("all", "overlap", "both"), default="all")
    p.add_argument("--trim", action="store_true")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("balance", help="before/after matching balance table")
    common(p, out_kind="file")
    p.set_defaults(func=_cmd_balance)

    p = sub.add_parser("overlap", help="propensity-score overlap report")
    common(p, out_kind="dir")
    p.set_defaults(func=_cmd_overlap)

    p = sub.add_parser("stability", help="full-vs-subgroup forest stability check")
    common(p, out_kind="file", workers=True)
    p.add_argument("--field", help="binary column defining the subgroup (default from config)")
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("impute", help="write chained-equation completions")
    common(p, out_kind="dir")
    p.add_argument("--m", type=int, help="number of completions (default from config)")
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("simulate", help="generate a synthetic population + oracle")
    common(p, input_required=False, out_kind="dir", config=False)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--confounding", choices=("randomized", "mild", "strong"), default="strong")
    p.add_argument("--effect", choices=("null", "constant", "heterogeneous"), default="constant")
    p.add_argument("--oracle-draws", type=int, default=1_000_000)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("impact", help="CO2 and attribution arithmetic")
    common(p, input_required=False, out_kind="file", seed=False)
    p.add_argument("--ate", type=float, required=True)
    p.add_argument("--uptake-share", type=float, required=True)
    p.set_defaults(func=_cmd_impact)

    p = sub.add_parser("init-config", help="print the default config file")
    common(p, input_required=False, out_kind="file", seed=False, config=False)
    p.set_defaults(func=_cmd_init_config)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 3 if isinstance(exc.cause, EstimationError) else 2
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ModeShiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
