"""Full analysis pipeline: CSV in, report.json + tables + plots out.

Stage order mirrors the study flow: eligibility filters, descriptives,
propensity logit, overlap check, matched estimate with bootstrap inference,
causal forest (equal and overlap weighting), balance table, subsample
stability check, optional multiple-imputation branch, impact accounting.
Outputs are written only after every enabled stage succeeded, so a failing
run leaves no partial report. For a fixed seed the report bytes are identical
across runs and worker counts.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import diagnostics, impact, psm, report
from .config import PipelineConfig
from .data import (
    ESTIMATION_COVARIATES,
    Dataset,
    apply_eligibility_filters,
    filter_log_json,
    parse_dataset,
    summarize_by_treatment,
    usable_covariates,
)
from .errors import EmptyGroupError, ModeShiftError, ValidationError
from .forest import estimate_ate_forest, fit_causal_forest
from .impute import impute_chained, pool_rubin
from .logit import fit_logit, predict_proba


class StageFailure(ModeShiftError):
    """Wraps a stage error with the stage name; exit codes map from `cause`."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage}: {cause}")


def _stage(name: str):
    def deco(fn):
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageFailure:
                raise
            except Exception as exc:
                raise StageFailure(name, exc) from exc

        return wrapped

    return deco


@dataclass
class PipelineResult:
    report: dict
    balance_csv: str
    overlap_svg: str
    cates_svg: str | None


def _scores_for(dataset: Dataset, covariates, tol, max_iter):
    X = dataset.covariate_matrix(covariates)
    model = fit_logit(X, dataset.column("informed"), covariates, tol=tol, max_iter=max_iter)
    return model, predict_proba(model, X)


@_stage("imputation")
def _imputation_branch(parsed, cfg: PipelineConfig, covariates, seed, workers) -> dict:
    filter_cfg = cfg.filter_config()
    from dataclasses import replace as dc_replace

    passthrough = dc_replace(filter_cfg, missing_policy="pass_through")
    base = apply_eligibility_filters(parsed, passthrough)
    m = cfg["impute.m"]
    completions = impute_chained(base, m=m, seed=seed)
    psm_parts, forest_parts = [], []
    for completion in completions:
        covs, _ = usable_covariates(completion, covariates)
        psm_parts.append(
            psm.bootstrap_inference(
                completion, covs, b=cfg["bootstrap.replications"], seed=seed, workers=workers
            )
        )
        model = fit_causal_forest(completion, cfg.forest_config(seed), covs, workers=workers)
        forest_parts.append(estimate_ate_forest(model, completion, "all"))
    return {
        "m": m,
        "n": len(base),
        "pooled_psm": pool_rubin(psm_parts).to_dict(),
        "pooled_forest": pool_rubin(forest_parts).to_dict(),
    }


def run_pipeline(
    cfg: PipelineConfig,
    input_path: str,
    seed: int,
    workers: int = 1,
    method: str = "both",
    target: str = "both",
    trim: bool | None = None,
    impute: bool | None = None,
) -> PipelineResult:
    """Execute every enabled stage and assemble the deterministic report."""
    if method not in ("psm", "forest", "both"):
        raise StageFailure("setup", ValidationError(f"unknown method {method!r}"))
    if target not in ("all", "overlap", "both"):
        raise StageFailure("setup", ValidationError(f"unknown target {target!r}"))
    trim = cfg["psm.trim"] if trim is None else trim
    impute = cfg["impute.enabled"] if impute is None else impute
    run_psm = method in ("psm", "both")
    run_forest = method in ("forest", "both")

    def _parse():
        with open(input_path, "r", encoding="utf-8") as fh:
            return parse_dataset(fh, provenance=os.path.basename(input_path))

    parsed = _stage("parse")(_parse)()

    filtered = _stage("filter")(lambda: apply_eligibility_filters(parsed, cfg.filter_config()))()
    analysis = filtered.complete_cases()
    if len(analysis) == 0:
        raise StageFailure("filter", ValidationError("no records left after filtering"))

    summary = _stage("descriptives")(lambda: summarize_by_treatment(analysis))()

    configured = cfg.covariate_list()
    covs, dropped_covs = usable_covariates(analysis, configured or ESTIMATION_COVARIATES)
    if not covs:
        raise StageFailure("covariates", ValidationError("no usable covariates"))

    logit_stage = _stage("logit")(
        lambda: _scores_for(analysis, covs, cfg["logit.tolerance"], cfg["logit.max_iterations"])
    )
    logit_model, scores = logit_stage()

    overlap_stage = _stage("overlap")(
        lambda: diagnostics.overlap_report(scores, analysis.column("informed"), bins=cfg["overlap.bins"])
    )
    overlap = overlap_stage()

    # PSM branch operates on the (optionally trimmed) sample.
    psm_data, psm_scores, trim_info = analysis, scores, None
    if trim:
        trim_stage = _stage("trim")(lambda: psm.trim_common_support(analysis, scores))
        psm_data = trim_stage()
        kept = set(psm_data.ids)
        keep_mask = np.array([rid in kept for rid in analysis.ids])
        psm_scores = scores[keep_mask]
        trim_info = {"applied": True, "dropped": int(len(analysis) - len(psm_data))}

    estimates = []
    match_weights = None
    if run_psm:
        psm_stage = _stage("psm")(
            lambda: psm.bootstrap_inference(
                psm_data, covs, b=cfg["bootstrap.replications"], seed=seed, workers=workers
            )
        )
        psm_estimate = psm_stage()
        estimates.append(psm_estimate.to_dict())
        match_weights = _stage("psm")(lambda: psm.match_details(psm_data, psm_scores))().weights

    cates = None
    forest_model = None
    if run_forest:
        forest_stage = _stage("forest")(
            lambda: fit_causal_forest(analysis, cfg.forest_config(seed), covs, workers=workers)
        )
        forest_model = forest_stage()
        targets = ("all", "overlap") if target == "both" else (target,)
        for t in targets:
            estimates.append(estimate_ate_forest(forest_model, analysis, t).to_dict())
        from .forest import oob_cate

        cates = oob_cate(forest_model, analysis)

    balance_stage = _stage("balance")(
        lambda: diagnostics.balance_table(psm_data if match_weights is not None else analysis, covs, match_weights)
    )
    balance_rows = balance_stage()

    stability_info = None
    if cfg["stability.enabled"] and run_forest:
        fieldname = cfg["stability.field"]

        def _run_stability():
            mask = analysis.column(fieldname) == 1
            result = diagnostics.subsample_stability_check(
                analysis, mask, cfg.forest_config(seed), covs, workers=workers
            )
            return {
                "field": fieldname,
                "n_subgroup": result.n_subgroup,
                "mean_difference": result.mean_difference,
                "p_value": result.p_value,
                "max_abs_difference": float(np.max(np.abs(result.differences))),
            }

        stability_info = _stage("stability")(_run_stability)()

    imputation_info = None
    if impute:
        imputation_info = _imputation_branch(parsed, cfg, configured or ESTIMATION_COVARIATES, seed, workers)

    def _run_impact():
        savings = impact.co2_savings_per_switcher(
            cfg["impact.avg_distance_car_km"],
            cfg["impact.avg_distance_pt_km"],
            cfg["impact.ef_car_g_per_pkm"],
            cfg["impact.ef_pt_g_per_pkm"],
        )
        uptake = cfg.uptake_share()
        if uptake is None:
            informed = analysis.column("informed") == 1
            if not informed.any():
                raise EmptyGroupError("informed")
            uptake = float(analysis.column("used_offer")[informed].mean())
        per_method = {}
        for est in estimates:
            if est["estimand"] != "ATE":
                continue
            if uptake > 0:
                summary_ = impact.attribution_summary(
                    est["estimate"], uptake, savings, cfg["impact.per_capita_transport_kg"]
                )
            else:
                summary_ = {"attributed_share": None, "national_share": None}
            per_method[est["method"]] = summary_
        return {
            "co2_savings_kg_per_switcher": savings,
            "uptake_share": uptake,
            "per_method": per_method,
        }

    impact_info = _stage("impact")(_run_impact)()

    report_dict = {
        "schema_version": 1,
        "seed": seed,
        "input": os.path.basename(input_path),
        "n_input": len(parsed),
        "n_filtered": len(filtered),
        "n_analysis": len(analysis),
        "filter_log": filter_log_json(filtered),
        "descriptives": {
            "n_informed": summary.n_informed,
            "n_uninformed": summary.n_uninformed,
            "rows": [
                {
                    "field": r.field,
                    "mean_informed": _nan_null(r.mean_informed),
                    "sd_informed": _nan_null(r.sd_informed),
                    "n_informed": r.n_informed,
                    "mean_uninformed": _nan_null(r.mean_uninformed),
                    "sd_uninformed": _nan_null(r.sd_uninformed),
                    "n_uninformed": r.n_uninformed,
                }
                for r in summary.rows
            ],
        },
        "covariates": {"used": list(covs), "dropped_zero_variance": list(dropped_covs)},
        "logit": {
            "coefficients": {
                name: float(v)
                for name, v in zip(("(intercept)",) + logit_model.covariates, logit_model.coefficients)
            },
            "converged": logit_model.converged,
            "log_likelihood": logit_model.log_likelihood,
            "iterations": logit_model.n_iterations,
        },
        "overlap": overlap.to_dict(),
        "trim": trim_info,
        "estimates": estimates,
        "balance": report.balance_rows_json(balance_rows),
        "stability": stability_info,
        "imputation": imputation_info,
        "impact": impact_info,
    }
    if cates is not None:
        report_dict["cate_summary"] = {
            "share_positive": float((cates > 0).mean()),
            "quartiles": [float(q) for q in np.quantile(cates, [0.25, 0.5, 0.75])],
        }

    return PipelineResult(
        report=report_dict,
        balance_csv=report.balance_csv(balance_rows),
        overlap_svg=report.overlap_svg(overlap),
        cates_svg=report.cate_svg(cates) if cates is not None else None,
    )


def _nan_null(v: float):
    return None if isinstance(v, float) and math.isnan(v) else v


def write_outputs(result: PipelineResult, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="") as fh:
        fh.write(report.canonical_json(result.report))
    with open(os.path.join(out_dir, "balance.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(result.balance_csv)
    with open(os.path.join(out_dir, "overlap.svg"), "w", encoding="utf-8", newline="") as fh:
        fh.write(result.overlap_svg)
    if result.cates_svg is not None:
        with open(os.path.join(out_dir, "cates.svg"), "w", encoding="utf-8", newline="") as fh:
            fh.write(result.cates_svg)
