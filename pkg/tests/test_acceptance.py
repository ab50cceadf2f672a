"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Estimator-recovery checks compare against the synthetic-population oracle
(true potential outcomes), not against any unverifiable constant.
"""

import math
import time

import numpy as np
import pytest

from helpers import make_dataset, make_record, scored_dataset

from modeshift.config import parse_config
from modeshift.data import FilterConfig, apply_eligibility_filters, serialize_dataset
from modeshift.diagnostics import smd_percent
from modeshift.estimates import EffectEstimate
from modeshift.forest import ForestConfig, estimate_ate_forest, fit_causal_forest, predict_cate
from modeshift.impact import attribution_summary, co2_savings_per_switcher
from modeshift.impute import impute_chained, pool_rubin
from modeshift.logit import fit_logit, predict_proba
from modeshift.pipeline import run_pipeline
from modeshift.psm import bootstrap_inference, estimate_ate_psm, trim_common_support
from modeshift.report import canonical_json
from modeshift.synthdata import (
    calibrated_config,
    generate_population,
    mask_fields,
    mask_missing_mcar,
    true_ate,
)
from test_logit import grid_mle_2param

COVS = (
    "hotel_ratio_informed", "holiday_flat", "train_access", "alone", "family",
    "purpose_nature", "length_of_stay", "distance_car_km", "tt_diff_min",
    "swiss_residence", "car_owner", "half_fare", "age", "woman", "high_income",
)


def _ok(n, msg):
    print(f"\n[acceptance] criterion {n}: PASS — {msg}")


def test_criterion_01_co2_savings():
    savings = co2_savings_per_switcher(165.8, 187.7, 186.4, 12.4)
    assert savings == pytest.approx(57.2, abs=0.05)
    _ok(1, f"CO2 savings {savings:.4f} kg within 0.05 of 57.2")


def test_criterion_02_attribution():
    a = attribution_summary(0.116, 0.413)["attributed_share"]
    b = attribution_summary(0.148, 0.413)["attributed_share"]
    assert a == pytest.approx(0.281, abs=0.001)
    assert b == pytest.approx(0.358, abs=0.001)
    _ok(2, f"attribution {a:.4f} / {b:.4f} within 0.1pp of 28.1% / 35.8%")


def test_criterion_03_balance_arithmetic():
    targets = [
        (0.612, 0.407, 0.29, 70.793),
        (0.908, 0.831, 0.29, 26.524),
        (0.819, 0.710, 0.39, 28.325),
    ]
    values = []
    for mean_t, mean_c, sd_t, expected in targets:
        smd = smd_percent(mean_t, mean_c, sd_t)
        assert smd == pytest.approx(expected, abs=0.5)
        values.append(smd)
    _ok(3, "SMDs " + ", ".join(f"{v:.3f}" for v in values) + " within 0.5 of published rows")


def test_criterion_04_sample_accounting():
    d, _ = generate_population(calibrated_config(n=843, seed=404))
    ids = list(d.ids)
    # 157 records with exactly one missing field, 32 with two: 189 incomplete
    fields = ("age", "woman", "high_income", "car_owner", "tt_diff_min")
    assignments = {f: [] for f in fields}
    for k in range(157):
        assignments[fields[k % 5]].append(ids[k])
    for k in range(157, 189):
        assignments[fields[k % 5]].append(ids[k])
        assignments[fields[(k + 1) % 5]].append(ids[k])
    masked = mask_fields(d, assignments)
    assert sum(r.has_missing() for r in masked) == 189
    out = apply_eligibility_filters(masked, FilterConfig(missing_policy="complete_case"))
    assert len(out) == 654
    _ok(4, "843 records with 189 incomplete -> 654 complete cases")


def test_criterion_05_logit_oracle():
    start = time.perf_counter()
    x = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    y = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 1.0])
    model = fit_logit(x[:, None], y)
    b0, b1 = grid_mle_2param(x, y)
    assert model.coefficients[0] == pytest.approx(b0, abs=1e-3)
    assert model.coefficients[1] == pytest.approx(b1, abs=1e-3)

    labels = np.array([1.0, 0.0, 0.0, 0.0] * 5)
    intercept_only = fit_logit(np.zeros((20, 0)), labels)
    proba = predict_proba(intercept_only, np.zeros((20, 0)))
    assert np.all(np.abs(proba - labels.mean()) < 1e-8)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    _ok(5, f"IRLS matches grid MLE within 1e-3; intercept-only exact; {elapsed:.2f}s")


def test_criterion_06_psm_oracle():
    # 4-unit hand-matched fixture (exhaustive enumeration): ATE = 0.5
    d, scores = scored_dataset([(1, 0.30, 1), (1, 0.60, 1), (0, 0.35, 0), (0, 0.50, 1)])
    assert estimate_ate_psm(d, scores).estimate == 0.5
    # 6-unit fixture with an exact tie (dyadic scores, distances exact in
    # float64): T(0.5) sits 0.25 from both C(0.25) and C(0.75)
    d2, s2 = scored_dataset(
        [(1, 0.5, 1), (1, 0.125, 0), (0, 0.25, 0), (0, 0.75, 1), (0, 0.1875, 1), (1, 0.875, 1)]
    )
    # hand enumeration:
    #   T(0.5,y=1)   -> tie {C(0.25,0), C(0.75,1)} -> diff 1 - 0.5 = 0.5
    #   T(0.125,y=0) -> C(0.1875,1) -> diff -1
    #   T(0.875,y=1) -> C(0.75,1)   -> diff 0
    #   C(0.25,y=0)  -> T(0.125,0)  -> diff 0
    #   C(0.75,y=1)  -> T(0.875,1)  -> diff 0
    #   C(0.1875,y=1)-> T(0.125,0)  -> diff -1
    expected = (0.5 - 1 + 0 + 0 + 0 - 1) / 6
    assert estimate_ate_psm(d2, s2).estimate == expected
    # randomized scores: equality with difference in means within 1e-8
    rng = np.random.default_rng(3)
    spec = [(int(rng.random() < 0.45), 0.37, int(rng.random() < 0.5)) for _ in range(101)]
    d3, s3 = scored_dataset(spec)
    informed = d3.column("informed") == 1
    y = d3.column("used_pt")
    dim = y[informed].mean() - y[~informed].mean()
    assert estimate_ate_psm(d3, s3).estimate == pytest.approx(dim, abs=1e-8)
    _ok(6, "hand-matched fixtures exact; randomized equals difference-in-means within 1e-8")


def test_criterion_07_estimator_recovery_20_seeds():
    start = time.perf_counter()
    truth = true_ate(
        calibrated_config(n=4000, seed=0, confounding="strong", effect="constant"),
        draws=500_000,
    ).value
    n_seeds = 20
    psm_hits = forest_hits = psm_cover = forest_cover = 0
    for k in range(n_seeds):
        seed = 100 + k
        cfg = calibrated_config(n=4000, seed=seed, confounding="strong", effect="constant")
        d, _ = generate_population(cfg)
        psm_est = bootstrap_inference(d, COVS, b=200, seed=seed, workers=2)
        model = fit_causal_forest(d, ForestConfig(num_trees=300, seed=seed), COVS, workers=2)
        forest_est = estimate_ate_forest(model, d, "all")
        psm_hits += abs(psm_est.estimate - truth) <= 0.04
        forest_hits += abs(forest_est.estimate - truth) <= 0.04
        for est, bump in ((psm_est, "psm"), (forest_est, "forest")):
            lo = est.estimate - 1.96 * est.standard_error
            hi = est.estimate + 1.96 * est.standard_error
            if lo <= truth <= hi:
                if bump == "psm":
                    psm_cover += 1
                else:
                    forest_cover += 1
    elapsed = time.perf_counter() - start
    assert psm_hits >= 18, f"psm within +/-0.04 in only {psm_hits}/20 runs"
    assert forest_hits >= 18, f"forest within +/-0.04 in only {forest_hits}/20 runs"
    assert psm_cover >= 17, f"psm 95% CI covered truth in only {psm_cover}/20 runs"
    assert forest_cover >= 17, f"forest 95% CI covered truth in only {forest_cover}/20 runs"
    assert elapsed < 600.0
    _ok(
        7,
        f"recovery {psm_hits}/20 (psm) {forest_hits}/20 (forest); "
        f"coverage {psm_cover}/20, {forest_cover}/20; {elapsed:.0f}s",
    )


def test_criterion_08_heterogeneity():
    # two-group DGP: effect 0.30 for woman==1 (half the population), else 0
    cfg = calibrated_config(n=4000, seed=801, confounding="strong", effect="heterogeneous")
    d, _ = generate_population(cfg)
    model = fit_causal_forest(d, ForestConfig(num_trees=300, seed=801), COVS, workers=2)
    held_cfg = calibrated_config(n=2000, seed=802, confounding="strong", effect="heterogeneous")
    held, _ = generate_population(held_cfg)
    tau_hat = predict_cate(model, held.covariate_matrix(COVS))
    in_effect_group = held.column("woman") == 1
    classified_high = tau_hat > 0.15
    accuracy = float((classified_high == in_effect_group).mean())
    assert accuracy >= 0.80, f"CATE group accuracy {accuracy:.3f} < 0.80"

    # constant positive-effect preset: concentrated, almost exclusively positive CATEs
    cfg2 = calibrated_config(n=4000, seed=803, confounding="strong", effect="constant")
    d2, _ = generate_population(cfg2)
    model2 = fit_causal_forest(d2, ForestConfig(num_trees=300, seed=803), COVS, workers=2)
    share_positive = float((model2.cate_oob > 0).mean())
    q25, q75 = np.quantile(model2.cate_oob, [0.25, 0.75])
    assert share_positive >= 0.90, f"only {share_positive:.3f} of CATEs positive"
    assert q75 - q25 < 0.15, f"CATE IQR {q75 - q25:.3f} not concentrated"
    _ok(8, f"group accuracy {accuracy:.3f}; positive share {share_positive:.3f}; IQR {q75 - q25:.3f}")


def test_criterion_09_overlap_and_trim():
    cfg = calibrated_config(n=900, seed=901, confounding="randomized", effect="constant")
    d, _ = generate_population(cfg)
    model = fit_causal_forest(d, ForestConfig(num_trees=150, seed=901), COVS, e_hat=0.5)
    ate = estimate_ate_forest(model, d, "all").estimate
    ato = estimate_ate_forest(model, d, "overlap").estimate
    assert abs(ate - ato) < 1e-6

    d2, s2 = scored_dataset(
        [(1, 0.95, 1), (1, 0.92, 0), (1, 0.60, 1), (0, 0.90, 1), (0, 0.30, 0)]
    )
    trimmed = trim_common_support(d2, s2)
    assert set(trimmed.filter_log[-1].dropped_ids) == {"u000", "u001"}
    kept = {r.id for r in trimmed}
    mask = np.array([rid in kept for rid in d2.ids])
    again = trim_common_support(trimmed, s2[mask])
    assert again.records == trimmed.records and again.filter_log[-1].count == 0
    _ok(9, f"|ATE-ATO| = {abs(ate - ato):.2e} on randomized data; trim exact and idempotent")


def test_criterion_10_imputation():
    d, _ = generate_population(calibrated_config(n=4000, seed=1001))
    age_mean = d.column("age").mean()
    car_share = d.column("car_owner").mean()
    masked = mask_missing_mcar(d, "age", 0.2, seed=1)
    masked = mask_missing_mcar(masked, "car_owner", 0.2, seed=2)
    completions = impute_chained(masked, m=3, seed=1001)
    worst_age = max(abs(c.column("age").mean() - age_mean) for c in completions)
    worst_car = max(abs(c.column("car_owner").mean() - car_share) for c in completions)
    assert worst_age < 2.0
    assert worst_car < 0.05

    def est(v):
        return EffectEstimate(
            estimate=v, standard_error=0.05, p_value=0.5, estimand="ATE",
            method="psm", n_used=100, seed=1,
        )

    pooled = pool_rubin([est(0.10), est(0.14)])
    assert pooled.estimate == pytest.approx(0.12, abs=1e-12)
    assert pooled.standard_error == pytest.approx(0.0608276253, abs=1e-4)
    _ok(10, f"mask-and-recover age |d|={worst_age:.2f}y car |d|={worst_car:.3f}; Rubin SE exact")


ACCEPT_CFG = """
forest.num_trees = 60
bootstrap.replications = 50
impute.m = 2
stability.enabled = 1
"""


def test_criterion_11_pipeline_determinism(tmp_path):
    cfg = calibrated_config(n=700, seed=1101, confounding="strong", effect="constant")
    d, _ = generate_population(cfg)
    masked = mask_missing_mcar(d, "age", 0.08, seed=3)
    path = tmp_path / "population.csv"
    path.write_text(serialize_dataset(masked))
    pipeline_cfg = parse_config(ACCEPT_CFG)

    outputs = []
    for workers in (1, 1, 2):
        result = run_pipeline(pipeline_cfg, str(path), seed=11, workers=workers, impute=True)
        outputs.append(
            (
                canonical_json(result.report),
                result.balance_csv,
                result.overlap_svg,
                result.cates_svg,
            )
        )
    assert outputs[0] == outputs[1], "re-run changed the report"
    assert outputs[0] == outputs[2], "worker count changed the report"
    report = outputs[0][0]
    assert '"schema_version": 1' in report
    _ok(11, "report bytes identical across repeated runs and worker counts 1/2")
