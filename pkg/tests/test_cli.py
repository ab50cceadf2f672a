import json
import os

import numpy as np
import pytest

from helpers import csv_text, make_record

from modeshift.cli import main
from modeshift.config import default_config_text, parse_config
from modeshift.data import parse_dataset
from modeshift.errors import ValidationError
from modeshift.synthdata import calibrated_config, write_population

FAST_CFG = """
forest.num_trees = 60
bootstrap.replications = 40
impute.m = 2
stability.enabled = 0
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = calibrated_config(n=400, seed=14, confounding="strong", effect="constant")
    write_population(cfg, str(root / "population.csv"), str(root / "oracle.csv"))
    (root / "fast.cfg").write_text(FAST_CFG)
    (root / "stability.cfg").write_text(FAST_CFG.replace("stability.enabled = 0", "stability.enabled = 1"))
    return root


def test_run_pipeline_outputs_and_reconciliation(workdir):
    out = workdir / "run1"
    code = main([
        "run", "--input", str(workdir / "population.csv"), "--out", str(out),
        "--seed", "5", "--config", str(workdir / "fast.cfg"),
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert report["n_input"] == report["n_filtered"] + sum(e["count"] for e in report["filter_log"])
    assert {e["method"] for e in report["estimates"]} == {"psm", "causal_forest"}
    for est in report["estimates"]:
        assert est["seed"] == 5
        assert est["n_used"] == report["n_analysis"]
        assert est["standard_error"] >= 0.0
    assert (out / "balance.csv").exists()
    assert (out / "overlap.svg").exists()
    assert (out / "cates.svg").exists()
    assert report["impact"]["co2_savings_kg_per_switcher"] == pytest.approx(57.15528)


def test_run_deterministic_across_runs_and_workers(workdir):
    args = ["run", "--input", str(workdir / "population.csv"), "--seed", "9",
            "--config", str(workdir / "fast.cfg")]
    outs = []
    for name, workers in (("d1", "1"), ("d2", "1"), ("d3", "2")):
        out = workdir / name
        assert main(args + ["--out", str(out), "--workers", workers]) == 0
        outs.append(out)
    ref = (outs[0] / "report.json").read_bytes()
    for out in outs[1:]:
        assert (out / "report.json").read_bytes() == ref
        assert (out / "balance.csv").read_bytes() == (outs[0] / "balance.csv").read_bytes()
        assert (out / "overlap.svg").read_bytes() == (outs[0] / "overlap.svg").read_bytes()
        assert (out / "cates.svg").read_bytes() == (outs[0] / "cates.svg").read_bytes()


def test_run_with_trim_and_imputation_branch(workdir, tmp_path):
    # mask a few cells so the imputation branch has work to do
    d = parse_dataset((workdir / "population.csv").read_text())
    from modeshift.synthdata import mask_missing_mcar
    from modeshift.data import serialize_dataset

    masked = mask_missing_mcar(d, "age", 0.1, seed=1)
    path = tmp_path / "masked.csv"
    path.write_text(serialize_dataset(masked))
    out = tmp_path / "out"
    code = main([
        "run", "--input", str(path), "--out", str(out), "--seed", "3",
        "--config", str(workdir / "fast.cfg"), "--trim", "--impute",
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["trim"]["applied"] is True
    imp = report["imputation"]
    assert imp["m"] == 2
    assert imp["n"] > report["n_analysis"]  # masked records return in the branch
    assert imp["pooled_psm"]["standard_error"] > 0
    assert imp["pooled_forest"]["method"] == "causal_forest"


def test_run_schema_violation_exits_2_no_partial_report(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,wrong\n1,2\n")
    out = tmp_path / "nothing"
    code = main(["run", "--input", str(bad), "--out", str(out), "--seed", "1"])
    assert code == 2
    assert "parse" in capsys.readouterr().err
    assert not (out / "report.json").exists()


def test_run_estimation_error_exits_3(tmp_path, capsys):
    # holiday_flat replicates the treatment indicator: perfect separation
    rng = np.random.default_rng(0)
    records = [
        make_record(
            f"s{i:03d}", informed=i % 2, holiday_flat=i % 2,
            used_pt=int(rng.random() < 0.3),
            age=float(rng.integers(20, 80)),
            distance_car_km=float(rng.uniform(20, 350)),
            hotel_ratio_informed=float(rng.uniform(0.1, 0.9)),
        )
        for i in range(60)
    ]
    path = tmp_path / "separated.csv"
    path.write_text(csv_text(*records))
    code = main(["run", "--input", str(path), "--out", str(tmp_path / "o"), "--seed", "1"])
    assert code == 3
    assert "logit" in capsys.readouterr().err


def test_filter_subcommand(workdir, tmp_path):
    out = tmp_path / "filtered"
    assert main(["filter", "--input", str(workdir / "population.csv"), "--out", str(out)]) == 0
    log = json.loads((out / "filter_log.json").read_text())
    assert log["n_input"] == 400
    assert log["n_retained"] + sum(r["count"] for r in log["rules"]) == 400
    with open(out / "filtered.csv") as fh:
        assert len(parse_dataset(fh)) == log["n_retained"]


def test_describe_subcommand_stdout(workdir, capsys):
    assert main(["describe", "--input", str(workdir / "population.csv")]) == 0
    payload = json.loads(capsys.readouterr().out)
    fields = {r["field"] for r in payload["rows"]}
    assert "used_pt" in fields and "hotel_ratio_informed" in fields
    assert payload["n_informed"] + payload["n_uninformed"] == 400


def test_estimate_subcommand_methods_and_targets(workdir, tmp_path):
    out = tmp_path / "est.json"
    assert main([
        "estimate", "--input", str(workdir / "population.csv"), "--config", str(workdir / "fast.cfg"),
        "--seed", "2", "--method", "psm", "--out", str(out),
    ]) == 0
    est = json.loads(out.read_text())["estimates"]
    assert len(est) == 1 and est[0]["method"] == "psm"

    assert main([
        "estimate", "--input", str(workdir / "population.csv"), "--config", str(workdir / "fast.cfg"),
        "--seed", "2", "--method", "forest", "--target", "both", "--out", str(out),
    ]) == 0
    est = json.loads(out.read_text())["estimates"]
    assert [e["estimand"] for e in est] == ["ATE", "ATO"]


def test_balance_overlap_stability_subcommands(workdir, tmp_path):
    bal = tmp_path / "balance.csv"
    assert main([
        "balance", "--input", str(workdir / "population.csv"), "--config", str(workdir / "fast.cfg"),
        "--seed", "2", "--out", str(bal),
    ]) == 0
    header = bal.read_text().splitlines()[0]
    assert header.startswith("covariate,mean_treated_before")

    odir = tmp_path / "overlap"
    assert main([
        "overlap", "--input", str(workdir / "population.csv"), "--config", str(workdir / "fast.cfg"),
        "--seed", "2", "--out", str(odir),
    ]) == 0
    rep = json.loads((odir / "overlap.json").read_text())
    assert len(rep["counts_treated"]) == 20
    assert (odir / "overlap.svg").read_text().startswith("<svg")

    stab = tmp_path / "stability.json"
    assert main([
        "stability", "--input", str(workdir / "population.csv"), "--config", str(workdir / "fast.cfg"),
        "--seed", "2", "--field", "half_fare", "--out", str(stab),
    ]) == 0
    payload = json.loads(stab.read_text())
    assert 0.0 <= payload["p_value"] <= 1.0
    assert payload["field"] == "half_fare"


def test_impute_subcommand(workdir, tmp_path):
    from modeshift.data import serialize_dataset
    from modeshift.synthdata import mask_missing_mcar

    d = parse_dataset((workdir / "population.csv").read_text())
    masked = mask_missing_mcar(d, "woman", 0.15, seed=4)
    src = tmp_path / "masked.csv"
    src.write_text(serialize_dataset(masked))
    out = tmp_path / "completions"
    assert main(["impute", "--input", str(src), "--out", str(out), "--seed", "3", "--m", "2"]) == 0
    for i in (1, 2):
        with open(out / f"completion_{i}.csv") as fh:
            completion = parse_dataset(fh)
        assert all(r.woman is not None for r in completion)


def test_simulate_subcommand(tmp_path):
    out = tmp_path / "sim"
    assert main([
        "simulate", "--out", str(out), "--n", "120", "--seed", "8",
        "--effect", "constant", "--confounding", "mild", "--oracle-draws", "100000",
    ]) == 0
    meta = json.loads((out / "true_effect.json").read_text())
    assert meta["true_ate"] == pytest.approx(0.15, abs=0.01)
    with open(out / "population.csv") as fh:
        assert len(parse_dataset(fh)) == 120


def test_impact_subcommand(capsys):
    assert main(["impact", "--ate", "0.116", "--uptake-share", "0.413"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["attributed_share"] == pytest.approx(0.281, abs=0.001)
    assert payload["national_share"] == pytest.approx(57.15528 / 1620.0)


def test_init_config_roundtrips(capsys):
    assert main(["init-config"]) == 0
    text = capsys.readouterr().out
    cfg = parse_config(text)
    assert cfg["forest.num_trees"] == 2000
    assert cfg["bootstrap.replications"] == 999
    assert cfg["filter.max_distance_km"] == 400.0


def test_config_rejects_unknown_keys():
    with pytest.raises(ValidationError, match="unknown key"):
        parse_config("no.such.key = 1\n")
    with pytest.raises(ValidationError, match="expected key"):
        parse_config("just some text\n")
    cfg = parse_config("filter.max_distance_km = inf\n# comment\n\nforest.mtry = 4\n")
    assert cfg["filter.max_distance_km"] == float("inf")
    assert cfg.forest_config(0).mtry == 4


def test_run_randomized_oracle_recovery(tmp_path):
    # pipeline estimates recover the known effect of a randomized population
    from modeshift.synthdata import calibrated_config as cc, true_ate

    cfg = cc(n=2500, seed=33, confounding="randomized", effect="constant")
    truth = true_ate(cfg, draws=200_000).value
    write_population(cfg, str(tmp_path / "pop.csv"), str(tmp_path / "oracle.csv"))
    (tmp_path / "cfg.txt").write_text(
        "forest.num_trees = 150\nbootstrap.replications = 100\nstability.enabled = 0\n"
    )
    out = tmp_path / "out"
    assert main([
        "run", "--input", str(tmp_path / "pop.csv"), "--out", str(out),
        "--seed", "7", "--config", str(tmp_path / "cfg.txt"), "--workers", "2",
    ]) == 0
    report = json.loads((out / "report.json").read_text())
    checked = 0
    for est in report["estimates"]:
        if est["estimand"] == "ATE":
            assert abs(est["estimate"] - truth) <= 0.04, est
            checked += 1
    assert checked == 2  # psm + forest


def test_run_target_flag_limits_forest_estimates(workdir, tmp_path):
    out = tmp_path / "target"
    assert main([
        "run", "--input", str(workdir / "population.csv"), "--out", str(out),
        "--seed", "5", "--config", str(workdir / "fast.cfg"),
        "--method", "forest", "--target", "overlap",
    ]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [e["estimand"] for e in report["estimates"]] == ["ATO"]


def test_config_file_errors_exit_2(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("definitely.unknown = 1\n")
    code = main([
        "run", "--input", str(workdir / "population.csv"), "--out", str(tmp_path / "x"),
        "--seed", "1", "--config", str(bad),
    ])
    assert code == 2
