import math

import numpy as np
import pytest

from helpers import make_dataset, make_record

from modeshift.errors import ValidationError
from modeshift.estimates import EffectEstimate
from modeshift.impute import impute_chained, pool_rubin
from modeshift.synthdata import calibrated_config, generate_population, mask_missing_mcar


def _estimate(value, se, method="psm", estimand="ATE", n=100, seed=1):
    return EffectEstimate(
        estimate=value, standard_error=se, p_value=0.5, estimand=estimand,
        method=method, n_used=n, seed=seed,
    )


def test_no_missing_returns_identical_copies():
    d, _ = generate_population(calibrated_config(n=50, seed=3))
    completions = impute_chained(d, m=4, seed=7)
    assert len(completions) == 4
    for c in completions:
        assert c.records == d.records


def test_mask_and_recover_age_mean():
    d, _ = generate_population(calibrated_config(n=4000, seed=11))
    true_mean = d.column("age").mean()
    masked = mask_missing_mcar(d, "age", 0.2, seed=5)
    assert sum(r.age is None for r in masked) == 800
    completions = impute_chained(masked, m=3, seed=9)
    for c in completions:
        col = c.column("age")
        assert not np.isnan(col).any()
        assert abs(col.mean() - true_mean) < 2.0


def test_mask_and_recover_binary_share():
    d, _ = generate_population(calibrated_config(n=4000, seed=13))
    true_share = d.column("car_owner").mean()
    masked = mask_missing_mcar(d, "car_owner", 0.2, seed=6)
    completions = impute_chained(masked, m=3, seed=10)
    for c in completions:
        col = c.column("car_owner")
        assert set(np.unique(col)) <= {0.0, 1.0}
        assert abs(col.mean() - true_share) < 0.05


def test_observed_cells_never_change():
    d, _ = generate_population(calibrated_config(n=600, seed=17))
    masked = mask_missing_mcar(d, "tt_diff_min", 0.3, seed=2)
    completions = impute_chained(masked, m=3, seed=4)
    for c in completions:
        for before, after in zip(masked.records, c.records):
            for name in ("age", "woman", "high_income", "car_owner", "tt_diff_min"):
                v = getattr(before, name)
                if v is not None:
                    assert getattr(after, name) == v
            assert after.used_pt == before.used_pt


def test_determinism_and_chain_variation():
    d, _ = generate_population(calibrated_config(n=500, seed=19))
    masked = mask_missing_mcar(d, "age", 0.25, seed=3)
    a = impute_chained(masked, m=2, seed=42)
    b = impute_chained(masked, m=2, seed=42)
    for x, y in zip(a, b):
        assert x.records == y.records
    # chains differ from each other on imputed cells
    assert a[0].records != a[1].records


def test_impute_validations():
    records = [make_record(f"r{i}", age=None) for i in range(10)]
    with pytest.raises(ValidationError, match="age"):
        impute_chained(make_dataset(*records), m=2, seed=0)
    half = [make_record(f"h{i}", age=None if i < 6 else 50.0) for i in range(10)]
    with pytest.raises(ValidationError, match="50%"):
        impute_chained(make_dataset(*half), m=2, seed=0)


def test_pool_rubin_hand_arithmetic():
    pooled = pool_rubin([_estimate(0.10, 0.05), _estimate(0.14, 0.05)])
    assert pooled.estimate == pytest.approx(0.12, abs=1e-12)
    # variance = 0.0025 + 1.5 * 0.0008 = 0.0037
    assert pooled.standard_error == pytest.approx(math.sqrt(0.0037), abs=1e-4)
    assert pooled.standard_error == pytest.approx(0.0608276253, abs=1e-4)
    assert pooled.method == "psm" and pooled.estimand == "ATE"


def test_pool_rubin_zero_between_variance():
    pooled = pool_rubin([_estimate(0.12, 0.04)] * 3)
    assert pooled.estimate == pytest.approx(0.12)
    assert pooled.standard_error == pytest.approx(0.04, abs=1e-12)


def test_pool_rubin_se_at_least_within_component():
    parts = [_estimate(0.10, 0.05), _estimate(0.18, 0.03), _estimate(0.05, 0.06)]
    pooled = pool_rubin(parts)
    within = math.sqrt(np.mean([e.standard_error**2 for e in parts]))
    assert pooled.standard_error >= within


def test_pool_rubin_rejects_mixed_labels():
    with pytest.raises(ValidationError, match="mixed"):
        pool_rubin([_estimate(0.1, 0.05, method="psm"), _estimate(0.1, 0.05, method="causal_forest")])
    with pytest.raises(ValidationError, match="mixed"):
        pool_rubin([_estimate(0.1, 0.05, estimand="ATE"), _estimate(0.1, 0.05, estimand="ATO")])
    with pytest.raises(ValidationError):
        pool_rubin([_estimate(0.1, 0.05)])
