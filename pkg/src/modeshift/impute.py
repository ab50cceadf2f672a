"""Chained-equations imputation of missing covariates and Rubin pooling.

Incomplete fields are swept in a fixed order (age, tt_diff_min, car_owner,
woman, high_income): continuous fields by predictive-mean matching with 5
donors, binary fields by logistic draws, 10 burn-in sweeps per chain.
Observed cells are never modified. Chains run on independent RNG streams
keyed by (seed, chain index).
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data import NULLABLE_FIELDS, NUMERIC_FIELDS, Dataset
from .errors import EstimationError, ValidationError
from .estimates import EffectEstimate
from .logit import fit_logit, predict_proba

SWEEP_ORDER = ("age", "tt_diff_min", "car_owner", "woman", "high_income")
_CONTINUOUS = ("age", "tt_diff_min")
PMM_DONORS = 5
BURN_IN_SWEEPS = 10

# Predictors for the imputation models: every other analysis variable,
# treatment and outcome included (zero-variance columns drop out per sweep).
_PREDICTOR_FIELDS = tuple(
    f for f in NUMERIC_FIELDS if f not in ("used_offer", "aware_at_booking", "adjusted_stay")
)


def _pmm_impute(x_obs, yhat_obs, yhat_mis, rng) -> np.ndarray:
    """Predictive-mean matching: draw each missing value from the observed
    values of its PMM_DONORS nearest predictions."""
    k = min(PMM_DONORS, len(x_obs))
    dist = np.abs(yhat_obs[None, :] - yhat_mis[:, None])
    donors = np.argpartition(dist, k - 1, axis=1)[:, :k]
    # argpartition order is arbitrary within the donor pool; sort for determinism
    donors = np.sort(donors, axis=1)
    pick = rng.integers(0, k, size=len(yhat_mis))
    return x_obs[donors[np.arange(len(yhat_mis)), pick]]


def _design(columns: dict[str, np.ndarray], exclude: str) -> tuple[np.ndarray, list[str]]:
    names = []
    cols = []
    for name in _PREDICTOR_FIELDS:
        if name == exclude:
            continue
        col = columns[name]
        if np.all(col == col[0]):
            continue
        names.append(name)
        cols.append(col)
    return np.column_stack(cols), names


def _sweep_field(columns, name, observed, rng):
    mis = ~observed[name]
    if not mis.any():
        return
    X, _names = _design(columns, name)
    y = columns[name]
    obs = observed[name]
    if name in _CONTINUOUS:
        design = np.column_stack([np.ones(obs.sum()), X[obs]])
        beta, *_ = np.linalg.lstsq(design, y[obs], rcond=None)
        yhat_obs = design @ beta
        yhat_mis = np.column_stack([np.ones(mis.sum()), X[mis]]) @ beta
        columns[name][mis] = _pmm_impute(y[obs], yhat_obs, yhat_mis, rng)
    else:
        labels = y[obs]
        if labels.min() == labels.max():
            p = np.full(mis.sum(), float(labels.mean()))
        else:
            try:
                model = fit_logit(X[obs], labels)
                p = predict_proba(model, X[mis])
                p = np.atleast_1d(p)
            except EstimationError:
                # Degenerate sweep fit (separation/collinearity): fall back to
                # the observed share rather than aborting the chain.
                p = np.full(mis.sum(), float(labels.mean()))
        columns[name][mis] = (rng.random(mis.sum()) < p).astype(float)


def impute_chained(d: Dataset, m: int = 5, seed: int = 0) -> list[Dataset]:
    """Return m completed datasets; bit-identical copies if nothing is missing."""
    if m < 1:
        raise ValidationError("m must be >= 1")
    n = len(d)
    if n == 0:
        raise ValidationError("empty dataset")
    observed = {
        name: np.array([getattr(r, name) is not None for r in d.records])
        for name in NULLABLE_FIELDS
    }
    for name, obs in observed.items():
        if not obs.any():
            raise ValidationError(f"field {name} has no observed values")
        if obs.mean() < 0.5:
            raise ValidationError(f"field {name} is more than 50% missing")
    if all(obs.all() for obs in observed.values()):
        return [Dataset(records=d.records, provenance=d.provenance, filter_log=d.filter_log) for _ in range(m)]

    base_columns = {
        name: d.column(name) for name in set(_PREDICTOR_FIELDS) | set(SWEEP_ORDER)
    }
    streams = np.random.SeedSequence(seed).spawn(m)
    completions = []
    for c in range(m):
        rng = np.random.default_rng(streams[c])
        columns = {k: v.copy() for k, v in base_columns.items()}
        # Initial fills drawn from each field's observed values.
        for name in SWEEP_ORDER:
            mis = ~observed[name]
            if mis.any():
                pool = columns[name][observed[name]]
                columns[name][mis] = rng.choice(pool, size=mis.sum(), replace=True)
        for _ in range(BURN_IN_SWEEPS):
            for name in SWEEP_ORDER:
                _sweep_field(columns, name, observed, rng)
        records = []
        for i, r in enumerate(d.records):
            fills = {}
            for name in SWEEP_ORDER:
                if getattr(r, name) is None:
                    value = columns[name][i]
                    fills[name] = float(value) if name in _CONTINUOUS else int(value)
            records.append(replace(r, **fills) if fills else r)
        completions.append(
            Dataset(records=tuple(records), provenance=d.provenance, filter_log=d.filter_log)
        )
    return completions


def pool_rubin(estimates: Sequence[EffectEstimate]) -> EffectEstimate:
    """Combine per-completion estimates with Rubin's rules.

    Pooled variance = mean within-imputation variance + (1 + 1/m) times the
    between-imputation variance; p-value from the normal approximation.
    """
    if len(estimates) < 2:
        raise ValidationError("pooling needs at least 2 estimates")
    methods = {e.method for e in estimates}
    estimands = {e.estimand for e in estimates}
    if len(methods) > 1 or len(estimands) > 1:
        raise ValidationError(
            f"cannot pool mixed estimators: methods={sorted(methods)}, estimands={sorted(estimands)}"
        )
    if any(e.standard_error is None for e in estimates):
        raise ValidationError("pooling requires standard errors on every estimate")
    m = len(estimates)
    q = np.array([e.estimate for e in estimates])
    w = np.array([e.standard_error**2 for e in estimates])
    pooled = float(np.mean(q))
    between = float(np.var(q, ddof=1))
    total_var = float(np.mean(w)) + (1.0 + 1.0 / m) * between
    se = math.sqrt(total_var)
    if se == 0.0:
        p = 1.0 if pooled == 0.0 else 0.0
    else:
        p = float(2.0 * norm.sf(abs(pooled) / se))
    seeds = {e.seed for e in estimates}
    return EffectEstimate(
        estimate=pooled,
        standard_error=se,
        p_value=p,
        estimand=estimates[0].estimand,
        method=estimates[0].method,
        n_used=estimates[0].n_used,
        seed=estimates[0].seed if len(seeds) == 1 else None,
    )
