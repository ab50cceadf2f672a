"""Propensity-score matching: 1-NN ATE estimator, stratified bootstrap, trimming.

Matching is one-nearest-neighbor with replacement on the propensity score,
with exact distance ties averaged over all tied matches. Every computation is
run on records canonically sorted by id, so estimates never depend on input
row order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .data import Dataset, FilterLogEntry
from .errors import EmptyGroupError, EstimationError, ValidationError
from .estimates import EffectEstimate
from .logit import fit_logit, predict_proba

log = logging.getLogger(__name__)

PSM_METHOD = "psm"


def _check_scores(scores: np.ndarray, n: int):
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (n,):
        raise ValidationError(f"scores must have shape ({n},)")
    if not np.isfinite(scores).all() or (scores <= 0).any() or (scores >= 1).any():
        raise ValidationError("propensity scores must be strictly inside (0, 1)")
    return scores


def _matched_means(queries: np.ndarray, pool_scores: np.ndarray, pool_y: np.ndarray):
    """Mean pool outcome over each query's nearest pool units (exact ties averaged).

    Returns (means, contributions) where contributions[j] is the total match
    weight received by sorted-pool unit j (each query distributes weight 1
    across its tied matches).
    """
    order = np.argsort(pool_scores, kind="stable")
    s = pool_scores[order]
    ys = pool_y[order]
    m = len(s)
    prefix = np.concatenate([[0.0], np.cumsum(ys)])

    pos_l = np.searchsorted(s, queries, side="left")
    pos_r = np.searchsorted(s, queries, side="right")
    exact = pos_r > pos_l

    # Distances to the adjacent distinct values on each side.
    has_left = pos_l > 0
    has_right = pos_r < m
    v_left = s[np.clip(pos_l - 1, 0, m - 1)]
    v_right = s[np.clip(pos_r, 0, m - 1)]
    d_left = np.where(has_left, queries - v_left, np.inf)
    d_right = np.where(has_right, v_right - queries, np.inf)

    use_left = ~exact & has_left & (d_left <= d_right)
    use_right = ~exact & has_right & (d_right <= d_left)

    # Runs of equal values: exact hits are [pos_l, pos_r); the left run ends at
    # pos_l and starts at searchsorted(v_left, 'left'); symmetrical on the right.
    left_lo = np.searchsorted(s, np.where(has_left, v_left, 0.0), side="left")
    right_hi = np.searchsorted(s, np.where(has_right, v_right, 0.0), side="right")

    count = np.where(exact, pos_r - pos_l, 0).astype(float)
    total = np.where(exact, prefix[pos_r] - prefix[pos_l], 0.0)
    count += np.where(use_left, pos_l - left_lo, 0)
    total += np.where(use_left, prefix[pos_l] - prefix[left_lo], 0.0)
    count += np.where(use_right, right_hi - pos_r, 0)
    total += np.where(use_right, prefix[right_hi] - prefix[pos_r], 0.0)

    means = total / count

    # Distribute each query's unit weight across its matched runs.
    contrib_sorted = np.zeros(m + 1)
    w = 1.0 / count
    for lo, hi, mask in (
        (pos_l, pos_r, exact),
        (left_lo, pos_l, use_left),
        (pos_r, right_hi, use_right),
    ):
        np.add.at(contrib_sorted, lo[mask], w[mask])
        np.subtract.at(contrib_sorted, hi[mask], w[mask])
    contrib_sorted = np.cumsum(contrib_sorted[:-1])
    contributions = np.empty(m)
    contributions[order] = contrib_sorted
    return means, contributions


@dataclass(frozen=True)
class MatchResult:
    """Matching output in dataset record order."""

    estimate: float
    imputed_diff: np.ndarray  # per-unit Y1hat - Y0hat
    weights: np.ndarray  # matched-sample frequency weights (own + received)
    n_used: int


def match_details(d: Dataset, scores: np.ndarray) -> MatchResult:
    """Run 1-NN ATE matching and return per-unit details for diagnostics."""
    n = len(d)
    scores = _check_scores(scores, n)
    ids = np.array(d.ids)
    perm = np.argsort(ids, kind="stable")
    inv = np.empty(n, dtype=int)
    inv[perm] = np.arange(n)

    treated = d.column("informed")[perm] == 1
    y = d.column("used_pt")[perm]
    s = scores[perm]
    if not treated.any():
        raise EmptyGroupError("treated")
    if not (~treated).any():
        raise EmptyGroupError("control")

    y1 = np.where(treated, y, 0.0)
    y0 = np.where(treated, 0.0, y)
    ctrl_mean, ctrl_contrib = _matched_means(s[treated], s[~treated], y[~treated])
    trt_mean, trt_contrib = _matched_means(s[~treated], s[treated], y[treated])
    y0[treated] = ctrl_mean
    y1[~treated] = trt_mean

    weights = np.ones(n)
    weights[treated] += trt_contrib
    weights[~treated] += ctrl_contrib

    diff = y1 - y0
    return MatchResult(
        estimate=float(np.mean(diff)),
        imputed_diff=diff[inv],
        weights=weights[inv],
        n_used=n,
    )


def estimate_ate_psm(d: Dataset, scores: np.ndarray, seed: Optional[int] = None) -> EffectEstimate:
    """ATE from 1-NN propensity matching; SE/p stay None until bootstrapped."""
    m = match_details(d, scores)
    return EffectEstimate(
        estimate=m.estimate,
        standard_error=None,
        p_value=None,
        estimand="ATE",
        method=PSM_METHOD,
        n_used=m.n_used,
        seed=seed,
    )


def _psm_replicate(X, y, treated, covariates, rng, redraw_budget):
    """One bootstrap replicate: stratified resample, logit refit, match."""
    t_idx = np.flatnonzero(treated)
    c_idx = np.flatnonzero(~treated)
    attempts = 0
    while True:
        take_t = t_idx[rng.integers(0, len(t_idx), len(t_idx))]
        take_c = c_idx[rng.integers(0, len(c_idx), len(c_idx))]
        take = np.concatenate([take_t, take_c])
        try:
            model = fit_logit(X[take], y_label(treated[take]), covariates)
            s = predict_proba(model, X[take])
            return _ate_from_arrays(s, y[take], treated[take]), attempts
        except EstimationError:
            attempts += 1
            if attempts > redraw_budget:
                raise


def y_label(treated: np.ndarray) -> np.ndarray:
    return treated.astype(float)


def _ate_from_arrays(scores, y, treated) -> float:
    y1 = np.where(treated, y, 0.0)
    y0 = np.where(treated, 0.0, y)
    y0_t, _ = _matched_means(scores[treated], scores[~treated], y[~treated])
    y1_c, _ = _matched_means(scores[~treated], scores[treated], y[treated])
    y0[treated] = y0_t
    y1[~treated] = y1_c
    return float(np.mean(y1 - y0))


def bootstrap_inference(
    d: Dataset,
    covariates: Sequence[str],
    b: int = 999,
    seed: int = 0,
    workers: int = 1,
) -> EffectEstimate:
    """PSM ATE with bootstrap standard error and normal-approximation p-value.

    Draws ``b`` stratified resamples (treated and control resampled
    separately, so neither group can vanish), refits the propensity logit and
    reruns matching inside each one. Replicates consume independent
    replicate-indexed RNG streams, so results are bit-identical for a given
    seed regardless of ``workers``. Replicates whose refit degenerates
    (separation/collinearity) are redrawn, up to 10*b redraws in total.
    """
    if b < 2:
        raise ValidationError("bootstrap needs at least 2 replications")
    n = len(d)
    ids = np.array(d.ids)
    perm = np.argsort(ids, kind="stable")
    X = d.covariate_matrix(covariates)[perm]
    if np.isnan(X).any():
        raise ValidationError("bootstrap requires complete cases for the logit refit")
    y = d.column("used_pt")[perm]
    treated = d.column("informed")[perm] == 1
    if not treated.any():
        raise EmptyGroupError("treated")
    if not (~treated).any():
        raise EmptyGroupError("control")

    point_model = fit_logit(X, treated.astype(float), covariates)
    point_scores = predict_proba(point_model, X)
    point = _ate_from_arrays(point_scores, y, treated)

    streams = np.random.SeedSequence(seed).spawn(b)
    redraw_budget = 10 * b
    estimates = np.empty(b)
    redraws = np.zeros(b, dtype=int)

    def run(r: int):
        rng = np.random.default_rng(streams[r])
        estimates[r], redraws[r] = _psm_replicate(
            X, y, treated, covariates, rng, redraw_budget
        )

    if workers <= 1:
        for r in range(b):
            run(r)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(b)))
    total_redraws = int(redraws.sum())
    if total_redraws > redraw_budget:
        raise EstimationError(f"bootstrap exceeded {redraw_budget} redraws")
    if total_redraws:
        log.info("bootstrap redrew %d degenerate resamples", total_redraws)

    se = float(np.std(estimates, ddof=1))
    if se == 0.0:
        p = 1.0 if point == 0.0 else 0.0
    else:
        p = float(2.0 * norm.sf(abs(point) / se))
    return EffectEstimate(
        estimate=point,
        standard_error=se,
        p_value=p,
        estimand="ATE",
        method=PSM_METHOD,
        n_used=n,
        seed=seed,
    )


def trim_common_support(d: Dataset, scores: np.ndarray) -> Dataset:
    """Drop treated records whose score exceeds the control-group maximum.

    Control records are never dropped; applying the rule twice is a no-op.
    The drop is appended to the dataset's filter log under rule
    ``common_support``.
    """
    n = len(d)
    scores = _check_scores(scores, n)
    treated = d.column("informed") == 1
    if not (~treated).any():
        raise EmptyGroupError("control")
    cap = float(scores[~treated].max())
    drop = treated & (scores > cap)
    dropped_ids = tuple(np.array(d.ids)[drop])
    kept = tuple(r for r, out in zip(d.records, drop) if not out)
    return Dataset(
        records=kept,
        provenance=d.provenance,
        filter_log=d.filter_log + (FilterLogEntry(rule="common_support", dropped_ids=dropped_ids),),
    )
