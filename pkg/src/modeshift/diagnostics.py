"""Checkable identification diagnostics: balance, overlap, subsample stability."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import t as t_dist

from .data import Dataset
from .errors import ValidationError
from .forest import CausalForestModel, ForestConfig, fit_causal_forest, predict_cate


def smd_percent(mean_t: float, mean_c: float, sd_t: float) -> Optional[float]:
    """Standardized mean difference in percent: 100*(mean_T - mean_C)/sd_T.

    The denominator is the treated-group standard deviation (matching-package
    convention). Returns None when sd_t is zero (undefined).
    """
    if sd_t == 0.0:
        return None
    return 100.0 * (mean_t - mean_c) / sd_t


def welch_test(a: np.ndarray, b: np.ndarray, w_a=None, w_b=None) -> float:
    """Two-sided Welch unequal-variance t-test p-value.

    Weights, when given, are treated as frequency weights: weighted means,
    weighted n-1 variances, and effective group sizes sum(w).
    """
    def moments(x, w):
        x = np.asarray(x, dtype=float)
        if w is None:
            w = np.ones_like(x)
        w = np.asarray(w, dtype=float)
        keep = w > 0
        x, w = x[keep], w[keep]
        n = w.sum()
        if n <= 1:
            raise ValidationError("Welch test needs effective group size > 1")
        mean = float(np.sum(w * x) / n)
        var = float(np.sum(w * (x - mean) ** 2) / (n - 1.0))
        return mean, var, n

    m1, v1, n1 = moments(a, w_a)
    m2, v2, n2 = moments(b, w_b)
    se2 = v1 / n1 + v2 / n2
    if se2 == 0.0:
        return 1.0
    t_stat = (m1 - m2) / math.sqrt(se2)
    df = se2**2 / ((v1 / n1) ** 2 / (n1 - 1.0) + (v2 / n2) ** 2 / (n2 - 1.0))
    return float(2.0 * t_dist.sf(abs(t_stat), df))


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    mean_treated_before: float
    mean_control_before: float
    smd_before: Optional[float]
    p_before: float
    mean_treated_after: Optional[float] = None
    mean_control_after: Optional[float] = None
    smd_after: Optional[float] = None
    p_after: Optional[float] = None
    smd_undefined: bool = False


def _weighted_mean_sd(x: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    n = w.sum()
    mean = float(np.sum(w * x) / n)
    sd = float(np.sqrt(np.sum(w * (x - mean) ** 2) / (n - 1.0))) if n > 1 else 0.0
    return mean, sd


def balance_table(
    d: Dataset,
    vars: Sequence[str],
    weights: Optional[np.ndarray] = None,
) -> list[BalanceRow]:
    """Before/after covariate balance for treated vs. control.

    ``weights`` is a per-record matched/weighted-sample weight vector (e.g.
    from PSM matching); the "after" columns stay None without it. Records with
    a missing value in a variable are excluded from that variable's row.
    """
    treated = d.column("informed") == 1
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(d),):
            raise ValidationError(f"weights must have shape ({len(d)},)")
        if (weights < 0).any():
            raise ValidationError("weights must be nonnegative")
    rows = []
    for name in vars:
        col = d.column(name)
        keep = ~np.isnan(col)
        x, t = col[keep], treated[keep]
        ones = np.ones(keep.sum())
        m_t, sd_t = _weighted_mean_sd(x[t], ones[t])
        m_c, _ = _weighted_mean_sd(x[~t], ones[~t])
        smd_b = smd_percent(m_t, m_c, sd_t)
        p_b = welch_test(x[t], x[~t])
        if weights is None:
            rows.append(
                BalanceRow(
                    covariate=name,
                    mean_treated_before=m_t,
                    mean_control_before=m_c,
                    smd_before=smd_b,
                    p_before=p_b,
                    smd_undefined=smd_b is None,
                )
            )
            continue
        w = weights[keep]
        mw_t, sdw_t = _weighted_mean_sd(x[t], w[t])
        mw_c, _ = _weighted_mean_sd(x[~t], w[~t])
        smd_a = smd_percent(mw_t, mw_c, sdw_t)
        p_a = welch_test(x[t], x[~t], w[t], w[~t])
        rows.append(
            BalanceRow(
                covariate=name,
                mean_treated_before=m_t,
                mean_control_before=m_c,
                smd_before=smd_b,
                p_before=p_b,
                mean_treated_after=mw_t,
                mean_control_after=mw_c,
                smd_after=smd_a,
                p_after=p_a,
                smd_undefined=smd_b is None or smd_a is None,
            )
        )
    return rows


@dataclass(frozen=True)
class OverlapReport:
    bin_edges: np.ndarray
    counts_treated: np.ndarray
    counts_control: np.ndarray
    min_treated: float
    max_treated: float
    min_control: float
    max_control: float
    boundary_violations: int  # scores exactly 0 or 1
    single_group_bins: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "bin_edges": [float(v) for v in self.bin_edges],
            "counts_treated": [int(v) for v in self.counts_treated],
            "counts_control": [int(v) for v in self.counts_control],
            "min_treated": self.min_treated,
            "max_treated": self.max_treated,
            "min_control": self.min_control,
            "max_control": self.max_control,
            "boundary_violations": self.boundary_violations,
            "single_group_bins": list(self.single_group_bins),
        }


def overlap_report(scores: np.ndarray, informed: np.ndarray, bins: int = 20) -> OverlapReport:
    """Common-support report: per-group score histograms plus violation flags.

    Flags scores exactly at 0 or 1 and histogram bins populated by only one
    group (bins empty in both groups are fine).
    """
    scores = np.asarray(scores, dtype=float)
    informed = np.asarray(informed)
    if scores.shape != informed.shape:
        raise ValidationError("scores and informed must have the same shape")
    if (scores < 0).any() or (scores > 1).any():
        raise ValidationError("scores must be in [0, 1]")
    if bins < 1:
        raise ValidationError("bins must be >= 1")
    t = informed == 1
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts_t, _ = np.histogram(scores[t], bins=edges)
    counts_c, _ = np.histogram(scores[~t], bins=edges)
    lonely = tuple(
        int(i)
        for i in range(bins)
        if (counts_t[i] > 0) != (counts_c[i] > 0)
    )
    return OverlapReport(
        bin_edges=edges,
        counts_treated=counts_t,
        counts_control=counts_c,
        min_treated=float(scores[t].min()) if t.any() else math.nan,
        max_treated=float(scores[t].max()) if t.any() else math.nan,
        min_control=float(scores[~t].min()) if (~t).any() else math.nan,
        max_control=float(scores[~t].max()) if (~t).any() else math.nan,
        boundary_violations=int(((scores == 0.0) | (scores == 1.0)).sum()),
        single_group_bins=lonely,
    )


@dataclass(frozen=True)
class StabilityResult:
    differences: np.ndarray  # full-sample minus subgroup-model CATE, record order
    mean_difference: float
    p_value: float
    n_subgroup: int


def subsample_stability_check(
    d: Dataset,
    subgroup: np.ndarray,
    cfg: ForestConfig,
    covariates=None,
    workers: int = 1,
) -> StabilityResult:
    """Compare CATEs from a full-sample forest against one grown on a subgroup.

    Both forests use the same config and seed policy; CATEs are predicted for
    every record under both models and compared with a paired two-sided
    t-test. The subgroup may equal the full sample (all differences are then
    exactly zero).
    """
    subgroup = np.asarray(subgroup, dtype=bool)
    if subgroup.shape != (len(d),):
        raise ValidationError(f"subgroup mask must have shape ({len(d)},)")
    if not subgroup.any():
        raise ValidationError("subgroup is empty")
    from .data import ESTIMATION_COVARIATES

    covariates = tuple(covariates) if covariates is not None else ESTIMATION_COVARIATES
    sub = Dataset(
        records=tuple(r for r, keep in zip(d.records, subgroup) if keep),
        provenance=d.provenance,
    )
    full_model = fit_causal_forest(d, cfg, covariates, workers=workers)
    sub_model = fit_causal_forest(sub, cfg, covariates, workers=workers)
    X = d.covariate_matrix(covariates)
    cate_full = predict_cate(full_model, X)
    cate_sub = predict_cate(sub_model, X)
    diff = cate_full - cate_sub
    n = len(diff)
    mean = float(np.mean(diff))
    sd = float(np.std(diff, ddof=1)) if n > 1 else 0.0
    if sd == 0.0:
        p = 1.0 if mean == 0.0 else 0.0
    else:
        p = float(2.0 * t_dist.sf(abs(mean) / (sd / math.sqrt(n)), n - 1))
    return StabilityResult(
        differences=diff,
        mean_difference=mean,
        p_value=p,
        n_subgroup=int(subgroup.sum()),
    )
