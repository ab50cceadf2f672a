"""Honest causal forest with local centering and doubly-robust effect averages.

Structure: two auxiliary honest regression forests produce out-of-bag
estimates of the outcome surface m(x) and the treatment propensity e(x);
causal trees are then grown on the centered residuals, each on its own
subsample split into a structure half (splits) and an honest half (leaf
statistics). Effect aggregation uses augmented inverse-propensity scores
built from the out-of-bag quantities.

Determinism: records are canonically sorted by id before fitting, every tree
consumes an RNG stream derived from (seed, forest role, tree index), and
cross-tree reductions run in fixed tree order, so a given seed and config
produce bit-identical forests for any worker count or input row order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .data import ESTIMATION_COVARIATES, Dataset
from .errors import EmptyGroupError, EstimationError, ValidationError
from .estimates import EffectEstimate
from .trees import apply_tree, grow_tree

FOREST_METHOD = "causal_forest"

# AIPW propensity clamp bounds; events outside are counted, not fatal.
E_CLAMP = (0.01, 0.99)

_TREE_BLOCK = 32


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 2000
    subsample_fraction: float = 0.5
    honesty_fraction: float = 0.5
    min_leaf_size: int = 5
    mtry: Optional[int] = None  # None: ceil(sqrt(p) + 20), capped at p
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValidationError("num_trees must be >= 1")
        if not 0.0 < self.subsample_fraction < 1.0:
            raise ValidationError("subsample_fraction must be in (0, 1)")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise ValidationError("honesty_fraction must be in (0, 1)")
        if self.min_leaf_size < 1:
            raise ValidationError("min_leaf_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValidationError("mtry must be >= 1")

    def resolved_mtry(self, p: int) -> int:
        if self.mtry is not None:
            return min(self.mtry, p)
        return min(int(math.ceil(math.sqrt(p) + 20)), p)


@dataclass
class _TreeSet:
    features: list
    thresholds: list
    lefts: list
    rights: list
    nums: list
    dens: list
    subsamples: list  # in-sample (structure + honest) indices per tree

    def __len__(self):
        return len(self.features)

    def num_den(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Forest-weight numerator/denominator sums over all trees."""
        n = X.shape[0]
        num = np.zeros(n)
        den = np.zeros(n)
        for t in range(len(self.features)):
            leaves = apply_tree(X, self.features[t], self.thresholds[t], self.lefts[t], self.rights[t])
            num += self.nums[t][leaves]
            den += self.dens[t][leaves]
        return num, den


def _grow_block(X, dt, yt, tr, cfg, mtry, require_both, tree_seeds, block) -> list:
    """Grow a block of trees; returns per-tree (arrays..., sub, leaf_ids)."""
    n = X.shape[0]
    n_sub = int(n * cfg.subsample_fraction)
    n_honest = int(n_sub * cfg.honesty_fraction)
    out = []
    for t in block:
        rng = np.random.default_rng(tree_seeds[t])
        sub = rng.permutation(n)[:n_sub]
        honest = np.sort(sub[:n_honest])
        struct = np.sort(sub[n_honest:])
        feat_seed = np.uint64(rng.integers(0, 2**63, dtype=np.int64))
        arrays = grow_tree(
            X[struct],
            dt[struct],
            yt[struct],
            tr[struct],
            X[honest],
            dt[honest],
            yt[honest],
            tr[honest],
            cfg.min_leaf_size,
            mtry,
            require_both,
            feat_seed,
        )
        leaf_ids = apply_tree(X, arrays[0], arrays[1], arrays[2], arrays[3])
        out.append((arrays, np.sort(sub), leaf_ids))
    return out


def _fit_forest(X, dt, yt, tr, cfg, seed_seq, workers: int, require_both: bool):
    """Fit one honest forest; returns (_TreeSet, oob_num, oob_den, oob_count)."""
    n, p = X.shape
    mtry = cfg.resolved_mtry(p)
    tree_seeds = seed_seq.spawn(cfg.num_trees)
    blocks = [
        range(b, min(b + _TREE_BLOCK, cfg.num_trees))
        for b in range(0, cfg.num_trees, _TREE_BLOCK)
    ]
    if workers <= 1:
        results = (
            _grow_block(X, dt, yt, tr, cfg, mtry, require_both, tree_seeds, blk)
            for blk in blocks
        )
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        futures = [
            pool.submit(_grow_block, X, dt, yt, tr, cfg, mtry, require_both, tree_seeds, blk)
            for blk in blocks
        ]
        results = (f.result() for f in futures)

    trees = _TreeSet([], [], [], [], [], [], [])
    oob_num = np.zeros(n)
    oob_den = np.zeros(n)
    oob_count = np.zeros(n)
    # Accumulate strictly in tree order: identical bytes for any worker count.
    for block_result in results:
        for arrays, sub, leaf_ids in block_result:
            feature, threshold, left, right, leaf_num, leaf_den = arrays
            oob = np.ones(n, dtype=bool)
            oob[sub] = False
            oob_num[oob] += leaf_num[leaf_ids[oob]]
            oob_den[oob] += leaf_den[leaf_ids[oob]]
            oob_count[oob] += 1
            trees.features.append(feature)
            trees.thresholds.append(threshold)
            trees.lefts.append(left)
            trees.rights.append(right)
            trees.nums.append(leaf_num)
            trees.dens.append(leaf_den)
            trees.subsamples.append(sub)
    if workers > 1:
        pool.shutdown()
    return trees, oob_num, oob_den, oob_count


def _regression_oob(X, y, cfg, seed_seq, workers) -> tuple[_TreeSet, np.ndarray]:
    ones = np.ones(len(y))
    zeros = np.zeros(len(y), dtype=np.int8)
    trees, num, den, count = _fit_forest(X, ones, y, zeros, cfg, seed_seq, workers, False)
    if (count == 0).any():
        # A unit in every subsample: astronomically unlikely beyond toy sizes.
        full_num, full_den = trees.num_den(X)
        fallback = full_num / np.maximum(full_den, 1e-300)
        missing = count == 0
        pred = np.divide(num, den, out=fallback, where=~missing)
        return trees, pred
    return trees, num / den


@dataclass
class CausalForestModel:
    """Fitted forest plus the out-of-bag quantities needed for aggregation.

    Arrays are stored in canonical (id-sorted) training order; ``ids`` gives
    that order.
    """

    config: ForestConfig
    covariates: tuple[str, ...]
    ids: tuple[str, ...]
    y: np.ndarray
    d: np.ndarray
    m_hat: np.ndarray
    e_hat: np.ndarray
    e_overridden: bool
    cate_oob: np.ndarray
    trees: _TreeSet


def fit_causal_forest(
    d: Dataset,
    cfg: ForestConfig,
    covariates: Sequence[str] = ESTIMATION_COVARIATES,
    e_hat: Optional[np.ndarray | float] = None,
    workers: int = 1,
) -> CausalForestModel:
    """Fit the honest causal forest on complete-case records.

    ``e_hat`` optionally supplies known assignment probabilities (scalar or
    per-record in dataset order), skipping the propensity forest; use it when
    treatment was randomized with known probability.
    """
    n = len(d)
    if n == 0:
        raise ValidationError("empty dataset")
    covariates = tuple(covariates)
    ids = np.array(d.ids)
    perm = np.argsort(ids, kind="stable")
    X = d.covariate_matrix(covariates)[perm]
    if np.isnan(X).any():
        raise ValidationError("causal forest requires complete cases")
    y = d.column("used_pt")[perm]
    w = d.column("informed")[perm]
    if not (w == 1).any():
        raise EmptyGroupError("treated")
    if not (w == 0).any():
        raise EmptyGroupError("control")
    n_sub = int(n * cfg.subsample_fraction)
    if n_sub < 4 * cfg.min_leaf_size:
        raise EstimationError(
            f"subsample too small: n*subsample_fraction = {n_sub} < "
            f"{4 * cfg.min_leaf_size} (4*min_leaf_size)"
        )

    root = np.random.SeedSequence(cfg.seed)
    ss_m, ss_e, ss_tau = root.spawn(3)

    _, m_oob = _regression_oob(X, y, cfg, ss_m, workers)
    if e_hat is None:
        _, e_oob = _regression_oob(X, w, cfg, ss_e, workers)
        e_overridden = False
    else:
        e_arr = np.asarray(e_hat, dtype=float)
        if e_arr.ndim == 0:
            e_oob = np.full(n, float(e_arr))
        elif e_arr.shape == (n,):
            e_oob = e_arr[perm]
        else:
            raise ValidationError(f"e_hat must be a scalar or have shape ({n},)")
        if (e_oob <= 0).any() or (e_oob >= 1).any():
            raise ValidationError("e_hat values must be strictly inside (0, 1)")
        e_overridden = True

    dt = w - e_oob
    yt = y - m_oob
    tr = w.astype(np.int8)
    trees, num, den, count = _fit_forest(X, dt, yt, tr, cfg, ss_tau, workers, True)
    bad = (count == 0) | (den == 0)
    if bad.any():
        full_num, full_den = trees.num_den(X)
        num = np.where(bad, full_num, num)
        den = np.where(bad, full_den, den)
    cate_oob = num / den

    return CausalForestModel(
        config=cfg,
        covariates=covariates,
        ids=tuple(ids[perm]),
        y=y,
        d=w,
        m_hat=m_oob,
        e_hat=e_oob,
        e_overridden=e_overridden,
        cate_oob=cate_oob,
        trees=trees,
    )


def predict_cate(model: CausalForestModel, rows: np.ndarray):
    """Forest-weighted CATE for one row (1-d) or a matrix (2-d) of covariates."""
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim == 1
    if single:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] != len(model.covariates):
        raise ValidationError(
            f"expected {len(model.covariates)} covariates, got shape {rows.shape}"
        )
    num, den = model.trees.num_den(np.ascontiguousarray(rows))
    tau = num / np.where(den == 0, np.nan, den)
    return float(tau[0]) if single else tau


def oob_cate(model: CausalForestModel, d: Dataset) -> np.ndarray:
    """Out-of-bag training CATEs, reordered to the dataset's record order."""
    _check_same_records(model, d)
    lookup = {i: k for k, i in enumerate(model.ids)}
    take = np.array([lookup[i] for i in d.ids])
    return model.cate_oob[take]


def _check_same_records(model: CausalForestModel, d: Dataset):
    if set(model.ids) != set(d.ids) or len(d) != len(model.ids):
        raise ValidationError("dataset does not match the records the model was fitted on")


@dataclass(frozen=True)
class AipwScores:
    gamma: np.ndarray  # per-unit doubly-robust scores, canonical order
    e_clamped: np.ndarray  # propensities after clamping
    n_clamped: int


def aipw_scores(model: CausalForestModel) -> AipwScores:
    """Per-unit augmented inverse-propensity scores from the OOB quantities."""
    lo, hi = E_CLAMP
    e = np.clip(model.e_hat, lo, hi)
    n_clamped = int(((model.e_hat < lo) | (model.e_hat > hi)).sum())
    resid_d = model.d - e
    tau = model.cate_oob
    gamma = tau + resid_d / (e * (1.0 - e)) * (model.y - model.m_hat - resid_d * tau)
    return AipwScores(gamma=gamma, e_clamped=e, n_clamped=n_clamped)


def estimate_ate_forest(model: CausalForestModel, d: Dataset, target: str = "all") -> EffectEstimate:
    """Average the doubly-robust scores: equal weights (ATE) or overlap weights (ATO).

    target="overlap" weights each unit by e(x)(1-e(x)), concentrating on the
    region where both groups are represented.
    """
    if target not in ("all", "overlap"):
        raise ValidationError(f"target must be 'all' or 'overlap', got {target!r}")
    _check_same_records(model, d)
    scores = aipw_scores(model)
    gamma = scores.gamma
    n = len(gamma)
    if target == "all":
        estimate = float(np.mean(gamma))
        se = float(np.sqrt(np.var(gamma, ddof=1) / n))
        estimand = "ATE"
    else:
        wts = scores.e_clamped * (1.0 - scores.e_clamped)
        wsum = wts.sum()
        estimate = float(np.sum(wts * gamma) / wsum)
        se = float(np.sqrt(np.sum(wts**2 * (gamma - estimate) ** 2)) / wsum)
        estimand = "ATO"
    p = 1.0 if se == 0.0 and estimate == 0.0 else (
        0.0 if se == 0.0 else float(2.0 * norm.sf(abs(estimate) / se))
    )
    return EffectEstimate(
        estimate=estimate,
        standard_error=se,
        p_value=p,
        estimand=estimand,
        method=FOREST_METHOD,
        n_used=n,
        seed=model.config.seed,
    )


_FORMAT_VERSION = 1


def save_model(model: CausalForestModel, path: str):
    """Serialize to a versioned binary (npz) file."""
    trees = model.trees
    counts = np.array([len(f) for f in trees.features], dtype=np.int64)
    sub_counts = np.array([len(s) for s in trees.subsamples], dtype=np.int64)
    np.savez_compressed(
        path,
        format_version=np.array([_FORMAT_VERSION]),
        config=np.frombuffer(json.dumps(asdict(model.config)).encode(), dtype=np.uint8),
        covariates=np.array(model.covariates),
        ids=np.array(model.ids),
        y=model.y,
        d=model.d,
        m_hat=model.m_hat,
        e_hat=model.e_hat,
        e_overridden=np.array([model.e_overridden]),
        cate_oob=model.cate_oob,
        node_counts=counts,
        sub_counts=sub_counts,
        features=np.concatenate(trees.features),
        thresholds=np.concatenate(trees.thresholds),
        lefts=np.concatenate(trees.lefts),
        rights=np.concatenate(trees.rights),
        nums=np.concatenate(trees.nums),
        dens=np.concatenate(trees.dens),
        subsamples=np.concatenate(trees.subsamples),
    )


def load_model(path: str) -> CausalForestModel:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"][0])
        if version != _FORMAT_VERSION:
            raise ValidationError(f"unsupported model format version {version}")
        cfg = ForestConfig(**json.loads(bytes(z["config"]).decode()))
        counts = z["node_counts"]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        sub_offsets = np.concatenate([[0], np.cumsum(z["sub_counts"])])

        def split(name, off):
            arr = z[name]
            return [arr[off[i] : off[i + 1]] for i in range(len(off) - 1)]

        trees = _TreeSet(
            features=split("features", offsets),
            thresholds=split("thresholds", offsets),
            lefts=split("lefts", offsets),
            rights=split("rights", offsets),
            nums=split("nums", offsets),
            dens=split("dens", offsets),
            subsamples=split("subsamples", sub_offsets),
        )
        return CausalForestModel(
            config=cfg,
            covariates=tuple(z["covariates"]),
            ids=tuple(z["ids"]),
            y=z["y"],
            d=z["d"],
            m_hat=z["m_hat"],
            e_hat=z["e_hat"],
            e_overridden=bool(z["e_overridden"][0]),
            cate_oob=z["cate_oob"],
            trees=trees,
        )
