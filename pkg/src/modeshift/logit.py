"""Maximum-likelihood logistic regression via iteratively reweighted least squares.

This is the propensity-score model: plain logit, no regularization, an
intercept is always included. Separation surfaces as an error instead of
silently clamped coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import CollinearityError, SeparationError, ValidationError

# Linear indices are clipped here before the logistic transform, keeping
# probabilities strictly inside (0, 1) in float64.
_INDEX_CLIP = 36.0

_SEPARATION_COEF_NORM = 30.0


@dataclass(frozen=True)
class LogitModel:
    coefficients: np.ndarray  # intercept first, then one slope per covariate
    covariates: tuple[str, ...]
    converged: bool
    log_likelihood: float
    n_iterations: int

    def __post_init__(self):
        if len(self.coefficients) != len(self.covariates) + 1:
            raise ValidationError("coefficient vector length must be covariate count + 1")


def _log_likelihood(eta: np.ndarray, y: np.ndarray) -> float:
    # sum y*eta - log(1 + exp(eta)), stable for large |eta|
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def _check_full_rank(design: np.ndarray, names: Sequence[str]):
    _, r, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < design.shape[1]:
        dependent = sorted(piv[rank:])
        raise CollinearityError([names[j] for j in dependent])


def fit_logit(
    X: np.ndarray,
    y: np.ndarray,
    covariates: Optional[Sequence[str]] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LogitModel:
    """Fit Pr(y=1|x) = logistic(b0 + x'b) by IRLS with step-halving.

    Parameters
    ----------
    X : (n, p) covariate matrix without an intercept column.
    y : (n,) binary labels.
    covariates : optional names for the p columns (defaults to x0..x{p-1}).
    tol : convergence tolerance on the gradient max-norm.
    max_iter : IRLS iteration cap.

    Raises
    ------
    ValidationError : missing/non-binary inputs or one-class labels.
    CollinearityError : exactly collinear design columns (named).
    SeparationError : complete or quasi-complete separation.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValidationError("X must be a 2-d matrix")
    n, p = X.shape
    if y.shape != (n,):
        raise ValidationError(f"y must have shape ({n},)")
    if n == 0:
        raise ValidationError("empty design matrix")
    if not np.isfinite(X).all():
        raise ValidationError("X contains missing or non-finite entries")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValidationError("labels must be 0/1")
    if y.min() == y.max():
        raise ValidationError("labels must include at least one 0 and one 1")
    if covariates is None:
        covariates = tuple(f"x{j}" for j in range(p))
    else:
        covariates = tuple(covariates)
        if len(covariates) != p:
            raise ValidationError("covariate name count must match X columns")
    names = ("(intercept)",) + covariates

    design = np.column_stack([np.ones(n), X])
    _check_full_rank(design, names)

    beta = np.zeros(p + 1)
    eta = design @ beta
    ll = _log_likelihood(eta, y)
    n_iter = 0
    converged = False
    while n_iter < max_iter:
        mu = expit(eta)
        grad = design.T @ (y - mu)
        if np.abs(grad).max() < tol:
            converged = True
            break
        if np.abs(beta).max() > _SEPARATION_COEF_NORM:
            raise SeparationError(
                f"diverging coefficients (max |b| = {np.abs(beta).max():.2f}) "
                f"with gradient max-norm {np.abs(grad).max():.2e}"
            )
        w = mu * (1.0 - mu)
        hessian = design.T @ (design * w[:, None])
        try:
            delta = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            # Full-rank design with a singular weighted system means the
            # weights collapsed, i.e. the fit is saturating.
            raise SeparationError("singular weighted system: saturated fit") from None

        # Step-halving keeps the log-likelihood nondecreasing.
        step = 1.0
        improved = False
        for _ in range(60):
            cand = beta + step * delta
            cand_eta = design @ cand
            cand_ll = _log_likelihood(cand_eta, y)
            if cand_ll >= ll - 1e-12:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        stalled = np.abs(step * delta).max() < 1e-10
        beta, eta, ll = cand, cand_eta, cand_ll
        n_iter += 1
        if stalled:
            break
    mu = expit(eta)
    grad = design.T @ (y - mu)
    if np.abs(grad).max() < tol:
        converged = True
    elif np.abs(beta).max() > _SEPARATION_COEF_NORM:
        raise SeparationError(
            f"diverging coefficients (max |b| = {np.abs(beta).max():.2f}) "
            f"with gradient max-norm {np.abs(grad).max():.2e}"
        )
    return LogitModel(
        coefficients=beta,
        covariates=covariates,
        converged=converged,
        log_likelihood=ll,
        n_iterations=n_iter,
    )


def predict_proba(model: LogitModel, rows: np.ndarray) -> np.ndarray:
    """Fitted probabilities for one row (1-d) or a matrix (2-d); strictly in (0,1)."""
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim == 1
    if single:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] != len(model.covariates):
        raise ValidationError(
            f"expected {len(model.covariates)} covariates, got shape {rows.shape}"
        )
    eta = model.coefficients[0] + rows @ model.coefficients[1:]
    proba = expit(np.clip(eta, -_INDEX_CLIP, _INDEX_CLIP))
    return float(proba[0]) if single else proba
