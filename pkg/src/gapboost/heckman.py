"""Heckman two-step baseline: probit selection equation, inverse Mills ratio,
omitted-variable-corrected outcome regression.

The selection equation is fitted by damped Newton maximum likelihood on all
units; the outcome equation is ordinary least squares on the selected units
augmented with the Mills column. Population predictions use the outcome
coefficients only (no Mills term).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .data import CATEGORICAL, Dataset
from .errors import (
    CollinearityError,
    DataError,
    IdentificationError,
    SeparationError,
)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def inverse_mills(z):
    """phi(z) / Phi(z), evaluated in log space so the deep left tail
    (z down to -38 and beyond) stays accurate."""
    z = np.asarray(z, dtype=np.float64)
    log_pdf = -0.5 * z * z - _LOG_SQRT_2PI
    out = np.exp(log_pdf - log_ndtr(z))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ProbitFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int
    ll_path: tuple[float, ...] = ()   # likelihood after each accepted step


@dataclass(frozen=True)
class HeckmanFit:
    probit: ProbitFit | None
    beta1: np.ndarray
    beta_lambda: float
    residual_scale: float
    mills: np.ndarray
    residuals: np.ndarray         # stage-B residuals, selected units
    standard_errors: np.ndarray   # aligned to (beta1, beta_lambda)
    condition_number: float
    warnings: tuple[str, ...] = field(default=())


def _loglik(xb: np.ndarray, s: np.ndarray) -> float:
    return float(np.sum(np.where(s == 1, log_ndtr(xb), log_ndtr(-xb))))


def fit_probit(X, s, tol: float = 1e-8, max_iter: int = 100) -> ProbitFit:
    """Maximize the probit log likelihood by damped Newton iterations.

    Starts from the linear-probability least-squares fit scaled by 2.5 and
    halves the step until the likelihood improves. Stops when the gradient
    max-norm falls below `tol`.
    """
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != s.shape[0]:
        raise DataError("X must be 2-D and aligned with s")
    if not np.isin(s, (0.0, 1.0)).all():
        raise DataError("s must be binary 0/1")
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise CollinearityError("probit design matrix is rank deficient")
    beta = 2.5 * np.linalg.lstsq(X, s, rcond=None)[0]
    ll = _loglik(X @ beta, s)
    ll_path = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        xb = X @ beta
        if np.max(np.abs(xb)) > 200.0:
            raise SeparationError("probit likelihood unbounded: classes are separated")
        lam_pos = inverse_mills(xb)
        lam_neg = inverse_mills(-xb)
        score = np.where(s == 1, lam_pos, -lam_neg)
        grad = X.T @ score
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        hw = np.where(s == 1, lam_pos * (lam_pos + xb), lam_neg * (lam_neg - xb))
        H = (X * hw[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise CollinearityError("singular Hessian in probit fit") from None
        t = 1.0
        while t > 1e-12:
            ll_new = _loglik(X @ (beta + t * step), s)
            if ll_new >= ll:  # non-decreasing; equality = optimum plateau
                break
            t *= 0.5
        else:
            break  # every damped step makes things worse
        beta = beta + t * step
        ll = ll_new
        ll_path.append(ll)
    if not converged and np.all((2 * s - 1) * (X @ beta) > 0):
        raise SeparationError("probit likelihood unbounded: classes are separated")
    xb = X @ beta
    lam_pos = inverse_mills(xb)
    lam_neg = inverse_mills(-xb)
    hw = np.where(s == 1, lam_pos * (lam_pos + xb), lam_neg * (lam_neg - xb))
    info = (X * hw[:, None]).T @ X
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    return ProbitFit(
        coefficients=beta,
        standard_errors=se,
        log_likelihood=ll,
        converged=converged,
        iterations=iterations,
        ll_path=tuple(ll_path),
    )


def fit_heckman_two_step(X1, X2, y, s, stage_b_rows=None, cond_limit: float = 1e10) -> HeckmanFit:
    """Two-step estimator: probit on (X2, s), then OLS of y on [X1, mills].

    `y` holds the outcomes of the stage-B rows only: by default all rows with
    s == 1, or the subset given by the boolean mask `stage_b_rows` (which
    must imply selection; used to hold out part of the audited sample). When
    every unit is selected the Mills column is constant and is dropped, so
    stage B reduces to plain OLS (flagged in `warnings`).
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if X1.ndim != 2 or X2.ndim != 2 or X1.shape[0] != s.shape[0] or X2.shape[0] != s.shape[0]:
        raise DataError("X1/X2 must be 2-D and aligned with s")
    if stage_b_rows is None:
        sel = s == 1
    else:
        sel = np.asarray(stage_b_rows, dtype=bool)
        if sel.shape != s.shape or np.any(sel & (s != 1)):
            raise DataError("stage_b_rows must be a mask over selected rows")
    if y.shape != (int(sel.sum()),):
        raise DataError("y must hold exactly the stage-B rows' outcomes")
    warnings: list[str] = []
    if (s == 1).all():
        probit = None
        mills = np.full(y.shape[0], inverse_mills(0.0))
        W = X1[sel]
        warnings.append("all units selected: Mills column constant, dropped from stage B")
        beta_lambda_known = 0.0
    else:
        probit = fit_probit(X2, s)
        mills = inverse_mills(X2[sel] @ probit.coefficients)
        W = np.column_stack([X1[sel], mills])
        beta_lambda_known = None
    cond = float(np.linalg.cond(W))
    if cond > cond_limit:
        raise IdentificationError(
            f"stage-B design ill conditioned (cond={cond:.3e}): Mills column nearly collinear with X1"
        )
    coef, _, rank, _ = np.linalg.lstsq(W, y, rcond=None)
    if rank < W.shape[1]:
        raise CollinearityError("stage-B design is rank deficient")
    resid = y - W @ coef
    dof = max(W.shape[0] - W.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    se = np.sqrt(sigma2 * np.diag(np.linalg.inv(W.T @ W)))
    if beta_lambda_known is None:
        beta1, beta_lambda = coef[:-1], float(coef[-1])
    else:
        beta1, beta_lambda = coef, beta_lambda_known
        se = np.append(se, np.nan)
    return HeckmanFit(
        probit=probit,
        beta1=beta1,
        beta_lambda=beta_lambda,
        residual_scale=float(np.sqrt(sigma2)),
        mills=mills,
        residuals=resid,
        standard_errors=se,
        condition_number=cond,
        warnings=tuple(warnings),
    )


def predict_heckman(fit: HeckmanFit, X1, scale: str = "linear", smearing: bool = False) -> np.ndarray:
    """Population prediction x1' beta1 (no Mills term).

    `scale="log_then_back"` exponentiates the linear predictor, the naive
    back-transform; `smearing=True` additionally applies the Duan factor
    mean(exp(residuals)).
    """
    X1 = np.asarray(X1, dtype=np.float64)
    linear = X1 @ fit.beta1
    if scale == "linear":
        return linear
    if scale == "log_then_back":
        out = np.exp(linear)
        if smearing:
            out = out * float(np.mean(np.exp(fit.residuals)))
        return out
    raise DataError(f"unknown prediction scale {scale!r}")


def design_matrix(
    ds: Dataset, cols, add_intercept: bool = True, drop_first: bool = True
) -> tuple[np.ndarray, list[str]]:
    """Numeric design matrix from dataset columns.

    Categorical columns expand to indicator columns (first level dropped when
    `drop_first`, avoiding collinearity with the intercept). Missing values
    are rejected: impute first.
    """
    blocks: list[np.ndarray] = []
    names: list[str] = []
    n = ds.n_rows
    if add_intercept:
        blocks.append(np.ones((n, 1)))
        names.append("intercept")
    for name in cols:
        col = ds.column(name)
        if col.missing_mask().any():
            raise DataError(f"column {name!r} has missing values; impute before encoding")
        if col.kind == CATEGORICAL:
            start = 1 if drop_first else 0
            for code in range(start, len(col.levels)):
                blocks.append((col.values == code).astype(np.float64)[:, None])
                names.append(f"{name}={col.levels[code]}")
        else:
            blocks.append(col.values[:, None])
            names.append(name)
    return np.hstack(blocks), names


def heckman_fit_to_dict(fit: HeckmanFit) -> dict:
    return {
        "probit": None
        if fit.probit is None
        else {
            "coef": fit.probit.coefficients.tolist(),
            "se": fit.probit.standard_errors.tolist(),
            "log_likelihood": fit.probit.log_likelihood,
            "converged": fit.probit.converged,
            "iterations": fit.probit.iterations,
        },
        "outcome": {
            "coef": fit.beta1.tolist(),
            "beta_lambda": fit.beta_lambda,
            "residual_scale": fit.residual_scale,
            "standard_errors": fit.standard_errors.tolist(),
        },
        "condition_number": fit.condition_number,
        "warnings": list(fit.warnings),
    }


def heckman_fit_to_json(fit: HeckmanFit) -> str:
    return json.dumps(heckman_fit_to_dict(fit), sort_keys=True, indent=2) + "\n"
