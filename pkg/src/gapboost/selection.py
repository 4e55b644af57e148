"""The 2-step bias-corrected pipeline.

Step 1 fits a boosted classifier on every unit targeting the selection flag,
yielding estimated inclusion probabilities for the whole population. Step 2
fits a boosted regressor on the selected units only, weighting each by the
inverse of its estimated inclusion probability (normalized to mean one; the
dropped proportionality constant cannot change any weighted argmin). The
Monte Carlo check of the underlying identity lives here too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .boost import BoostConfig, BoostModel, fit_gbm, predict_gbm, predict_proba
from .data import Dataset
from .errors import (
    ConfigError,
    DataError,
    DegenerateTargetError,
    FitError,
    TheoremPreconditionError,
)
from .metrics import auc as _auc
from .metrics import mse as _mse
from .metrics import r2 as _r2
from .rng import derive_seed
from .synth import SyntheticDgp, generate_with_truth

DEFAULT_CLIP_FLOOR = 1e-3


@dataclass(frozen=True)
class TwoStepModel:
    step1: BoostModel
    step2: BoostModel
    pi_hat: np.ndarray           # every unit, selected or not
    nu: np.ndarray               # selected units, mean one
    clip_floor: float
    selected_row_ids: np.ndarray


def estimate_inclusion_probabilities(
    ds: Dataset,
    config: BoostConfig,
    features: Sequence[str] | None = None,
    clip_floor: float = DEFAULT_CLIP_FLOOR,
    return_model: bool = False,
):
    """Fit the step-1 classifier on all rows and return per-row inclusion
    probabilities, clipped below at `clip_floor`."""
    if ds.selection_flag is None:
        raise DataError("dataset has no selection flag")
    if config.loss != "logistic":
        raise ConfigError("step-1 classifier must use the logistic loss")
    flag = ds.values(ds.selection_flag)
    if flag.min() == flag.max():
        raise DegenerateTargetError("selection flag has a single class")
    model = fit_gbm(ds, ds.selection_flag, config=config, features=features)
    pi_hat = np.maximum(predict_proba(model, ds), clip_floor)
    if return_model:
        return pi_hat, model
    return pi_hat


def inverse_weights(pi_hat, selected, clip_floor: float = DEFAULT_CLIP_FLOOR) -> np.ndarray:
    """Inverse-probability weights for the selected units, normalized to mean 1.

    Probabilities below `clip_floor` are clipped first, the standard trimming
    that keeps weights bounded under near-separation.
    """
    pi_hat = np.asarray(pi_hat, dtype=np.float64)
    selected = np.asarray(selected)
    if clip_floor <= 0:
        raise ConfigError("clip_floor must be positive")
    if np.any(pi_hat <= 0) or np.any(pi_hat > 1):
        raise DataError("probabilities must lie in (0, 1]")
    raw = 1.0 / np.maximum(pi_hat[selected == 1], clip_floor)
    return raw / raw.mean()


def fit_two_step(
    ds: Dataset,
    outcome: str,
    step1_config: BoostConfig,
    step2_config: BoostConfig,
    clip_floor: float = DEFAULT_CLIP_FLOOR,
    features: Sequence[str] | None = None,
    add_probability_covariate: bool = False,
) -> TwoStepModel:
    """Full pipeline: inclusion probabilities on all rows, inverse weights,
    weighted regression on the selected rows.

    `add_probability_covariate` switches to the alternative correction that
    feeds the estimated probability to the regressor as an extra covariate
    instead of weighting (off by default).
    """
    if ds.selection_flag is None:
        raise DataError("dataset has no selection flag")
    sel = ds.selected_mask()
    y = ds.values(outcome)
    if np.isnan(y[sel]).any():
        raise DataError("outcome must be observed on every selected row")
    if int(sel.sum()) < step2_config.min_node:
        raise FitError("fewer selected rows than the step-2 minimum node size")
    if features is None:
        features = ds.feature_names(exclude=(outcome,))
    pi_hat, step1 = estimate_inclusion_probabilities(
        ds, step1_config, features=features, clip_floor=clip_floor, return_model=True
    )
    ds_sel = ds.mask_rows(sel)
    step2_features = tuple(features)
    if add_probability_covariate:
        from .data import numeric_column

        ds_sel = ds_sel.with_column(numeric_column("pi_hat", pi_hat[sel]))
        step2_features = step2_features + ("pi_hat",)
        nu = np.ones(int(sel.sum()))
    else:
        nu = inverse_weights(pi_hat, ds.values(ds.selection_flag), clip_floor)
    step2 = fit_gbm(ds_sel, outcome, weights=nu, config=step2_config, features=step2_features)
    return TwoStepModel(
        step1=step1,
        step2=step2,
        pi_hat=pi_hat,
        nu=nu,
        clip_floor=clip_floor,
        selected_row_ids=ds.row_ids[sel],
    )


def predict_two_step(model: TwoStepModel, rows: Dataset) -> np.ndarray:
    return predict_gbm(model.step2, rows)


def two_step_report(model: TwoStepModel, ds: Dataset, outcome: str) -> dict:
    """In-sample pipeline summary: step-1 AUC and importance, weight
    diagnostics, step-2 fit quality on the selected rows."""
    sel = ds.selected_mask()
    flag = ds.values(ds.selection_flag)
    pred_sel = predict_gbm(model.step2, ds.mask_rows(sel))
    y_sel = ds.values(outcome)[sel]
    raw = 1.0 / np.maximum(model.pi_hat[sel], model.clip_floor)
    return {
        "step1": {
            "auc": _auc(model.pi_hat, flag),
            "importance": model.step1.importance,
        },
        "weights": {
            "min": float(model.nu.min()),
            "max": float(model.nu.max()),
            "mean": float(model.nu.mean()),
            "clipped_count": int((model.pi_hat[sel] <= model.clip_floor).sum()),
        },
        "step2": {
            "r2": _r2(pred_sel, y_sel, variant="determination"),
            "mse": _mse(pred_sel, y_sel),
        },
    }


def two_step_report_json(model: TwoStepModel, ds: Dataset, outcome: str) -> str:
    return json.dumps(two_step_report(model, ds, outcome), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class BiasCorrectionReport:
    population_loss: float
    population_se: float
    weighted_loss: float
    weighted_se: float
    unweighted_loss: float
    unweighted_se: float
    replications: int
    n: int


def check_bias_correction(
    dgp: SyntheticDgp,
    predictor: Callable[[Dataset], np.ndarray],
    loss,
    n: int,
    replications: int,
    seed: int = 0,
) -> BiasCorrectionReport:
    """Monte Carlo check of the reweighting identity for a fixed predictor.

    Per replication: draw n units, evaluate the per-unit loss of the fixed
    predictor, and record (a) the all-units mean, (b) the mean over selected
    units weighted by the inverse TRUE inclusion probability (weights
    normalized within the replication), (c) the plain mean over selected
    units. With selection driven by the covariates, (b) is consistent for
    the population loss while (c) is not.
    """
    if replications < 2:
        raise ConfigError("need at least 2 replications")
    pop, weighted, unweighted = [], [], []
    for r in range(replications):
        rep = SyntheticDgp(dgp.kind, dgp.params, seed=derive_seed(seed, "bias-check", r, dgp.seed))
        ds, truth = generate_with_truth(rep, n)
        if truth.pi is None or truth.selected is None:
            raise TheoremPreconditionError("generator does not expose true selection probabilities")
        if np.any(truth.pi <= 0):
            raise TheoremPreconditionError("true selection probability is 0 on the support")
        losses = loss.evaluate(truth.y, predictor(ds))
        sel = truth.selected == 1
        if not sel.any():
            raise FitError(f"replication {r}: no unit selected")
        w = 1.0 / truth.pi[sel]
        pop.append(float(np.mean(losses)))
        plain = float(np.mean(losses[sel]))
        if np.all(w == w[0]):
            weighted.append(plain)  # constant weights: weighted mean IS the mean
        else:
            weighted.append(float(np.sum(w * losses[sel]) / np.sum(w)))
        unweighted.append(plain)

    def _se(vals):
        return float(np.std(vals, ddof=1) / np.sqrt(len(vals)))

    return BiasCorrectionReport(
        population_loss=float(np.mean(pop)),
        population_se=_se(pop),
        weighted_loss=float(np.mean(weighted)),
        weighted_se=_se(weighted),
        unweighted_loss=float(np.mean(unweighted)),
        unweighted_se=_se(unweighted),
        replications=replications,
        n=n,
    )
