"""Bootstrap interval estimation for predictions.

Resample the training set with replacement at full size, refit, predict a
fixed set of scoring rows, repeat B times: each scored unit then has an
empirical distribution of B predictions from which equal-tail quantile
intervals are read off. Replicate seeds derive from the master seed by a
counter scheme, so replicates are reproducible independently of execution
order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import AlignmentError, ConfigError, DataError, ReplicateError
from .rng import derive_seed, Stream

#: fit_fn contract: (resampled training Dataset, replicate seed) -> predictor,
#: where the predictor maps a Dataset to one prediction per row.
FitFn = Callable[[Dataset, int], Callable[[Dataset], np.ndarray]]


@dataclass(frozen=True)
class BootstrapEnsemble:
    B: int
    predictions: np.ndarray          # B x n, row j from replicate j
    row_ids: np.ndarray              # scoring rows, aligned to columns
    seed: int
    per_replicate_seeds: tuple[int, ...]


def bootstrap_fit_predict(
    train: Dataset,
    score_rows: Dataset,
    fit_fn: FitFn,
    B: int,
    seed: int = 0,
) -> BootstrapEnsemble:
    """Fit on B with-replacement resamples of `train`, predict `score_rows`."""
    if B < 2:
        raise ConfigError("need B >= 2 bootstrap replicates")
    n_train = train.n_rows
    if n_train == 0:
        raise DataError("empty training set")
    preds = np.empty((B, score_rows.n_rows))
    rep_seeds = []
    for j in range(B):
        rep_seed = derive_seed(seed, "replicate", j)
        rep_seeds.append(rep_seed)
        idx = Stream(derive_seed(rep_seed, "resample")).integers(n_train, n_train)
        resample = train.take(idx, reset_row_ids=True)
        try:
            predictor = fit_fn(resample, rep_seed)
            preds[j] = predictor(score_rows)
        except Exception as exc:  # noqa: BLE001 - re-raise with replicate index
            raise ReplicateError(f"replicate {j} failed: {exc}") from exc
    return BootstrapEnsemble(
        B=B,
        predictions=preds,
        row_ids=score_rows.row_ids.copy(),
        seed=seed,
        per_replicate_seeds=tuple(rep_seeds),
    )


def interval(ens: BootstrapEnsemble, lower_q: float, upper_q: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit empirical quantiles (linear interpolation) of the B predictions."""
    if not 0.0 <= lower_q < upper_q <= 1.0:
        raise ConfigError("need 0 <= lower_q < upper_q <= 1")
    lo, hi = np.quantile(ens.predictions, [lower_q, upper_q], axis=0, method="linear")
    return lo, hi


def coverage(lo, hi, truth) -> float:
    """Fraction of units whose interval contains the target value."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if lo.shape != truth.shape or hi.shape != truth.shape:
        raise AlignmentError("intervals and truth must be aligned")
    return float(np.mean((lo <= truth) & (truth <= hi)))


def ensemble_to_csv(ens: BootstrapEnsemble, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "replicate", "prediction"])
        for j in range(ens.B):
            for i, uid in enumerate(ens.row_ids):
                writer.writerow([int(uid), j, repr(float(ens.predictions[j, i]))])


def intervals_to_csv(row_ids, lo, hi, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "lo", "hi"])
        for uid, a, b in zip(row_ids, lo, hi):
            writer.writerow([int(uid), repr(float(a)), repr(float(b))])
