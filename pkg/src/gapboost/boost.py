"""Gradient boosting over CART base learners.

Stagewise additive fitting: start from the loss-optimal constant, then at
each stage fit a depth-limited tree to the negative gradient of the loss on
a fresh without-replacement bag, pick the stage coefficient by a weighted
one-dimensional line search on the bag, and update every row's prediction
scaled by the shrinkage factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, DegenerateTargetError, FitError, LossError
from .metrics import auc as _auc
from .metrics import mse as _mse
from .metrics import r2 as _r2
from .rng import derive_seed, stream
from .tree import FeatureTable, Tree, fit_tree, tree_from_dict, tree_to_dict

SQUARED_ERROR = "squared_error"
LOGISTIC = "logistic"


class SquaredErrorLoss:
    """L(y, f) = (y - f)^2, the regression loss."""

    tag = SQUARED_ERROR

    def evaluate(self, y, f):
        d = y - f
        return d * d

    def negative_gradient(self, y, f):
        return y - f

    def optimal_constant(self, y, w):
        return float(np.dot(w, y) / w.sum())

    def optimal_step(self, y, f, h, w):
        denom = np.dot(w, h * h)
        if denom <= 0:
            return 0.0
        return float(np.dot(w, h * (y - f)) / denom)


class LogisticLoss:
    """Binomial deviance on the log-odds scale, y in {0, 1}."""

    tag = LOGISTIC

    def evaluate(self, y, f):
        # y*softplus(-f) + (1-y)*softplus(f), stable at large |f|
        return y * np.logaddexp(0.0, -f) + (1.0 - y) * np.logaddexp(0.0, f)

    def negative_gradient(self, y, f):
        return y - _sigmoid(f)

    def optimal_constant(self, y, w):
        p = float(np.dot(w, y) / w.sum())
        if not 0.0 < p < 1.0:
            raise DegenerateTargetError("binary target has a single class")
        return float(np.log(p / (1.0 - p)))

    def optimal_step(self, y, f, h, w):
        # single Newton step from beta = 0
        p = _sigmoid(f)
        denom = np.dot(w, h * h * p * (1.0 - p))
        if denom <= 0:
            return 0.0
        return float(np.dot(w, h * (y - p)) / denom)


def _sigmoid(f):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(f, dtype=np.float64)))


_LOSSES = {SQUARED_ERROR: SquaredErrorLoss(), LOGISTIC: LogisticLoss()}


def get_loss(tag: str):
    try:
        return _LOSSES[tag]
    except KeyError:
        raise ConfigError(f"unknown loss {tag!r}") from None


@dataclass(frozen=True)
class BoostConfig:
    n_iter: int = 100
    depth: int = 2
    min_node: int = 10
    shrinkage: float = 0.1
    bag_fraction: float = 1.0
    loss: str = SQUARED_ERROR
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 0:
            raise ConfigError("n_iter must be >= 0")
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ConfigError("shrinkage must be in [0, 1]")
        if not 0.0 < self.bag_fraction <= 1.0:
            raise ConfigError("bag_fraction must be in (0, 1]")
        if self.depth < 0 or self.min_node < 1:
            raise ConfigError("need depth >= 0 and min_node >= 1")
        get_loss(self.loss)

    def to_dict(self) -> dict:
        return {
            "n_iter": self.n_iter,
            "depth": self.depth,
            "min_node": self.min_node,
            "shrinkage": self.shrinkage,
            "bag_fraction": self.bag_fraction,
            "loss": self.loss,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class BoostModel:
    f0: float
    stages: tuple[tuple[float, Tree], ...]
    config: BoostConfig
    features: tuple[str, ...]
    importance: dict[str, float]
    train_loss_path: tuple[float, ...]

    @property
    def loss(self):
        return get_loss(self.config.loss)


def fit_gbm(
    ds: Dataset,
    outcome: str,
    weights=None,
    config: BoostConfig = BoostConfig(),
    features: Sequence[str] | None = None,
) -> BoostModel:
    """Fit the boosted model targeting `outcome` over the dataset's features.

    Weights are normalized to mean one before fitting, so rescaling them by
    a positive constant leaves the fitted model bit-identical. Each stage's
    bag is an independent seeded draw, which makes an m-stage truncation of
    a fitted model identical to a fresh fit with n_iter = m.
    """
    loss = get_loss(config.loss)
    y = ds.values(outcome)
    if ds.column(outcome).kind != "numeric":
        raise DataError(f"outcome {outcome!r} must be numeric")
    if np.isnan(y).any():
        raise DataError(f"outcome {outcome!r} has missing values")
    if config.loss == LOGISTIC and not np.isin(y, (0.0, 1.0)).all():
        raise LossError("logistic loss needs outcomes in {0, 1}")
    n = ds.n_rows
    w = ds.weights if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise DataError("weights misaligned with rows")
    if np.any(w < 0) or w.sum() <= 0:
        raise FitError("weights must be non-negative with positive total")
    w = w / w.mean()
    if features is None:
        features = ds.feature_names(exclude=(outcome,))
    table = FeatureTable.from_dataset(ds, features)

    f0 = loss.optimal_constant(y, w)
    current = np.full(n, f0)
    stages: list[tuple[float, Tree]] = []
    loss_path: list[float] = []
    bag_size = int(np.ceil(config.bag_fraction * n))
    for m in range(config.n_iter):
        if bag_size >= n:
            bag = np.arange(n)
        else:
            bag = stream(config.seed, "bag", m).choice_no_replace(n, bag_size)
        residual = loss.negative_gradient(y[bag], current[bag])
        tree = fit_tree(
            _subset_table(table, bag),
            residual,
            w[bag],
            depth_limit=config.depth,
            min_node=config.min_node,
        )
        h_all = tree.predict(table)
        beta = loss.optimal_step(y[bag], current[bag], h_all[bag], w[bag])
        current = current + config.shrinkage * beta * h_all
        stages.append((beta, tree))
        loss_path.append(float(np.mean(w * loss.evaluate(y, current))))
    model = BoostModel(
        f0=f0,
        stages=tuple(stages),
        config=config,
        features=tuple(features),
        importance={},
        train_loss_path=tuple(loss_path),
    )
    return replace(model, importance=variable_importance(model))


def _subset_table(table: FeatureTable, rows: np.ndarray) -> FeatureTable:
    sub = FeatureTable(table.names, table.kinds, [a[rows] for a in table.arrays], table.levels)
    return sub


def predict_gbm(model: BoostModel, rows: Dataset) -> np.ndarray:
    """Raw model output per row: f0 + shrinkage * sum of beta_m * tree_m."""
    table = rows if isinstance(rows, FeatureTable) else FeatureTable.from_dataset(rows, model.features)
    out = np.full(table.n_rows, model.f0)
    for beta, tree in model.stages:
        out += model.config.shrinkage * beta * tree.predict(table)
    return out


def predict_proba(model: BoostModel, rows: Dataset) -> np.ndarray:
    """Probability transform 1 / (1 + exp(-F)) of the raw output."""
    if model.config.loss != LOGISTIC:
        raise ConfigError("probability transform is defined for logistic models")
    return _sigmoid(predict_gbm(model, rows))


def staged_predict(model: BoostModel, rows: Dataset) -> np.ndarray:
    """(n_iter + 1) x n matrix of raw outputs after 0, 1, ..., M stages."""
    table = rows if isinstance(rows, FeatureTable) else FeatureTable.from_dataset(rows, model.features)
    out = np.empty((len(model.stages) + 1, table.n_rows))
    out[0] = model.f0
    for m, (beta, tree) in enumerate(model.stages):
        out[m + 1] = out[m] + model.config.shrinkage * beta * tree.predict(table)
    return out


def truncate(model: BoostModel, n_iter: int) -> BoostModel:
    """First `n_iter` stages as a standalone model."""
    if not 0 <= n_iter <= len(model.stages):
        raise ConfigError("truncation length out of range")
    trimmed = replace(
        model,
        stages=model.stages[:n_iter],
        config=replace(model.config, n_iter=n_iter),
        train_loss_path=model.train_loss_path[:n_iter],
    )
    return replace(trimmed, importance=variable_importance(trimmed))


def variable_importance(model: BoostModel) -> dict[str, float]:
    """Share of total split-criterion reduction attributed to each feature."""
    gains = {name: 0.0 for name in model.features}
    for _, tree in model.stages:
        for name, g in tree.split_gains().items():
            gains[name] += g
    total = sum(gains.values())
    if total <= 0:
        return gains
    return {name: g / total for name, g in gains.items()}


# -- tuning ---------------------------------------------------------------------


@dataclass(frozen=True)
class Holdout:
    fraction: float = 0.7
    seed: int = 0


@dataclass(frozen=True)
class KFold:
    k: int = 5
    seed: int = 0


_METRIC_DIRECTION = {"auc": +1, "r2": +1, "mse": -1}
_METRIC_LOSS = {"auc": LOGISTIC, "r2": SQUARED_ERROR, "mse": SQUARED_ERROR}


def _score(metric: str, loss_tag: str, y: np.ndarray, raw: np.ndarray) -> float:
    if metric == "auc":
        return _auc(_sigmoid(raw), y)
    if metric == "r2":
        return _r2(raw, y, variant="determination")
    if metric == "mse":
        return _mse(raw, y)
    raise ConfigError(f"unknown metric {metric!r}")


def tune_grid(
    ds: Dataset,
    outcome: str,
    weights=None,
    grid: Sequence[BoostConfig] = (),
    protocol: Holdout | KFold = Holdout(),
    metric: str = "r2",
) -> tuple[BoostConfig, list[dict]]:
    """Score every config under the protocol; return the best and the table.

    Configs that differ only in n_iter are evaluated from one fit of the
    largest n_iter, scoring each truncation (stages are additive, so the
    truncated model equals a fresh fit of that length). Ties go to the
    earliest config in grid order.
    """
    if not grid:
        raise ConfigError("grid must be non-empty")
    if metric not in _METRIC_DIRECTION:
        raise ConfigError(f"unknown metric {metric!r}")
    for cfg in grid:
        if cfg.loss != _METRIC_LOSS[metric]:
            raise ConfigError(f"metric {metric!r} incompatible with loss {cfg.loss!r}")
    w = ds.weights if weights is None else np.asarray(weights, dtype=np.float64)

    if isinstance(protocol, Holdout):
        folds = [_holdout_masks(ds.n_rows, protocol)]
    elif isinstance(protocol, KFold):
        folds = _kfold_masks(ds.n_rows, protocol)
    else:
        raise ConfigError("protocol must be Holdout or KFold")

    # group configs sharing everything but n_iter
    groups: dict[tuple, list[int]] = {}
    for gi, cfg in enumerate(grid):
        key = (cfg.depth, cfg.min_node, cfg.shrinkage, cfg.bag_fraction, cfg.loss, cfg.seed)
        groups.setdefault(key, []).append(gi)

    scores = np.zeros(len(grid))
    table: list[dict] = []
    for fold_i, (train_mask, eval_mask) in enumerate(folds):
        ds_train = ds.mask_rows(train_mask)
        w_train = w[train_mask]
        ds_eval = ds.mask_rows(eval_mask)
        y_eval = ds_eval.values(outcome)
        for key in sorted(groups):
            members = groups[key]
            max_iter = max(grid[gi].n_iter for gi in members)
            base = replace(grid[members[0]], n_iter=max_iter)
            model = fit_gbm(ds_train, outcome, w_train, base)
            staged = staged_predict(model, ds_eval)
            for gi in members:
                s = _score(metric, base.loss, y_eval, staged[grid[gi].n_iter])
                scores[gi] += s
                table.append({"config_index": gi, "config": grid[gi].to_dict(), "fold": fold_i, "metric": metric, "score": s})
    scores /= len(folds)
    direction = _METRIC_DIRECTION[metric]
    best_gi = max(range(len(grid)), key=lambda gi: (direction * scores[gi], -gi))
    table.sort(key=lambda r: (r["config_index"], r["fold"]))
    return grid[best_gi], table


def _holdout_masks(n: int, protocol: Holdout):
    if not 0 < protocol.fraction < 1:
        raise ConfigError("holdout fraction must be in (0, 1)")
    perm = stream(protocol.seed, "tune-holdout").permutation(n)
    n_train = min(max(int(np.floor(protocol.fraction * n + 0.5)), 1), n - 1)
    train = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    return train, ~train


def _kfold_masks(n: int, protocol: KFold):
    if not 2 <= protocol.k <= n:
        raise ConfigError("k must be in [2, n_rows]")
    perm = stream(protocol.seed, "tune-kfold").permutation(n)
    folds = []
    for i in range(protocol.k):
        eval_mask = np.zeros(n, dtype=bool)
        eval_mask[perm[i :: protocol.k]] = True
        folds.append((~eval_mask, eval_mask))
    return folds


def make_grid(n_iters, depths, shrinkages, **common) -> list[BoostConfig]:
    """Cartesian grid in deterministic order (n_iter fastest)."""
    grid = []
    for depth in depths:
        for shrink in shrinkages:
            for n_iter in n_iters:
                grid.append(BoostConfig(n_iter=int(n_iter), depth=int(depth), shrinkage=float(shrink), **common))
    return grid


def score_table_to_csv(table: list[dict], path) -> None:
    import csv as _csv

    keys = ["config_index", "fold", "metric", "score"]
    cfg_keys = ["n_iter", "depth", "min_node", "shrinkage", "bag_fraction", "loss", "seed"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(keys + cfg_keys)
        for row in table:
            writer.writerow([row[k] for k in keys] + [row["config"][k] for k in cfg_keys])


# -- serialization ----------------------------------------------------------------


def model_to_dict(model: BoostModel) -> dict:
    return {
        "config": model.config.to_dict(),
        "f0": model.f0,
        "stages": [{"beta": beta, "tree": tree_to_dict(tree)} for beta, tree in model.stages],
        "features": list(model.features),
        "importance": model.importance,
        "train_loss_path": list(model.train_loss_path),
    }


def model_from_dict(payload: dict) -> BoostModel:
    return BoostModel(
        f0=float(payload["f0"]),
        stages=tuple((float(st["beta"]), tree_from_dict(st["tree"])) for st in payload["stages"]),
        config=BoostConfig(**payload["config"]),
        features=tuple(payload["features"]),
        importance={k: float(v) for k, v in payload["importance"].items()},
        train_loss_path=tuple(float(v) for v in payload["train_loss_path"]),
    )


def model_to_json(model: BoostModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True)


def model_from_json(text: str) -> BoostModel:
    return model_from_dict(json.loads(text))
