"""Evaluation metrics and the evasion-propensity aggregates.

AUC uses the midrank (Mann-Whitney) formulation; the coefficient of
determination and the relative mean squared error are always reported as an
explicitly labeled pair since they are complementary readings of the same
ratio. Propensity aggregates are ratios of sums, never means of ratios, and
monetary sums use compensated summation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import AlignmentError, MetricError, ReportError


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise AlignmentError("scores and labels must be aligned")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) pairs at every distinct score threshold, for external plotting."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes")
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y != 1)
    last = np.nonzero(np.diff(s, append=np.nan))[0]  # last index of each tie block
    fpr = np.concatenate(([0.0], fp[last] / n_neg))
    tpr = np.concatenate(([0.0], tp[last] / n_pos))
    return fpr, tpr


def mse(pred, truth, weights=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise AlignmentError("pred and truth must be aligned")
    err = (pred - truth) ** 2
    if weights is None:
        return float(err.mean())
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != pred.shape:
        raise AlignmentError("weights misaligned")
    return float(np.dot(w, err) / w.sum())


def r2(pred, truth, variant: str = "determination") -> float:
    """Either 1 - MSE/Var(truth) ("determination") or MSE/Var(truth)
    ("relative_mse"); the two always sum to one."""
    truth = np.asarray(truth, dtype=np.float64)
    var = float(np.mean((truth - truth.mean()) ** 2))
    if var <= 0:
        raise MetricError("truth has zero variance")
    ratio = mse(pred, truth) / var
    if variant == "determination":
        return 1.0 - ratio
    if variant == "relative_mse":
        return ratio
    raise MetricError(f"unknown r2 variant {variant!r}")


@dataclass(frozen=True)
class GroupPropensity:
    size: int
    total_bit: float
    total_bind: float
    propensity: float


@dataclass(frozen=True)
class PropensityReport:
    per_unit: np.ndarray          # NaN where the predicted base is <= 0
    overall: float
    overall_unfloored: float
    floored_count: int
    total_bit: float
    total_bind: float
    by_group: dict[str, GroupPropensity]


def propensity_report(bit_hat, bid, groups=None) -> PropensityReport:
    """Evasion propensities from predicted potential base and declared base.

    The undeclared part is bit_hat - bid floored at zero (the floored count
    and the unfloored aggregate are both reported). Group and overall
    propensities are ratios of sums; units with non-positive predicted base
    are excluded from per-unit ratios but kept in the sums.
    """
    bit_hat = np.asarray(bit_hat, dtype=np.float64)
    bid = np.asarray(bid, dtype=np.float64)
    if bit_hat.shape != bid.shape:
        raise AlignmentError("bit_hat and bid must be aligned")
    raw = bit_hat - bid
    bind = np.maximum(raw, 0.0)
    floored_count = int((raw < 0).sum())
    total_bit = math.fsum(bit_hat)
    total_bind = math.fsum(bind)
    if total_bit == 0:
        raise ReportError("total predicted tax base is zero")
    overall = total_bind / total_bit
    overall_unfloored = math.fsum(raw) / total_bit
    with np.errstate(divide="ignore", invalid="ignore"):
        per_unit = np.where(bit_hat > 0, bind / bit_hat, np.nan)
    by_group: dict[str, GroupPropensity] = {}
    if groups is not None:
        groups = np.asarray(groups)
        if groups.shape != bit_hat.shape:
            raise AlignmentError("groups misaligned")
        for label in sorted(set(groups.tolist()), key=str):
            mask = groups == label
            g_bit = math.fsum(bit_hat[mask])
            g_bind = math.fsum(bind[mask])
            if g_bit == 0:
                raise ReportError(f"group {label!r}: total predicted tax base is zero")
            by_group[str(label)] = GroupPropensity(
                size=int(mask.sum()),
                total_bit=g_bit,
                total_bind=g_bind,
                propensity=g_bind / g_bit,
            )
    return PropensityReport(
        per_unit=per_unit,
        overall=overall,
        overall_unfloored=overall_unfloored,
        floored_count=floored_count,
        total_bit=total_bit,
        total_bind=total_bind,
        by_group=by_group,
    )


def propensity_report_to_dict(report: PropensityReport) -> dict:
    return {
        "overall": report.overall,
        "overall_unfloored": report.overall_unfloored,
        "floored_count": report.floored_count,
        "total_bit": report.total_bit,
        "total_bind": report.total_bind,
        "by_group": {
            label: {
                "size": g.size,
                "total_bit": g.total_bit,
                "total_bind": g.total_bind,
                "propensity": g.propensity,
            }
            for label, g in report.by_group.items()
        },
    }


def propensity_report_to_json(report: PropensityReport) -> str:
    return json.dumps(propensity_report_to_dict(report), sort_keys=True, indent=2) + "\n"


def group_table_to_csv(report: PropensityReport, path) -> None:
    """Group table shaped like the published age-class tables."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "size", "total_bit", "total_bind", "propensity"])
        for label, g in report.by_group.items():
            writer.writerow([label, g.size, repr(g.total_bit), repr(g.total_bind), repr(g.propensity)])
        writer.writerow(
            ["overall", int(report.per_unit.size), repr(report.total_bit), repr(report.total_bind), repr(report.overall)]
        )
