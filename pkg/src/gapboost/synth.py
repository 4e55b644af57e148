"""Synthetic data generators and the cutoff-based selection protocol.

Three generator families: the latent bivariate-normal selection model (the
parametric baseline's home turf), covariate-driven selection where the flag
is independent of the outcome given the covariates, and plain nonlinear
regression surfaces to be paired with `cutoff_selection`. All generators are
seed-deterministic and JSON-describable; the *_with_truth variants also
return the quantities a simulation oracle needs (full outcome vector, true
conditional mean, true inclusion probabilities).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy.special import ndtr

from .data import Column, Dataset, numeric_column
from .errors import DataError, ParameterError
from .rng import stream

HECKMAN_LATENT = "heckman_latent"
INDIRECT_COVARIATE = "indirect_covariate"
NONLINEAR_REGRESSION = "nonlinear_regression"


@dataclass(frozen=True)
class SyntheticDgp:
    kind: str
    params: Mapping[str, Any]
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (HECKMAN_LATENT, INDIRECT_COVARIATE, NONLINEAR_REGRESSION):
            raise ParameterError(f"unknown generator kind {self.kind!r}")
        if self.kind == HECKMAN_LATENT:
            s11, s12, s22 = self.params["cov"]
            if not (s11 > 0 and s22 > 0 and s11 * s22 - s12 * s12 > 0):
                raise ParameterError("error covariance must be symmetric positive definite")


@dataclass(frozen=True)
class DgpTruth:
    """Oracle-side view of one generated sample."""

    y: np.ndarray                     # outcome for every unit
    conditional_mean: np.ndarray      # E[y | x]
    pi: np.ndarray | None             # true P(selected | x), when defined
    selected: np.ndarray | None       # flag, when the generator selects
    latent: dict | None = None        # latent errors (u1, u2) for the bivariate model


# -- mean functions -----------------------------------------------------------


def mean_function(spec: Mapping[str, Any], X: np.ndarray) -> np.ndarray:
    """Evaluate a JSON-describable mean surface on covariate matrix X.

    Forms: "linear" (intercept + coef . x) or "terms", a sum of linear,
    quadratic, step and interaction terms.
    """
    form = spec.get("form", "linear")
    if form == "linear":
        coef = np.asarray(spec.get("coef", ()), dtype=np.float64)
        out = np.full(X.shape[0], float(spec.get("intercept", 0.0)))
        if coef.size:
            out = out + X[:, : coef.size] @ coef
        return out
    if form == "terms":
        out = np.full(X.shape[0], float(spec.get("intercept", 0.0)))
        for term in spec.get("terms", ()):
            kind = term["type"]
            c = float(term["coef"])
            if kind == "linear":
                out += c * X[:, term["col"]]
            elif kind == "quadratic":
                out += c * X[:, term["col"]] ** 2
            elif kind == "step":
                out += c * (X[:, term["col"]] > float(term.get("threshold", 0.0)))
            elif kind == "interaction":
                i, j = term["cols"]
                out += c * X[:, i] * X[:, j]
            else:
                raise ParameterError(f"unknown term type {kind!r}")
        return out
    raise ParameterError(f"unknown mean form {form!r}")


def selection_probability(spec: Mapping[str, Any], X: np.ndarray) -> np.ndarray:
    """Evaluate a JSON-describable selection-probability rule on X."""
    form = spec.get("form", "constant")
    if form == "constant":
        p = float(spec["p"])
        if not 0.0 < p < 1.0:
            raise ParameterError("constant selection probability must lie in (0, 1)")
        return np.full(X.shape[0], p)
    if form == "two_regime":
        col = int(spec.get("col", 0))
        thr = float(spec.get("threshold", 0.0))
        hi, lo = float(spec["hi"]), float(spec["lo"])
        for p in (hi, lo):
            if not 0.0 <= p <= 1.0:
                raise ParameterError("regime probabilities must lie in [0, 1]")
        return np.where(X[:, col] > thr, hi, lo)
    if form == "logistic":
        eta = mean_function(
            {"form": "linear", "intercept": spec.get("intercept", 0.0), "coef": spec.get("coef", ())}, X
        )
        return 1.0 / (1.0 + np.exp(-eta))
    raise ParameterError(f"unknown selection form {form!r}")


# -- generation ---------------------------------------------------------------


def _covariates(dgp: SyntheticDgp, n: int, k: int) -> np.ndarray:
    return stream(dgp.seed, "x").normals(n * k).reshape(n, k)


def _n_features(dgp: SyntheticDgp) -> int:
    p = dgp.params
    if dgp.kind == HECKMAN_LATENT:
        return max(len(p["beta_outcome"]), len(p["beta_selection"])) - 1
    return int(p.get("n_features", _spec_feature_need(p)))


def _spec_feature_need(p: Mapping[str, Any]) -> int:
    need = 1
    out = p.get("outcome", {})
    if out.get("form", "linear") == "linear":
        need = max(need, len(out.get("coef", ())))
    for term in out.get("terms", ()):
        cols = term.get("cols", [term.get("col", 0)])
        need = max(need, max(cols) + 1)
    sel = p.get("selection", {})
    if "col" in sel:
        need = max(need, sel["col"] + 1)
    need = max(need, len(sel.get("coef", ())))
    return need


def generate_with_truth(dgp: SyntheticDgp, n: int) -> tuple[Dataset, DgpTruth]:
    """Generate n units; return the public dataset and the oracle truth.

    The public dataset masks the outcome on non-selected units whenever the
    generator itself selects; `nonlinear_regression` has no selection of its
    own, so its outcome is visible everywhere (pair it with
    `cutoff_selection` to add a flag).
    """
    if n < 1:
        raise DataError("need n >= 1")
    k = _n_features(dgp)
    X = _covariates(dgp, n, k)
    cols: list[Column] = [numeric_column(f"x{j + 1}", X[:, j]) for j in range(k)]
    p = dgp.params

    if dgp.kind == HECKMAN_LATENT:
        b1 = np.zeros(k + 1)
        b1[: len(p["beta_outcome"])] = p["beta_outcome"]
        b2 = np.zeros(k + 1)
        b2[: len(p["beta_selection"])] = p["beta_selection"]
        s11, s12, s22 = (float(v) for v in p["cov"])
        e1 = stream(dgp.seed, "u1").normals(n)
        e2 = stream(dgp.seed, "u2").normals(n)
        u1 = math.sqrt(s11) * e1
        u2 = (s12 / math.sqrt(s11)) * e1 + math.sqrt(s22 - s12 * s12 / s11) * e2
        mean1 = b1[0] + X @ b1[1:]
        mean2 = b2[0] + X @ b2[1:]
        y = mean1 + u1
        selected = (mean2 + u2 > 0).astype(np.float64)
        pi = ndtr(mean2 / math.sqrt(s22))
        truth = DgpTruth(
            y=y, conditional_mean=mean1, pi=pi, selected=selected, latent={"u1": u1, "u2": u2}
        )
    elif dgp.kind == INDIRECT_COVARIATE:
        f = mean_function(p["outcome"], X)
        noise = float(p.get("noise_scale", 1.0))
        y = f + noise * stream(dgp.seed, "noise").normals(n)
        pi = selection_probability(p["selection"], X)
        selected = stream(dgp.seed, "flag").bernoulli(pi).astype(np.float64)
        truth = DgpTruth(y=y, conditional_mean=f, pi=pi, selected=selected)
    else:  # NONLINEAR_REGRESSION
        f = mean_function(p["outcome"], X)
        noise = float(p.get("noise_scale", 1.0))
        y = f + noise * stream(dgp.seed, "noise").normals(n)
        proxy_spec = p.get("proxy")
        if proxy_spec is not None:
            proxy = f + float(proxy_spec.get("noise_scale", 1.0)) * stream(dgp.seed, "proxy").normals(n)
            cols.append(numeric_column(proxy_spec.get("name", "proxy"), proxy))
        truth = DgpTruth(y=y, conditional_mean=f, pi=None, selected=None)

    if truth.selected is not None:
        visible = np.where(truth.selected == 1, y, np.nan)
        cols.append(numeric_column("y", visible))
        cols.append(numeric_column("selected", truth.selected))
        ds = Dataset(columns=tuple(cols), outcome="y", selection_flag="selected")
    else:
        cols.append(numeric_column("y", y))
        ds = Dataset(columns=tuple(cols), outcome="y")
    return ds, truth


def generate(dgp: SyntheticDgp, n: int) -> Dataset:
    """Public view only; see generate_with_truth."""
    return generate_with_truth(dgp, n)[0]


def cutoff_selection(
    ds: Dataset,
    proxy: str,
    percentile: float = 0.9,
    random_fraction: float = 0.05,
    seed: int = 0,
    flag_name: str = "selected",
) -> Dataset:
    """Flag the units above the proxy's empirical percentile plus a seeded
    random draw of `random_fraction` of all units (union of the two groups)."""
    if not 0.0 < percentile < 1.0:
        raise DataError("percentile must be in (0, 1)")
    if not 0.0 <= random_fraction <= 1.0:
        raise DataError("random_fraction must be in [0, 1]")
    col = ds.column(proxy)
    if col.kind != "numeric" or col.missing_mask().any():
        raise DataError(f"proxy {proxy!r} must be numeric with no missing values")
    n = ds.n_rows
    threshold = np.quantile(col.values, percentile, method="linear")
    flag = col.values > threshold
    n_random = int(math.floor(random_fraction * n + 0.5))
    if n_random > 0:
        drawn = stream(seed, "audit-draw").choice_no_replace(n, n_random)
        flag[drawn] = True
    out = ds.with_column(numeric_column(flag_name, flag.astype(np.float64)))
    return out.replace(selection_flag=flag_name)


# -- JSON spec ----------------------------------------------------------------


def dgp_to_json(dgp: SyntheticDgp) -> str:
    return json.dumps({"kind": dgp.kind, "params": dgp.params, "seed": dgp.seed}, sort_keys=True, indent=2) + "\n"


def dgp_from_dict(payload: Mapping[str, Any]) -> SyntheticDgp:
    return SyntheticDgp(kind=payload["kind"], params=payload["params"], seed=int(payload.get("seed", 0)))


def dgp_from_json(text: str) -> SyntheticDgp:
    return dgp_from_dict(json.loads(text))
