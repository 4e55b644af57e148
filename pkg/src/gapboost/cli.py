"""Command-line front end: prepare, generate, fit, bootstrap, propensity, compare.

One JSON config drives every command; all randomness derives from a single
master seed through named sub-streams, so a rerun with the same config and
seed produces byte-identical artifacts. Reports are JSON, tables are CSV,
and every file is written atomically (temp + rename).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import boost, data, heckman, metrics, selection, synth, uncertainty
from .errors import ConfigError, DataError, DegenerateTargetError, GapboostError, NumericalError
from .rng import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


# -- atomic artifact writing -----------------------------------------------------


def _write_atomic(path: Path, content: str | bytes) -> None:
    mode = "wb" if isinstance(content, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _write_json(path: Path, payload: dict) -> None:
    _write_atomic(path, json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")


def _write_csv_atomic(path: Path, write_fn) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- config handling ---------------------------------------------------------------


def load_config(path, seed_override=None, out_override=None) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    if out_override is not None:
        cfg["out"] = str(out_override)
    cfg.setdefault("seed", 0)
    cfg.setdefault("out", "outputs")
    return cfg


def _cfg(cfg: dict, key: str, required: bool = True, default=None):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"config key {key!r} missing")
    return default


def _boost_config(payload: dict, default_seed: int) -> boost.BoostConfig:
    known = {"n_iter", "depth", "min_node", "shrinkage", "bag_fraction", "loss", "seed"}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown boosting fields: {sorted(unknown)}")
    payload = dict(payload)
    payload.setdefault("seed", default_seed)
    try:
        return boost.BoostConfig(**payload)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(spec: dict, default_seed: int) -> list[boost.BoostConfig]:
    if "grid" in spec:
        base = {k: v for k, v in spec.items() if k not in ("grid", "protocol", "metric")}
        return [_boost_config({**base, **g}, default_seed) for g in spec["grid"]]
    return [_boost_config({k: v for k, v in spec.items() if k not in ("protocol", "metric")}, default_seed)]


def _protocol(spec: dict, default_seed: int):
    proto = spec.get("protocol", {"holdout": 0.7})
    if "holdout" in proto:
        return boost.Holdout(fraction=float(proto["holdout"]), seed=proto.get("seed", default_seed))
    if "kfold" in proto:
        return boost.KFold(k=int(proto["kfold"]), seed=proto.get("seed", default_seed))
    raise ConfigError("protocol must specify 'holdout' or 'kfold'")


def _load_input(cfg: dict) -> data.Dataset:
    inp = _cfg(cfg, "input")
    master = int(cfg["seed"])
    if "csv" in inp:
        ds = data.load_csv(inp["csv"], inp["schema"], inp.get("missing_token", ""))
    elif "dgp" in inp:
        spec = dict(inp["dgp"])
        spec.setdefault("seed", derive_seed(master, "dgp"))
        ds = synth.generate(synth.dgp_from_dict(spec), int(inp["n"]))
    else:
        raise ConfigError("input must provide 'csv' or 'dgp'")
    cutoff = cfg.get("cutoff")
    if cutoff:
        ds = synth.cutoff_selection(
            ds,
            proxy=cutoff["proxy"],
            percentile=float(cutoff.get("percentile", 0.9)),
            random_fraction=float(cutoff.get("random_fraction", 0.05)),
            seed=cutoff.get("seed", derive_seed(master, "cutoff")),
        )
    roles = {}
    if cfg.get("outcome"):
        roles["outcome"] = cfg["outcome"]
    if cfg.get("selection_flag"):
        roles["selection_flag"] = cfg["selection_flag"]
    if roles:
        ds = ds.with_roles(**roles)
    return ds


def _conditional_mean_truth(cfg: dict, ds: data.Dataset) -> np.ndarray | None:
    """True E[Y|X] per row, available only for generated inputs."""
    inp = cfg.get("input", {})
    if "dgp" not in inp:
        return None
    spec = dict(inp["dgp"])
    spec.setdefault("seed", derive_seed(int(cfg["seed"]), "dgp"))
    _, truth = synth.generate_with_truth(synth.dgp_from_dict(spec), int(inp["n"]))
    return truth.conditional_mean[ds.row_ids]


# -- prepare ---------------------------------------------------------------------


_STEP_OPS = {"impute_mean", "log_transform", "filter_outliers_log", "drop_missing", "drop_columns", "stratified_undersample"}


def cmd_prepare(cfg: dict) -> dict:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = cfg.get("prepare", {}).get("steps", [])
    inp = _cfg(cfg, "input")
    report: dict = {"steps": [], "input_rows": None, "output_rows": None}

    if not steps and "csv" in inp:
        # contract: an empty step list copies the input bytes untouched
        data.load_csv(inp["csv"], inp["schema"], inp.get("missing_token", ""))  # still validated
        _write_atomic(out_dir / "prepared.csv", Path(inp["csv"]).read_bytes())
        ds = data.load_csv(inp["csv"], inp["schema"], inp.get("missing_token", ""))
        report["input_rows"] = report["output_rows"] = ds.n_rows
        _write_json(out_dir / "prepare_report.json", report)
        return report

    ds = _load_input(cfg)
    report["input_rows"] = ds.n_rows
    master = int(cfg["seed"])
    for i, step in enumerate(steps):
        op = step.get("op")
        if op not in _STEP_OPS:
            raise ConfigError(f"unknown prepare op {op!r}")
        entry = {"op": op}
        before = ds.n_rows
        try:
            if op == "impute_mean":
                ds = data.impute_mean(ds, step["col"])
                entry["col"] = step["col"]
            elif op == "log_transform":
                ds = data.log_transform(ds, step["col"], float(step.get("offset", 0.0)))
                entry["col"] = step["col"]
            elif op == "filter_outliers_log":
                ds, removed = data.filter_outliers_log(ds, step["cols"], float(step.get("k", 1.5)))
                entry["cols"] = step["cols"]
                entry["removed"] = removed
                entry["rows_removed"] = before - ds.n_rows
            elif op == "drop_missing":
                ds = data.drop_missing(ds, step["col"])
                entry["col"] = step["col"]
                entry["rows_removed"] = before - ds.n_rows
            elif op == "drop_columns":
                ds = ds.drop_columns(step["cols"])
                entry["cols"] = step["cols"]
            elif op == "stratified_undersample":
                ds = data.stratified_undersample(
                    ds,
                    strata_cols=step["strata_cols"],
                    keep_all_flag=step.get("keep_all_flag", 1),
                    target_fraction=float(step["target_fraction"]),
                    seed=step.get("seed", derive_seed(master, "undersample", i)),
                )
                entry["strata_cols"] = step["strata_cols"]
                entry["rows_removed"] = before - ds.n_rows
        except GapboostError as exc:
            raise type(exc)(f"prepare step {i} ({op}): {exc}") from exc
        report["steps"].append(entry)
    report["output_rows"] = ds.n_rows
    _write_csv_atomic(out_dir / "prepared.csv", lambda tmp: data.write_csv(ds, tmp, inp.get("missing_token", "")))
    _write_json(out_dir / "prepare_report.json", report)
    return report


# -- generate --------------------------------------------------------------------


def cmd_generate(cfg: dict) -> dict:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    inp = _cfg(cfg, "input")
    if "dgp" not in inp:
        raise ConfigError("generate needs input.dgp")
    ds = _load_input(cfg)
    _write_csv_atomic(out_dir / "generated.csv", lambda tmp: data.write_csv(ds, tmp))
    report = {"rows": ds.n_rows, "columns": list(ds.column_names)}
    _write_json(out_dir / "generate_report.json", report)
    return report


# -- fit -------------------------------------------------------------------------


def _fit_pipeline(cfg: dict):
    """Shared by fit/compare: tune + fit both models, evaluate, build report."""
    master = int(cfg["seed"])
    ds = _load_input(cfg)
    outcome = _cfg(cfg, "outcome")
    if ds.selection_flag is None:
        raise DataError("fit needs a selection flag (config key 'selection_flag' or a cutoff rule)")
    flag = ds.values(ds.selection_flag)
    if flag.min() == flag.max():
        raise DegenerateTargetError("selection flag has a single class")
    features = cfg.get("features")
    if features is None:
        features = list(ds.feature_names(exclude=(outcome,)))
    clip_floor = float(cfg.get("clip_floor", selection.DEFAULT_CLIP_FLOOR))

    # step 1: classifier for inclusion probabilities, tuned on the full data
    step1_spec = _cfg(cfg, "step1")
    grid1 = _grid(step1_spec, derive_seed(master, "step1"))
    if len(grid1) > 1:
        cfg1, table1 = boost.tune_grid(
            ds, ds.selection_flag, None, grid1, _protocol(step1_spec, derive_seed(master, "step1-protocol")),
            step1_spec.get("metric", "auc"),
        )
    else:
        cfg1, table1 = grid1[0], []
    pi_hat, model1 = selection.estimate_inclusion_probabilities(
        ds, cfg1, features=features, clip_floor=clip_floor, return_model=True
    )
    step1_auc = metrics.auc(pi_hat, flag)

    # audited units: train/test split at the configured fraction
    sel_mask = ds.selected_mask()
    ds_sel = ds.mask_rows(sel_mask)
    if np.isnan(ds_sel.values(outcome)).any():
        raise DataError("outcome must be observed on every selected row")
    train_fraction = float(cfg.get("train_fraction", 0.7))
    sel_train, sel_test = data.train_test_split(ds_sel, train_fraction, derive_seed(master, "audit-split"))

    # inverse weights for the selected rows, then the train subset's share
    nu_sel = selection.inverse_weights(pi_hat[sel_mask], np.ones(ds_sel.n_rows), clip_floor)
    in_train = np.isin(ds_sel.row_ids, sel_train.row_ids)
    nu_train = nu_sel[in_train]

    # step 2: weighted regressor on the audited training rows
    step2_spec = _cfg(cfg, "step2")
    grid2 = _grid(step2_spec, derive_seed(master, "step2"))
    if len(grid2) > 1:
        cfg2, table2 = boost.tune_grid(
            sel_train, outcome, nu_train, grid2,
            _protocol(step2_spec, derive_seed(master, "step2-protocol")), step2_spec.get("metric", "r2"),
        )
    else:
        cfg2, table2 = grid2[0], []
    model2 = boost.fit_gbm(sel_train, outcome, nu_train, cfg2, features=features)

    # Heckman baseline: probit on everyone, stage B on the same training rows
    heck_spec = _cfg(cfg, "heckman")
    X1, x1_names = heckman.design_matrix(ds, heck_spec["x1"])
    X2, x2_names = heckman.design_matrix(ds, heck_spec["x2"])
    log_outcome = bool(heck_spec.get("log_outcome", False))
    stage_b = np.isin(ds.row_ids, sel_train.row_ids)
    y_train = ds.values(outcome)[stage_b]
    if log_outcome:
        if np.any(y_train <= 0):
            raise DataError("log_outcome requires a strictly positive outcome on the training rows")
        y_train = np.log(y_train)
    heck_fit = heckman.fit_heckman_two_step(X1, X2, y_train, flag, stage_b_rows=stage_b)
    heck_scale = "log_then_back" if log_outcome else "linear"

    def heck_predict(row_mask: np.ndarray) -> np.ndarray:
        return heckman.predict_heckman(heck_fit, X1[row_mask], scale=heck_scale)

    # evaluation sets: audited test rows, and non-selected rows when the truth exists
    y_all = ds.values(outcome)
    test_mask = np.isin(ds.row_ids, sel_test.row_ids)
    evaluations = {}
    eval_sets = [("audited_test", test_mask)]
    nonsel_mask = ~sel_mask
    if nonsel_mask.any() and not np.isnan(y_all[nonsel_mask]).any():
        eval_sets.append(("not_audited", nonsel_mask))
    gb_pred_all = boost.predict_gbm(model2, ds)
    for name, mask in eval_sets:
        y_eval = y_all[mask]
        preds = {"two_step_gb": gb_pred_all[mask], "heckman": heck_predict(mask)}
        entry = {}
        for model_name, pred in preds.items():
            entry[model_name] = {
                "mse": metrics.mse(pred, y_eval),
                "r2_determination": metrics.r2(pred, y_eval, "determination"),
                "relative_mse": metrics.r2(pred, y_eval, "relative_mse"),
                "predicted_total": math.fsum(pred),
            }
        entry["observed_total"] = math.fsum(y_eval)
        entry["n"] = int(mask.sum())
        evaluations[name] = entry

    report = {
        "seed": master,
        "n_rows": ds.n_rows,
        "n_selected": int(sel_mask.sum()),
        "train_fraction": train_fraction,
        "step1": {
            "best_config": cfg1.to_dict(),
            "auc_full_data": step1_auc,
            "importance": model1.importance,
        },
        "step2": {
            "best_config": cfg2.to_dict(),
            "importance": model2.importance,
        },
        "weights": {
            "min": float(nu_sel.min()),
            "max": float(nu_sel.max()),
            "mean": float(nu_sel.mean()),
            "clipped_count": int((pi_hat[sel_mask] <= clip_floor).sum()),
        },
        "heckman": heckman.heckman_fit_to_dict(heck_fit) | {"x1": x1_names, "x2": x2_names, "log_outcome": log_outcome},
        "evaluation": evaluations,
    }
    artifacts = {
        "model1": model1,
        "model2": model2,
        "heck_fit": heck_fit,
        "tables": {"step1": table1, "step2": table2},
        "pi_hat": pi_hat,
        "nu_train": nu_train,
        "train_row_ids": sel_train.row_ids,
        "test_row_ids": sel_test.row_ids,
    }
    return ds, report, artifacts


def cmd_fit(cfg: dict) -> dict:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, report, art = _fit_pipeline(cfg)
    envelope = {
        "step1": boost.model_to_dict(art["model1"]),
        "step2": boost.model_to_dict(art["model2"]),
        "clip_floor": float(cfg.get("clip_floor", selection.DEFAULT_CLIP_FLOOR)),
        "train_row_ids": art["train_row_ids"].tolist(),
        "test_row_ids": art["test_row_ids"].tolist(),
        "nu_train": art["nu_train"].tolist(),
    }
    _write_json(out_dir / "two_step_model.json", envelope)
    _write_json(out_dir / "heckman_fit.json", heckman.heckman_fit_to_dict(art["heck_fit"]))
    _write_json(out_dir / "fit_report.json", report)
    for step_name, table in art["tables"].items():
        if table:
            _write_csv_atomic(out_dir / f"scores_{step_name}.csv", lambda tmp, t=table: boost.score_table_to_csv(t, tmp))
    return report


# -- bootstrap --------------------------------------------------------------------


def cmd_bootstrap(cfg: dict, model_path) -> dict:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        with open(model_path, encoding="utf-8") as fh:
            envelope = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model artifact {model_path}: {exc}") from exc
    step2_cfg = boost.BoostConfig(**envelope["step2"]["config"])
    features = tuple(envelope["step2"]["features"])
    boot_spec = cfg.get("bootstrap", {})
    B = int(boot_spec.get("B", 100))
    lo_q, hi_q = (float(q) for q in boot_spec.get("quantiles", (0.05, 0.95)))
    score_set = boot_spec.get("score", "test")

    ds = _load_input(cfg)
    outcome = _cfg(cfg, "outcome")
    train_ids = np.asarray(envelope["train_row_ids"], dtype=np.int64)
    test_ids = np.asarray(envelope["test_row_ids"], dtype=np.int64)
    nu_train = np.asarray(envelope["nu_train"], dtype=np.float64)
    train_mask = np.isin(ds.row_ids, train_ids)
    train = ds.mask_rows(train_mask).replace(weights=nu_train)
    if score_set == "train":
        score_rows = ds.mask_rows(train_mask)
    elif score_set == "test":
        score_rows = ds.mask_rows(np.isin(ds.row_ids, test_ids))
    elif score_set == "selected":
        score_rows = ds.mask_rows(ds.selected_mask())
    elif score_set == "all":
        score_rows = ds
    else:
        raise ConfigError(f"unknown bootstrap score set {score_set!r}")

    def fit_fn(resample, rep_seed):
        rep_cfg = boost.BoostConfig(**{**step2_cfg.to_dict(), "seed": rep_seed})
        model = boost.fit_gbm(resample, outcome, resample.weights, rep_cfg, features=features)
        return lambda rows: boost.predict_gbm(model, rows)

    ens = uncertainty.bootstrap_fit_predict(
        train, score_rows, fit_fn, B=B, seed=derive_seed(int(cfg["seed"]), "bootstrap")
    )
    lo, hi = uncertainty.interval(ens, lo_q, hi_q)
    report = {"B": B, "quantiles": [lo_q, hi_q], "score_set": score_set, "n_scored": score_rows.n_rows}
    y_score = score_rows.values(outcome)
    have_y = ~np.isnan(y_score)
    if have_y.any():
        report["coverage_point_outcome"] = uncertainty.coverage(lo[have_y], hi[have_y], y_score[have_y])
    truth = _conditional_mean_truth(cfg, score_rows)
    if truth is not None:
        report["coverage_conditional_mean"] = uncertainty.coverage(lo, hi, truth)
    _write_csv_atomic(out_dir / "ensemble.csv", lambda tmp: uncertainty.ensemble_to_csv(ens, tmp))
    _write_csv_atomic(out_dir / "intervals.csv", lambda tmp: uncertainty.intervals_to_csv(ens.row_ids, lo, hi, tmp))
    _write_json(out_dir / "bootstrap_report.json", report)
    return report


# -- propensity --------------------------------------------------------------------


def cmd_propensity(cfg: dict, model_path) -> dict:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        with open(model_path, encoding="utf-8") as fh:
            envelope = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model artifact {model_path}: {exc}") from exc
    model2 = boost.model_from_dict(envelope["step2"])
    ds = _load_input(cfg)
    prop_spec = cfg.get("propensity", {})
    bid_col = prop_spec.get("bid")
    if not bid_col or not ds.has_column(bid_col):
        raise DataError("propensity needs config propensity.bid naming an existing column")
    bit_hat = boost.predict_gbm(model2, ds)
    bid = ds.values(bid_col)
    groups = None
    group_col = prop_spec.get("group_by")
    if group_col:
        col = ds.column(group_col)
        groups = col.labels() if col.kind == data.CATEGORICAL else col.values
    report_obj = metrics.propensity_report(bit_hat, bid, groups)
    _write_atomic(out_dir / "propensity.json", metrics.propensity_report_to_json(report_obj))
    _write_csv_atomic(out_dir / "propensity_groups.csv", lambda tmp: metrics.group_table_to_csv(report_obj, tmp))
    _write_csv_atomic(
        out_dir / "propensity_per_unit.csv",
        lambda tmp: _per_unit_csv(tmp, ds.row_ids, bit_hat, bid, report_obj.per_unit),
    )
    return metrics.propensity_report_to_dict(report_obj)


def _per_unit_csv(path, row_ids, bit_hat, bid, per_unit):
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["unit_id", "bit_hat", "bid", "propensity"])
        for uid, b, d, p in zip(row_ids, bit_hat, bid, per_unit):
            writer.writerow([int(uid), repr(float(b)), repr(float(d)), "" if np.isnan(p) else repr(float(p))])


# -- compare -----------------------------------------------------------------------


def cmd_compare(cfg: dict) -> dict:
    report = cmd_fit(cfg)
    out_dir = Path(cfg["out"])

    def write_table(tmp):
        import csv as _csv

        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["set", "model", "mse", "relative_mse", "r2_determination"])
            for set_name in sorted(report["evaluation"]):
                entry = report["evaluation"][set_name]
                for model_name in ("heckman", "two_step_gb"):
                    m = entry[model_name]
                    writer.writerow(
                        [set_name, model_name, repr(m["mse"]), repr(m["relative_mse"]), repr(m["r2_determination"])]
                    )

    _write_csv_atomic(out_dir / "comparison.csv", write_table)
    return report


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gapboost", description="Audit-gap estimation pipeline")
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config master seed")
    parser.add_argument("--out", default=None, help="override the config output directory")
    parser.add_argument("--threads", type=int, default=1, help="max worker threads (reserved; fits are sequential)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare")
    sub.add_parser("generate")
    sub.add_parser("fit")
    boot = sub.add_parser("bootstrap")
    boot.add_argument("model", help="path to two_step_model.json")
    prop = sub.add_parser("propensity")
    prop.add_argument("model", help="path to two_step_model.json")
    sub.add_parser("compare")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "bootstrap":
            cmd_bootstrap(cfg, args.model)
        elif args.command == "propensity":
            cmd_propensity(cfg, args.model)
        elif args.command == "compare":
            cmd_compare(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
