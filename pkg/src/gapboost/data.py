"""Immutable columnar datasets and the cleaning/sampling operations.

A Dataset carries numeric and categorical columns, optional outcome and
selection-flag roles, per-row weights and stable row ids. Every operation
returns a new Dataset; nothing mutates in place.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DomainError,
    ImputationError,
    ParseError,
    QuantileError,
    SchemaError,
    SplitError,
)
from .rng import stream

NUMERIC = "numeric"
CATEGORICAL = "categorical"

#: Explicit level used for missing categorical cells: trees can split on
#: missingness instead of losing the information to imputation.
MISSING_LEVEL = "⟨missing⟩"


@dataclass(frozen=True)
class Column:
    """One named column: float64 values (NaN = missing) or int64 level codes
    (-1 = missing) plus the level dictionary."""

    name: str
    kind: str
    values: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        vals = np.asarray(self.values)
        if self.kind == NUMERIC:
            vals = vals.astype(np.float64, copy=False)
            finite = np.isfinite(vals) | np.isnan(vals)
            if not finite.all():
                raise DataError(f"column {self.name!r}: non-finite numeric value")
        else:
            vals = vals.astype(np.int64, copy=False)
            if vals.size and (vals.max(initial=-1) >= len(self.levels) or vals.min(initial=0) < -1):
                raise DataError(f"column {self.name!r}: level code out of range")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def missing_mask(self) -> np.ndarray:
        if self.kind == NUMERIC:
            return np.isnan(self.values)
        return self.values < 0

    def labels(self) -> np.ndarray:
        """Categorical codes decoded to labels (object array)."""
        if self.kind != CATEGORICAL:
            raise SchemaError(f"column {self.name!r} is not categorical")
        out = np.empty(self.n_rows, dtype=object)
        for i, code in enumerate(self.values):
            out[i] = self.levels[code] if code >= 0 else None
        return out

    def take(self, indices: np.ndarray) -> "Column":
        return Column(self.name, self.kind, self.values[indices], self.levels)


def numeric_column(name: str, values) -> Column:
    return Column(name, NUMERIC, np.asarray(values, dtype=np.float64))


def categorical_column(name: str, labels: Sequence, levels: Sequence[str] | None = None) -> Column:
    """Build a categorical column from string labels (None = missing).

    Levels default to first-appearance order, which keeps CSV round trips
    exact.
    """
    if levels is None:
        seen: dict[str, int] = {}
        for lab in labels:
            if lab is not None and lab not in seen:
                seen[lab] = len(seen)
        levels = tuple(seen)
    index = {lab: i for i, lab in enumerate(levels)}
    codes = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab is None:
            codes[i] = -1
        else:
            try:
                codes[i] = index[lab]
            except KeyError:
                raise DataError(f"column {name!r}: label {lab!r} not in levels") from None
    return Column(name, CATEGORICAL, codes, tuple(levels))


@dataclass(frozen=True)
class Dataset:
    """Immutable table of columns with optional outcome/selection roles."""

    columns: tuple[Column, ...]
    outcome: str | None = None
    selection_flag: str | None = None
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    row_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.columns:
            raise DataError("dataset needs at least one column")
        n = self.columns[0].n_rows
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        for c in self.columns:
            if c.n_rows != n:
                raise DataError(f"column {c.name!r} has {c.n_rows} rows, expected {n}")
        w = self.weights
        w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
        if w.shape != (n,):
            raise DataError("weights misaligned with rows")
        if n and (np.any(w < 0) or not np.any(w > 0)):
            raise DataError("weights must be non-negative with at least one positive")
        ids = self.row_ids
        ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if ids.shape != (n,):
            raise DataError("row_ids misaligned with rows")
        if np.unique(ids).size != n:
            raise DataError("row_ids must be unique")
        for role, name in (("outcome", self.outcome), ("selection_flag", self.selection_flag)):
            if name is not None and name not in names:
                raise SchemaError(f"{role} column {name!r} not present")
        if self.selection_flag is not None:
            flag = self.columns[names.index(self.selection_flag)]
            if flag.kind != NUMERIC or not np.isin(flag.values, (0.0, 1.0)).all():
                raise DataError("selection flag must be numeric with values in {0, 1}")
        w.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "row_ids", ids)

    # -- accessors ---------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self.columns[0].n_rows

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def values(self, name: str) -> np.ndarray:
        return self.column(name).values

    def feature_names(self, exclude: Sequence[str] = ()) -> tuple[str, ...]:
        """All column names except outcome, selection flag and `exclude`."""
        skip = {self.outcome, self.selection_flag, *exclude}
        return tuple(n for n in self.column_names if n not in skip)

    def selected_mask(self) -> np.ndarray:
        if self.selection_flag is None:
            raise SchemaError("dataset has no selection flag")
        return self.values(self.selection_flag) == 1

    # -- structural edits (all return new datasets) -------------------------

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    def with_roles(self, outcome: str | None = None, selection_flag: str | None = None) -> "Dataset":
        changes = {}
        if outcome is not None:
            changes["outcome"] = outcome
        if selection_flag is not None:
            changes["selection_flag"] = selection_flag
        return self.replace(**changes)

    def with_column(self, col: Column) -> "Dataset":
        """Add (or overwrite) one column."""
        cols = [c for c in self.columns if c.name != col.name]
        return self.replace(columns=tuple(cols) + (col,))

    def drop_columns(self, names: Sequence[str]) -> "Dataset":
        drop = set(names)
        kept = tuple(c for c in self.columns if c.name not in drop)
        changes = {"columns": kept}
        if self.outcome in drop:
            changes["outcome"] = None
        if self.selection_flag in drop:
            changes["selection_flag"] = None
        return self.replace(**changes)

    def take(self, indices: np.ndarray, reset_row_ids: bool = False) -> "Dataset":
        """Row subset/reorder. `reset_row_ids` reassigns 0..k-1, which is
        required when indices repeat (bootstrap resamples)."""
        indices = np.asarray(indices)
        ids = np.arange(len(indices), dtype=np.int64) if reset_row_ids else self.row_ids[indices]
        return self.replace(
            columns=tuple(c.take(indices) for c in self.columns),
            weights=self.weights[indices],
            row_ids=ids,
        )

    def mask_rows(self, mask: np.ndarray) -> "Dataset":
        return self.take(np.nonzero(np.asarray(mask))[0])

    def equals(self, other: "Dataset") -> bool:
        if self.column_names != other.column_names or self.n_rows != other.n_rows:
            return False
        if (self.outcome, self.selection_flag) != (other.outcome, other.selection_flag):
            return False
        if not (np.array_equal(self.row_ids, other.row_ids) and np.array_equal(self.weights, other.weights)):
            return False
        for a, b in zip(self.columns, other.columns):
            if a.kind != b.kind or a.levels != b.levels:
                return False
            if not np.array_equal(a.values, b.values, equal_nan=(a.kind == NUMERIC)):
                return False
        return True


@dataclass(frozen=True)
class TaxTriple:
    """Declared base, potential base and their difference for one unit."""

    bid: float
    bit: float
    bind: float

    def __post_init__(self):
        if self.bind != self.bit - self.bid:
            raise DataError("bind must equal bit - bid exactly")

    @classmethod
    def from_bases(cls, bit: float, bid: float) -> "TaxTriple":
        return cls(bid=bid, bit=bit, bind=bit - bid)


# -- CSV I/O ----------------------------------------------------------------


def load_csv(path, schema: Mapping[str, str], missing_token: str = "") -> Dataset:
    """Read a header-first CSV into a Dataset.

    `schema` maps column name -> "numeric" | "categorical". Every schema
    column must appear in the header; extra file columns are ignored. Cells
    equal to `missing_token` are missing: NaN for numeric columns, the
    explicit ⟨missing⟩ level for categorical ones.
    """
    for name, kind in schema.items():
        if kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"schema column {name!r}: unknown kind {kind!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        positions = {}
        for name in schema:
            if name not in header:
                raise SchemaError(f"{path}: schema column {name!r} not in header")
            positions[name] = header.index(name)
        raw: dict[str, list] = {name: [] for name in schema}
        arity = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != arity:
                raise ParseError(f"{path}: line {lineno}: expected {arity} fields, got {len(row)}")
            for name, pos in positions.items():
                raw[name].append(row[pos])
    columns = []
    for name, kind in schema.items():
        cells = raw[name]
        if kind == NUMERIC:
            vals = np.empty(len(cells))
            for i, cell in enumerate(cells):
                if cell == missing_token:
                    vals[i] = np.nan
                else:
                    try:
                        vals[i] = float(cell)
                    except ValueError:
                        raise ParseError(
                            f"{path}: line {i + 2}: column {name!r}: cannot parse {cell!r} as numeric"
                        ) from None
            columns.append(numeric_column(name, vals))
        else:
            labels = [MISSING_LEVEL if cell == missing_token else cell for cell in cells]
            columns.append(categorical_column(name, labels))
    return Dataset(columns=tuple(columns))


def write_csv(ds: Dataset, path, missing_token: str = "") -> None:
    """Inverse of load_csv: load -> write -> load is an identical Dataset."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.column_names)
        for i in range(ds.n_rows):
            row = []
            for col in ds.columns:
                if col.kind == NUMERIC:
                    v = col.values[i]
                    row.append(missing_token if np.isnan(v) else repr(float(v)))
                else:
                    code = col.values[i]
                    row.append(missing_token if code < 0 else col.levels[code])
            writer.writerow(row)


# -- cleaning operations ------------------------------------------------------


def _require_numeric(ds: Dataset, col: str) -> Column:
    c = ds.column(col)
    if c.kind != NUMERIC:
        raise SchemaError(f"column {col!r} must be numeric")
    return c


def impute_mean(ds: Dataset, col: str) -> Dataset:
    """Replace missing entries with the unweighted mean of the observed ones."""
    c = _require_numeric(ds, col)
    missing = c.missing_mask()
    if not missing.any():
        return ds
    if missing.all():
        raise ImputationError(f"column {col!r}: every value is missing")
    vals = c.values.copy()
    vals[missing] = vals[~missing].mean()
    return ds.with_column(numeric_column(col, vals))


def log_transform(ds: Dataset, col: str, offset: float = 0.0) -> Dataset:
    """Replace each value v with ln(v + offset)."""
    c = _require_numeric(ds, col)
    vals = c.values
    obs = ~c.missing_mask()
    bad = obs & (vals + offset <= 0)
    if bad.any():
        rid = int(ds.row_ids[np.nonzero(bad)[0][0]])
        raise DomainError(f"column {col!r}: value + offset <= 0 at row_id {rid}")
    out = np.where(obs, np.log(np.where(obs, vals + offset, 1.0)), np.nan)
    return ds.with_column(numeric_column(col, out))


def filter_outliers_log(
    ds: Dataset, cols: Sequence[str], k: float = 1.5
) -> tuple[Dataset, list[dict]]:
    """Drop rows extreme on the log scale of any listed column.

    A row is removed when ln(value) > q0.75 + k * IQR of that column's log
    values, quantiles (linear interpolation) taken on the pre-filter data.
    Returns the filtered dataset and a removals report, one entry per
    (row, column) violation: {row_id, column, value, threshold}.
    """
    if k <= 0:
        raise DataError("k must be positive")
    removed_mask = np.zeros(ds.n_rows, dtype=bool)
    report: list[dict] = []
    for col in cols:
        c = _require_numeric(ds, col)
        obs = ~c.missing_mask()
        vals = c.values[obs]
        if vals.size < 4:
            raise QuantileError(f"column {col!r}: need at least 4 observed rows for quantiles")
        if np.any(vals <= 0):
            raise DomainError(f"column {col!r} must be strictly positive for the log filter")
        logs = np.log(vals)
        q25, q75 = np.quantile(logs, [0.25, 0.75], method="linear")
        threshold = q75 + k * (q75 - q25)
        flag = np.zeros(ds.n_rows, dtype=bool)
        flag[obs] = logs > threshold
        removed_mask |= flag
        for i in np.nonzero(flag)[0]:
            report.append(
                {
                    "row_id": int(ds.row_ids[i]),
                    "column": col,
                    "value": float(c.values[i]),
                    "threshold": float(threshold),
                }
            )
    return ds.mask_rows(~removed_mask), report


def drop_missing(ds: Dataset, col: str) -> Dataset:
    """Remove rows where `col` is missing."""
    return ds.mask_rows(~ds.column(col).missing_mask())


def missing_fraction(ds: Dataset) -> dict[str, float]:
    """Per-column fraction of missing cells (categorical ⟨missing⟩ counts)."""
    out = {}
    for c in ds.columns:
        miss = c.missing_mask()
        if c.kind == CATEGORICAL and MISSING_LEVEL in c.levels:
            miss = miss | (c.values == c.levels.index(MISSING_LEVEL))
        out[c.name] = float(miss.mean()) if ds.n_rows else 0.0
    return out


# -- sampling -----------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratum_keys(ds: Dataset, strata_cols: Sequence[str]) -> list[str]:
    parts = []
    for name in strata_cols:
        c = ds.column(name)
        if c.kind == CATEGORICAL:
            parts.append([c.levels[v] if v >= 0 else MISSING_LEVEL for v in c.values])
        else:
            parts.append([repr(float(v)) for v in c.values])
    return ["\x1f".join(vals) for vals in zip(*parts)]


def stratified_undersample(
    ds: Dataset,
    strata_cols: Sequence[str],
    keep_all_flag: int = 1,
    target_fraction: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Keep every row with the protected flag value, undersample the rest.

    Within each stratum (cross-classification of `strata_cols`) a uniform
    random fraction of the remaining rows is kept, rounded to nearest with a
    floor of one row per non-empty stratum. Deterministic given `seed`.
    """
    if ds.selection_flag is None:
        raise SchemaError("stratified_undersample needs a selection flag")
    if not 0 < target_fraction <= 1:
        raise DataError("target_fraction must be in (0, 1]")
    for name in strata_cols:
        ds.column(name)  # raises SchemaError when absent
    flag = ds.values(ds.selection_flag)
    keep = flag == keep_all_flag
    keys = _stratum_keys(ds, strata_cols)
    groups: dict[str, list[int]] = {}
    for i in np.nonzero(~keep)[0]:
        groups.setdefault(keys[i], []).append(i)
    for key in sorted(groups):
        rows = groups[key]
        n_keep = max(1, _round_half_up(len(rows) * target_fraction))
        if n_keep >= len(rows):
            keep[rows] = True
            continue
        chosen = stream(seed, "stratum", key).choice_no_replace(len(rows), n_keep)
        keep[np.asarray(rows)[chosen]] = True
    return ds.mask_rows(keep)


def train_test_split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint uniform random partition, deterministic given `seed`.

    The train size is `train_fraction * n` rounded to nearest, clamped so
    both parts are non-empty. Row order inside each part follows the input.
    """
    if not 0 < train_fraction < 1:
        raise SplitError("train_fraction must be in (0, 1)")
    n = ds.n_rows
    if n < 2:
        raise SplitError("need at least 2 rows to split")
    n_train = min(max(_round_half_up(train_fraction * n), 1), n - 1)
    perm = stream(seed, "split").permutation(n)
    in_train = np.zeros(n, dtype=bool)
    in_train[perm[:n_train]] = True
    return ds.mask_rows(in_train), ds.mask_rows(~in_train)
