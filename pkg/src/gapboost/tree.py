"""Weighted, depth-limited CART regression trees.

These are the base learners for boosting: greedy binary splits minimizing the
weighted sum of squared deviations of the targets from the child weighted
means. Categorical splits use the optimal-subset shortcut (order levels by
weighted mean target, scan contiguous prefixes), which is exact for weighted
squared error. Missing values follow a stored default direction, the child
that received the greater training weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import CATEGORICAL, NUMERIC, Dataset
from .errors import DataError, FitError, SchemaError

_LEFT, _RIGHT = 0, 1


@dataclass(frozen=True)
class Split:
    feature: str
    kind: str                       # numeric | categorical
    threshold: float | None         # numeric rule: value <= threshold goes left
    left_levels: tuple[str, ...]    # categorical rule: these labels go left
    right_levels: tuple[str, ...]   # labels seen at fit time that go right
    default_left: bool              # route for missing / unseen values
    left: int
    right: int
    gain: float                     # weighted SSE reduction achieved by the split


@dataclass(frozen=True)
class Leaf:
    value: float
    n_rows: int
    weight: float


@dataclass(frozen=True)
class Tree:
    """Fitted tree; node 0 is the root."""

    nodes: tuple[Split | Leaf, ...]
    depth_limit: int
    min_node: int
    feature_kinds: Mapping[str, str]

    def predict_row(self, row: Mapping[str, object]) -> float:
        node = self.nodes[0]
        while isinstance(node, Split):
            node = self.nodes[_route_value(node, row.get(node.feature))]
        return node.value

    def predict(self, table: "FeatureTable") -> np.ndarray:
        return _predict_table(self, table, np.arange(table.n_rows))

    def split_gains(self) -> dict[str, float]:
        gains: dict[str, float] = {}
        for node in self.nodes:
            if isinstance(node, Split):
                gains[node.feature] = gains.get(node.feature, 0.0) + node.gain
        return gains

    def max_depth(self) -> int:
        def depth(i: int) -> int:
            node = self.nodes[i]
            if isinstance(node, Leaf):
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        return depth(0)


class FeatureTable:
    """Per-feature arrays extracted from a Dataset, shared across many fits."""

    def __init__(self, names, kinds, arrays, levels):
        self.names = tuple(names)
        self.kinds = tuple(kinds)
        self.arrays = list(arrays)      # float64 (NaN missing) or int64 codes (-1 missing)
        self.levels = list(levels)      # tuple of labels per categorical feature
        self.n_rows = len(self.arrays[0]) if self.arrays else 0

    @classmethod
    def from_dataset(cls, ds: Dataset, features: Sequence[str] | None = None) -> "FeatureTable":
        names = tuple(features) if features is not None else ds.feature_names()
        kinds, arrays, levels = [], [], []
        for name in names:
            col = ds.column(name)
            kinds.append(col.kind)
            arrays.append(col.values)
            levels.append(col.levels)
        return cls(names, kinds, arrays, levels)


def _route_value(node: Split, value) -> int:
    """Child index for one raw feature value (None/NaN = missing)."""
    default = node.left if node.default_left else node.right
    if value is None:
        return default
    if node.kind == NUMERIC:
        v = float(value)
        if np.isnan(v):
            return default
        return node.left if v <= node.threshold else node.right
    if value in node.left_levels:
        return node.left
    if value in node.right_levels:
        return node.right
    return default


def _predict_table(tree: Tree, table: FeatureTable, rows: np.ndarray) -> np.ndarray:
    out = np.empty(len(rows))
    feat_index = {name: i for i, name in enumerate(table.names)}
    stack = [(0, np.arange(len(rows)))]
    while stack:
        nid, pos = stack.pop()
        node = tree.nodes[nid]
        if isinstance(node, Leaf):
            out[pos] = node.value
            continue
        try:
            fi = feat_index[node.feature]
        except KeyError:
            raise SchemaError(f"prediction rows lack feature {node.feature!r}") from None
        vals = table.arrays[fi][rows[pos]]
        if node.kind == NUMERIC:
            left = vals <= node.threshold
            known = ~np.isnan(vals)
        else:
            lv = table.levels[fi]
            left_codes = np.array([i for i, lab in enumerate(lv) if lab in node.left_levels], dtype=np.int64)
            right_codes = np.array([i for i, lab in enumerate(lv) if lab in node.right_levels], dtype=np.int64)
            left = np.isin(vals, left_codes)
            known = left | np.isin(vals, right_codes)
        go_left = np.where(known, left, node.default_left)
        stack.append((node.left, pos[go_left]))
        stack.append((node.right, pos[~go_left]))
    return out


def fit_tree(
    ds: Dataset,
    targets,
    weights=None,
    depth_limit: int = 2,
    min_node: int = 1,
    features: Sequence[str] | None = None,
) -> Tree:
    """Greedy weighted least-squares tree on the dataset's feature columns.

    Splitting stops at `depth_limit`, when a child would fall below
    `min_node` rows, or when no split strictly reduces the criterion. The
    criterion for a candidate split ignores missing rows; after the split is
    chosen they are routed to the default (heavier) child and take part in
    the deeper fit.
    """
    table = ds if isinstance(ds, FeatureTable) else FeatureTable.from_dataset(ds, features)
    y = np.asarray(targets, dtype=np.float64)
    w = np.ones(table.n_rows) if weights is None else np.asarray(weights, dtype=np.float64)
    if table.n_rows == 0:
        raise FitError("cannot fit a tree on an empty dataset")
    if y.shape != (table.n_rows,) or w.shape != (table.n_rows,):
        raise DataError("targets/weights misaligned with rows")
    if depth_limit < 0 or min_node < 1:
        raise DataError("need depth_limit >= 0 and min_node >= 1")
    if not np.all(w >= 0) or w.sum() <= 0:
        raise FitError("weights must be non-negative with positive total")
    builder = _Builder(table, y, w, depth_limit, min_node)
    builder.grow(np.arange(table.n_rows), depth=0)
    return Tree(
        nodes=tuple(builder.nodes),
        depth_limit=depth_limit,
        min_node=min_node,
        feature_kinds={n: k for n, k in zip(table.names, table.kinds)},
    )


def predict_tree(tree: Tree, row: Mapping[str, object]) -> float:
    """Route one feature record (name -> value, None/NaN allowed) to its leaf."""
    return tree.predict_row(row)


class _Builder:
    def __init__(self, table, y, w, depth_limit, min_node):
        self.table = table
        self.y = y
        self.w = w
        self.depth_limit = depth_limit
        self.min_node = min_node
        self.nodes: list[Split | Leaf] = []

    def grow(self, idx: np.ndarray, depth: int) -> int:
        y, w = self.y[idx], self.w[idx]
        total_w = w.sum()
        nid = len(self.nodes)
        self.nodes.append(None)  # reserve slot so child ids follow parent
        mean = float(np.dot(w, y) / total_w) if total_w > 0 else 0.0
        if (
            depth >= self.depth_limit
            or len(idx) < 2 * self.min_node
            or np.all(y == y[0])
        ):
            self.nodes[nid] = Leaf(mean, len(idx), float(total_w))
            return nid
        found = self._best_split(idx, y, w, mean)
        if found is None:
            self.nodes[nid] = Leaf(mean, len(idx), float(total_w))
            return nid
        fi, kind, threshold, left_levels, right_levels, gain, go_left = found
        wl = float(w[go_left].sum())
        default_left = wl >= total_w - wl
        # missing rows were excluded from the criterion; send them to the
        # heavier child before recursing
        vals = self.table.arrays[fi][idx]
        miss = np.isnan(vals) if kind == NUMERIC else (vals < 0)
        if miss.any():
            go_left = go_left | (miss & default_left)
        left_id = self.grow(idx[go_left], depth + 1)
        right_id = self.grow(idx[~go_left], depth + 1)
        self.nodes[nid] = Split(
            feature=self.table.names[fi],
            kind=kind,
            threshold=threshold,
            left_levels=left_levels,
            right_levels=right_levels,
            default_left=bool(default_left),
            left=left_id,
            right=right_id,
            gain=float(gain),
        )
        return nid

    def _best_split(self, idx, y, w, mean):
        yc = y - mean  # centering keeps the one-pass SSE formula accurate
        parent_sse = float(np.dot(w, yc * yc))
        best = None  # (sse, fi, kind, threshold, left_levels, right_levels, go_left)
        for fi in range(len(self.table.names)):
            vals = self.table.arrays[fi][idx]
            if self.table.kinds[fi] == NUMERIC:
                cand = self._scan_numeric(vals, yc, w)
            else:
                cand = self._scan_categorical(vals, yc, w, self.table.levels[fi])
            if cand is None:
                continue
            if best is None or cand[0] < best[0]:
                best = (*cand, fi)
        if best is None or not best[0] < parent_sse:
            return None
        sse, threshold, left_levels, right_levels, go_left, fi = best
        kind = self.table.kinds[fi]
        return fi, kind, threshold, left_levels, right_levels, parent_sse - sse, go_left

    def _scan_numeric(self, vals, yc, w):
        obs = ~np.isnan(vals)
        v, yv, wv = vals[obs], yc[obs], w[obs]
        m = v.size
        if m < 2 * self.min_node:
            return None
        order = np.argsort(v, kind="stable")
        v, yv, wv = v[order], yv[order], wv[order]
        cw = np.cumsum(wv)
        cwy = np.cumsum(wv * yv)
        cwyy = np.cumsum(wv * yv * yv)
        cuts = np.nonzero(v[:-1] < v[1:])[0]  # split after sorted position i
        cuts = cuts[(cuts + 1 >= self.min_node) & (m - cuts - 1 >= self.min_node)]
        if cuts.size == 0:
            return None
        wl, wr = cw[cuts], cw[-1] - cw[cuts]
        ok = (wl > 0) & (wr > 0)
        if not ok.any():
            return None
        sl, sr = cwy[cuts], cwy[-1] - cwy[cuts]
        ql, qr = cwyy[cuts], cwyy[-1] - cwyy[cuts]
        with np.errstate(divide="ignore", invalid="ignore"):
            sse = (ql - sl * sl / wl) + (qr - sr * sr / wr)
        sse = np.where(ok, np.maximum(sse, 0.0), np.inf)
        j = int(np.argmin(sse))  # first minimum = smallest threshold on ties
        cut = cuts[j]
        threshold = float((v[cut] + v[cut + 1]) / 2.0)
        go_left = np.zeros(vals.shape[0], dtype=bool)
        go_left[np.nonzero(obs)[0][order[: cut + 1]]] = True
        return float(sse[j]), threshold, (), (), go_left

    def _scan_categorical(self, vals, yc, w, levels):
        obs = vals >= 0
        codes, yv, wv = vals[obs], yc[obs], w[obs]
        if codes.size < 2 * self.min_node:
            return None
        L = len(levels)
        cnt = np.bincount(codes, minlength=L)
        ws = np.bincount(codes, weights=wv, minlength=L)
        sy = np.bincount(codes, weights=wv * yv, minlength=L)
        syy = np.bincount(codes, weights=wv * yv * yv, minlength=L)
        present = np.nonzero(cnt > 0)[0]
        if present.size < 2:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            means = np.where(ws[present] > 0, sy[present] / ws[present], np.inf)
        order = present[np.lexsort((present, means))]
        ccnt = np.cumsum(cnt[order])
        cw = np.cumsum(ws[order])
        cs = np.cumsum(sy[order])
        cq = np.cumsum(syy[order])
        pos = np.arange(order.size - 1)  # left = ordered levels [0..pos]
        valid = (ccnt[pos] >= self.min_node) & (ccnt[-1] - ccnt[pos] >= self.min_node)
        wl, wr = cw[pos], cw[-1] - cw[pos]
        valid &= (wl > 0) & (wr > 0)
        if not valid.any():
            return None
        sl, sr = cs[pos], cs[-1] - cs[pos]
        ql, qr = cq[pos], cq[-1] - cq[pos]
        with np.errstate(divide="ignore", invalid="ignore"):
            sse = (ql - sl * sl / wl) + (qr - sr * sr / wr)
        sse = np.where(valid, np.maximum(sse, 0.0), np.inf)
        best_sse = sse.min()
        # equal-criterion prefixes: keep the lexicographically smallest subset
        best_j, best_labels = None, None
        for j in np.nonzero(sse == best_sse)[0]:
            labels = tuple(sorted(levels[c] for c in order[: j + 1]))
            if best_labels is None or labels < best_labels:
                best_j, best_labels = int(j), labels
        left_codes = order[: best_j + 1]
        right_levels = tuple(sorted(levels[c] for c in order[best_j + 1:]))
        go_left = np.zeros(vals.shape[0], dtype=bool)
        go_left[obs] = np.isin(codes, left_codes)
        return float(best_sse), None, best_labels, right_levels, go_left


# -- serialization -------------------------------------------------------------


def tree_to_dict(tree: Tree) -> dict:
    nodes = []
    for node in tree.nodes:
        if isinstance(node, Leaf):
            nodes.append({"type": "leaf", "value": node.value, "n_rows": node.n_rows, "weight": node.weight})
        else:
            nodes.append(
                {
                    "type": "split",
                    "feature": node.feature,
                    "kind": node.kind,
                    "threshold": node.threshold,
                    "left_levels": list(node.left_levels),
                    "right_levels": list(node.right_levels),
                    "default_left": node.default_left,
                    "left": node.left,
                    "right": node.right,
                    "gain": node.gain,
                }
            )
    return {
        "nodes": nodes,
        "depth_limit": tree.depth_limit,
        "min_node": tree.min_node,
        "feature_kinds": dict(tree.feature_kinds),
    }


def tree_from_dict(payload: dict) -> Tree:
    nodes: list[Split | Leaf] = []
    for nd in payload["nodes"]:
        if nd["type"] == "leaf":
            nodes.append(Leaf(float(nd["value"]), int(nd["n_rows"]), float(nd["weight"])))
        else:
            nodes.append(
                Split(
                    feature=nd["feature"],
                    kind=nd["kind"],
                    threshold=None if nd["threshold"] is None else float(nd["threshold"]),
                    left_levels=tuple(nd["left_levels"]),
                    right_levels=tuple(nd["right_levels"]),
                    default_left=bool(nd["default_left"]),
                    left=int(nd["left"]),
                    right=int(nd["right"]),
                    gain=float(nd["gain"]),
                )
            )
    return Tree(
        nodes=tuple(nodes),
        depth_limit=int(payload["depth_limit"]),
        min_node=int(payload["min_node"]),
        feature_kinds=dict(payload["feature_kinds"]),
    )


def tree_to_json(tree: Tree) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True)


def tree_from_json(text: str) -> Tree:
    return tree_from_dict(json.loads(text))
