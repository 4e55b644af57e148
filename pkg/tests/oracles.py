"""Independent brute-force oracles used by the test suite.

Deliberately naive implementations that share no code with the package:
exhaustive split enumeration for trees, all-pairs counting for AUC, and an
arbitrary-precision normal hazard. Slow is fine; independent is the point.
"""

from itertools import combinations

import numpy as np


def _node_sse(y, w):
    m = np.average(y, weights=w)
    return float(np.sum(w * (y - m) ** 2))


def _enumerate_splits(col, kind, levels, y, w, min_node):
    """Yield (sse_left + sse_right, mask_left) over every admissible split."""
    n = len(y)
    if kind == "numeric":
        distinct = np.unique(col)
        for a, b in zip(distinct[:-1], distinct[1:]):
            thr = (a + b) / 2.0
            left = col <= thr
            if min_node <= left.sum() <= n - min_node:
                if w[left].sum() > 0 and w[~left].sum() > 0:
                    yield _node_sse(y[left], w[left]) + _node_sse(y[~left], w[~left]), left
    else:
        present = sorted(set(col.tolist()))
        for size in range(1, len(present)):
            for subset in combinations(present, size):
                left = np.isin(col, subset)
                if min_node <= left.sum() <= n - min_node:
                    if w[left].sum() > 0 and w[~left].sum() > 0:
                        yield _node_sse(y[left], w[left]) + _node_sse(y[~left], w[~left]), left


def exhaustive_tree_sse(cols, kinds, levels, y, w, depth, min_node):
    """Total weighted SSE of a greedy tree whose per-node split search is an
    exhaustive enumeration of every (feature, threshold/subset) candidate."""

    def fit(rows, d):
        yv, wv = y[rows], w[rows]
        here = _node_sse(yv, wv)
        if d == 0 or len(rows) < 2 * min_node:
            return here
        best = None
        for col, kind, lv in zip(cols, kinds, levels):
            for sse, left in _enumerate_splits(col[rows], kind, lv, yv, wv, min_node):
                if best is None or sse < best[0]:
                    best = (sse, left)
        if best is None or not best[0] < here:
            return here
        left = best[1]
        return fit(rows[left], d - 1) + fit(rows[~left], d - 1)

    return fit(np.arange(len(y)), depth)


def achieved_tree_sse(tree, table, y, w):
    """Weighted SSE the fitted tree attains on its own training data."""
    pred = tree.predict(table)
    return float(np.sum(w * (y - pred) ** 2))


def pair_count_auc(scores, labels):
    """All positive-negative pairs, ties worth one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels != 1]
    wins = np.greater.outer(pos, neg).sum()
    ties = np.equal.outer(pos, neg).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def mills_highprec(z, dps=50):
    """phi(z)/Phi(z) at `dps` decimal digits via mpmath."""
    import mpmath

    with mpmath.workdps(dps):
        zz = mpmath.mpf(z)
        return float(mpmath.npdf(zz) / mpmath.ncdf(zz))
