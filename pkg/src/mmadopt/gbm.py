"""Gradient-boosted regression trees for binary classification (logistic loss).

Each round fits a CART tree to the negative gradients ``y - p`` by variance
reduction, then replaces every leaf value with a Newton step
``sum(r) / sum(p (1 - p))``. Split search is exact over midpoints of
consecutive distinct values; ties go to the lowest feature index, then the
lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

P_CLAMP = 1e-6
HESS_FLOOR = 1e-12
# gains within this relative distance of the incumbent count as ties
TIE_RTOL = 1e-12
MIN_GAIN = 1e-10


@dataclass
class GBMParams:
    n_trees: int = 100
    shrinkage: float = 0.1
    max_depth: int = 3
    min_leaf: int = 5

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class Tree:
    """Flat binary tree. ``left[i] == -1`` marks a leaf; rows with x[feature] <= threshold go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            internal = self.left[node] >= 0
            if not internal.any():
                return node
            rows = np.nonzero(internal)[0]
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        def rec(i):
            return 0 if self.left[i] < 0 else 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def used_features(self) -> set[int]:
        return {int(f) for f, l in zip(self.feature, self.left) if l >= 0}

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.float64),
        )


@dataclass
class BoostModel:
    base_score: float
    trees: list[Tree]
    params: GBMParams
    n_features: int
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = _check_width(X, self.n_features)
        if not self.trees:
            return np.full(X.shape[0], self.base_score)
        total = np.sum([t.predict(X) for t in self.trees], axis=0)
        return self.base_score + self.params.shrinkage * total

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def used_features(self) -> list[int]:
        return sorted(set().union(*(t.used_features() for t in self.trees))) if self.trees else []

    def to_json(self) -> str:
        doc = {
            "format": "mmadopt.boost_model/1",
            "objective": "binary_logistic",
            "base_score": self.base_score,
            "params": asdict(self.params),
            "n_features": self.n_features,
            "train_loss": self.train_loss,
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "BoostModel":
        doc = json.loads(text)
        if doc.get("format") != "mmadopt.boost_model/1":
            raise ValueError("not a serialized BoostModel")
        return cls(
            float(doc["base_score"]),
            [Tree.from_dict(t) for t in doc["trees"]],
            GBMParams(**doc["params"]),
            int(doc["n_features"]),
            [float(v) for v in doc["train_loss"]],
        )


def sigmoid(f):
    f = np.asarray(f, dtype=np.float64)
    return np.where(f >= 0, 1.0 / (1.0 + np.exp(-np.abs(f))), np.exp(-np.abs(f)) / (1.0 + np.exp(-np.abs(f))))


def log_loss(y: np.ndarray, f: np.ndarray) -> float:
    # log(1 + e^f) - y f, computed stably
    return float(np.mean(np.logaddexp(0.0, f) - y * f))


def _check_width(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise ValueError(f"row width {X.shape[1]} does not match training width {n_features}")
    return X


@njit(cache=True)
def _best_splits(xs, order, r, node_of, n_nodes, tot_sum, tot_cnt, min_leaf, rtol):
    """Best (feature, threshold, gain) per active node.

    xs[j] holds column j sorted ascending and order[j] the matching row ids.
    Rows with node_of < 0 are frozen in a leaf and skipped.
    """
    p, n = xs.shape
    best_gain = np.full(n_nodes, -np.inf)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    lsum = np.zeros(n_nodes)
    lcnt = np.zeros(n_nodes, dtype=np.int64)
    lastv = np.zeros(n_nodes)
    parent = np.empty(n_nodes)
    for k in range(n_nodes):
        parent[k] = tot_sum[k] * tot_sum[k] / tot_cnt[k] if tot_cnt[k] > 0 else 0.0
    for j in range(p):
        lsum[:] = 0.0
        lcnt[:] = 0
        for i in range(n):
            row = order[j, i]
            k = node_of[row]
            if k < 0:
                continue
            v = xs[j, i]
            nl = lcnt[k]
            if nl > 0 and v > lastv[k]:
                nr = tot_cnt[k] - nl
                if nl >= min_leaf and nr >= min_leaf:
                    sl = lsum[k]
                    sr = tot_sum[k] - sl
                    gain = sl * sl / nl + sr * sr / nr - parent[k]
                    if best_feat[k] < 0 or gain > best_gain[k] + rtol * (abs(best_gain[k]) + 1.0):
                        best_gain[k] = gain
                        best_feat[k] = j
                        thr = lastv[k] + (v - lastv[k]) / 2.0
                        if thr >= v:
                            thr = lastv[k]
                        best_thr[k] = thr
            lsum[k] += r[row]
            lcnt[k] = nl + 1
            lastv[k] = v
    return best_feat, best_thr, best_gain


def _informative_columns(X: np.ndarray) -> np.ndarray:
    """Indices of non-constant columns, keeping only the first of any identical group.

    Dropping these is exact: a constant column has no valid split and an
    exact duplicate always loses the lowest-index tie-break.
    """
    keep, seen = [], set()
    Xt = np.ascontiguousarray(X.T)
    for j in range(Xt.shape[0]):
        col = Xt[j]
        if col.size == 0 or np.all(col == col[0]):
            continue
        key = col.tobytes()
        if key in seen:
            continue
        seen.add(key)
        keep.append(j)
    return np.array(keep, dtype=np.int64)


class _Presorted:
    def __init__(self, X: np.ndarray):
        self.cols = _informative_columns(X)
        sub = X[:, self.cols]
        self.order = np.ascontiguousarray(np.argsort(sub, axis=0, kind="stable").T)
        self.xs = np.ascontiguousarray(np.take_along_axis(sub, self.order.T, axis=0).T)


def _grow_tree(X, pre: _Presorted, r, h, params: GBMParams) -> tuple[Tree, np.ndarray]:
    """Grow one tree level by level; returns the tree and each row's leaf value."""
    n = X.shape[0]
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    members = {0: np.arange(n)}
    frontier = [0]
    for _depth in range(params.max_depth):
        active = [nd for nd in frontier if len(members[nd]) >= 2 * params.min_leaf]
        if not active or len(pre.cols) == 0:
            break
        node_of = np.full(n, -1, dtype=np.int64)
        tot_sum = np.zeros(len(active))
        tot_cnt = np.zeros(len(active), dtype=np.int64)
        for k, nd in enumerate(active):
            idx = members[nd]
            node_of[idx] = k
            tot_sum[k] = r[idx].sum()
            tot_cnt[k] = len(idx)
        feats, thrs, gains = _best_splits(pre.xs, pre.order, r, node_of, len(active),
                                          tot_sum, tot_cnt, params.min_leaf, TIE_RTOL)
        frontier = []
        for k, nd in enumerate(active):
            if feats[k] < 0 or gains[k] <= MIN_GAIN:
                continue
            f = int(pre.cols[feats[k]])
            idx = members.pop(nd)
            go_left = X[idx, f] <= thrs[k]
            feature[nd], threshold[nd] = f, float(thrs[k])
            for child_rows in (idx[go_left], idx[~go_left]):
                c = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                members[c] = child_rows
                frontier.append(c)
            left[nd], right[nd] = len(feature) - 2, len(feature) - 1
    value = np.zeros(len(feature))
    row_value = np.zeros(n)
    for nd, idx in members.items():
        value[nd] = r[idx].sum() / max(h[idx].sum(), HESS_FLOOR)
        row_value[idx] = value[nd]
    tree = Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), value)
    return tree, row_value


def fit(X, y, params: GBMParams | None = None) -> BoostModel:
    """Fit a boosted ensemble; deterministic given inputs."""
    params = params or GBMParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    if len(y) < 2 * params.min_leaf:
        raise ValueError(f"need at least {2 * params.min_leaf} rows for min_leaf={params.min_leaf}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")

    pbar = min(max(y.mean(), P_CLAMP), 1 - P_CLAMP)
    base = math.log(pbar / (1 - pbar))
    F = np.full(len(y), base)
    pre = _Presorted(X)
    trees, losses = [], [log_loss(y, F)]
    for _ in range(params.n_trees):
        p = sigmoid(F)
        tree, step = _grow_tree(X, pre, y - p, p * (1 - p), params)
        trees.append(tree)
        F = F + params.shrinkage * step
        losses.append(log_loss(y, F))
    return BoostModel(base, trees, params, X.shape[1], losses)


def predict_proba(model: BoostModel, x):
    """Probability of the positive class; a scalar for a single 1-D row."""
    x = np.asarray(x, dtype=np.float64)
    proba = model.predict_proba(x)
    return float(proba[0]) if x.ndim == 1 else proba


def accuracy(model: BoostModel, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y)))


# ---------------------------------------------------------------- evaluation


@dataclass
class CVResult:
    fold_accuracies: list[float]
    folds: np.ndarray
    models: list[BoostModel]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))


def stratified_folds(y, k: int = 5, seed: int = 0, strata=None) -> np.ndarray:
    """Fold id per row. Each class (or class x stratum cell) is shuffled and dealt round-robin."""
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    keys = y if strata is None else np.array([f"{a}|{b}" for a, b in zip(y, strata)])
    rng = np.random.default_rng([seed, 101])
    folds = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        if np.sum(y == cls) < k:
            raise ValueError(f"class {cls} has {np.sum(y == cls)} rows, fewer than k={k}")
    offset = 0
    for key in np.unique(keys):
        idx = np.nonzero(keys == key)[0]
        perm = rng.permutation(idx)
        folds[perm] = (np.arange(len(perm)) + offset) % k
        offset += len(perm)
    return folds


def cross_validate(X, y, k: int = 5, seed: int = 0, params: GBMParams | None = None, strata=None) -> CVResult:
    """Stratified k-fold accuracy; a row counts correct when (proba > 0.5) equals its label."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    folds = stratified_folds(y, k, seed, strata)
    accs, models = [], []
    for f in range(k):
        test = folds == f
        model = fit(X[~test], y[~test], params)
        accs.append(accuracy(model, X[test], y[test]))
        models.append(model)
    return CVResult(accs, folds, models)


def permutation_importance(model: BoostModel, X, y, repeats: int = 10, seed=0,
                           return_repeats: bool = False) -> np.ndarray:
    """Mean accuracy drop when one column is shuffled, per feature.

    Columns the ensemble never splits on score exactly 0. The shuffle for
    (feature j, repeat r) is drawn from its own stream keyed on
    ``(seed, j, r)``, so results do not depend on which features are used.
    ``seed`` may be an int or a tuple of ints.
    """
    key = [int(v) for v in np.atleast_1d(seed)]
    X = _check_width(X, model.n_features)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("holdout is empty")
    out = np.zeros((repeats, model.n_features))
    if model.trees:
        per_tree = np.array([t.predict(X) for t in model.trees])
        base_acc = np.mean(((model.base_score + model.params.shrinkage * per_tree.sum(axis=0)) > 0) == y)
        users: dict[int, list[int]] = {}
        for ti, t in enumerate(model.trees):
            for j in t.used_features():
                users.setdefault(j, []).append(ti)
        for j in sorted(users):
            col = X[:, j]
            for rep in range(repeats):
                rng = np.random.default_rng([*key, j, rep])
                Xp = X.copy()
                Xp[:, j] = col[rng.permutation(len(col))]
                trees_out = per_tree.copy()
                for ti in users[j]:
                    trees_out[ti] = model.trees[ti].predict(Xp)
                f = model.base_score + model.params.shrinkage * trees_out.sum(axis=0)
                out[rep, j] = base_acc - np.mean((f > 0) == y)
    return out if return_repeats else out.mean(axis=0)
