import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmadopt import gbm
from mmadopt.gbm import BoostModel, GBMParams, Tree

SEPARABLE_X = np.array([[0.0], [1.0], [10.0], [11.0]])
SEPARABLE_Y = np.array([0, 0, 1, 1])

# 6-point, 2-feature fixture for the hand trace
TRACE_X = np.array([[1.0, 5.0], [2.0, 3.0], [3.0, 6.0], [4.0, 1.0], [5.0, 4.0], [6.0, 2.0]])
TRACE_Y = np.array([0, 0, 1, 0, 1, 1])


def _sig(f):
    return 1.0 / (1.0 + math.exp(-f))


def _hand_stump(X, r, min_leaf):
    """Best (feature, threshold) by variance reduction; scan order gives the tie rule."""
    n = len(r)
    total = sum(r)
    best = None
    for j in range(X.shape[1]):
        vals = sorted(set(X[:, j]))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left = [i for i in range(n) if X[i, j] <= thr]
            right = [i for i in range(n) if X[i, j] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            sl = sum(r[i] for i in left)
            sr = sum(r[i] for i in right)
            gain = sl * sl / len(left) + sr * sr / len(right) - total * total / n
            if best is None or gain > best[0]:
                best = (gain, j, thr, left, right)
    return best


def _hand_trace(X, y, rounds, shrink, min_leaf):
    p_bar = sum(y) / len(y)
    F = [math.log(p_bar / (1 - p_bar))] * len(y)
    splits = []
    for _ in range(rounds):
        p = [_sig(f) for f in F]
        r = [y[i] - p[i] for i in range(len(y))]
        h = [p[i] * (1 - p[i]) for i in range(len(y))]
        _, j, thr, left, right = _hand_stump(X, r, min_leaf)
        splits.append((j, thr))
        for members in (left, right):
            step = sum(r[i] for i in members) / max(sum(h[i] for i in members), 1e-12)
            for i in members:
                F[i] += shrink * step
    return F, splits


def test_two_round_stumps_match_hand_trace():
    params = GBMParams(n_trees=2, shrinkage=0.5, max_depth=1, min_leaf=1)
    model = gbm.fit(TRACE_X, TRACE_Y, params)
    F, splits = _hand_trace(TRACE_X, TRACE_Y, 2, 0.5, 1)
    assert np.max(np.abs(model.decision_function(TRACE_X) - np.array(F))) <= 1e-9
    assert [(int(t.feature[0]), float(t.threshold[0])) for t in model.trees] == splits


def test_hand_trace_values_frozen():
    # first round splits feature 0 at 2.5 (r = -1/2, -1/2 | 1/2, -1/2, 1/2, 1/2): Newton steps -2 and +1
    F, splits = _hand_trace(TRACE_X, TRACE_Y, 1, 0.5, 1)
    assert splits == [(0, 2.5)]
    assert F == pytest.approx([-1.0, -1.0, 0.5, 0.5, 0.5, 0.5], abs=1e-12)


def test_balanced_labels_zero_base_score():
    model = gbm.fit(SEPARABLE_X, SEPARABLE_Y, GBMParams(n_trees=1, min_leaf=1))
    assert model.base_score == 0.0


def test_separable_fixture_reaches_full_accuracy():
    params = GBMParams(n_trees=20, min_leaf=1)
    model = gbm.fit(SEPARABLE_X, SEPARABLE_Y, params)
    assert gbm.accuracy(model, SEPARABLE_X, SEPARABLE_Y) == 1.0
    assert gbm.predict_proba(model, np.array([10.0])) > 0.5
    losses = model.train_loss
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_zero_tree_model_is_half():
    m = BoostModel(0.0, [], GBMParams(n_trees=0), 3)
    assert gbm.predict_proba(m, np.zeros(3)) == 0.5


def test_width_mismatch():
    m = BoostModel(0.0, [], GBMParams(n_trees=0), 3)
    with pytest.raises(ValueError):
        gbm.predict_proba(m, np.zeros(4))


def test_fit_errors():
    with pytest.raises(ValueError):
        gbm.fit(np.zeros((10, 2)), np.ones(10))
    with pytest.raises(ValueError):
        gbm.fit(np.zeros((10, 2)), np.array([0, 1] * 4))


def test_monotone_model_in_feature():
    # every split on feature 1, left leaves lower than right ones
    trees = [
        Tree(np.array([1, -1, -1]), np.array([0.0, 0, 0]), np.array([1, -1, -1]), np.array([2, -1, -1]),
             np.array([0.0, -1.0, 1.0])),
        Tree(np.array([1, 1, -1, -1, -1]), np.array([2.0, -1.0, 0, 0, 0]), np.array([1, 3, -1, -1, -1]),
             np.array([2, 4, -1, -1, -1]), np.array([0.0, 0, 0.7, -0.3, 0.1])),
    ]
    m = BoostModel(0.1, trees, GBMParams(n_trees=2, shrinkage=0.3, max_depth=2), 2)
    sweep = np.column_stack([np.full(400, 7.0), np.linspace(-5, 5, 400)])
    p = m.predict_proba(sweep)
    assert np.all(np.diff(p) >= 0)


def _fixture(seed, n=120, d=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    X[:, 2] = np.round(X[:, 2])  # ties
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(scale=0.8, size=n) > 0).astype(int)
    return X, y


@pytest.mark.parametrize("seed", range(5))
def test_loss_non_increasing_and_leaf_sizes(seed):
    X, y = _fixture(seed)
    params = GBMParams(n_trees=30, max_depth=3, min_leaf=7)
    m = gbm.fit(X, y, params)
    assert len(m.train_loss) == 31
    assert all(b <= a + 1e-15 for a, b in zip(m.train_loss, m.train_loss[1:]))
    for t in m.trees:
        assert t.depth() <= 3
        counts = np.bincount(t.apply(X), minlength=len(t.value))
        leaves = np.nonzero(t.left < 0)[0]
        assert np.all(counts[leaves] >= 7)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (24, 3), elements=st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 1))),
       st.lists(st.integers(0, 1), min_size=24, max_size=24).filter(lambda v: 0 < sum(v) < 24))
def test_loss_non_increasing_property(X, y):
    m = gbm.fit(X, np.array(y), GBMParams(n_trees=15, max_depth=2, min_leaf=2))
    assert all(b <= a + 1e-12 for a, b in zip(m.train_loss, m.train_loss[1:]))


def test_serialization_bit_exact():
    X, y = _fixture(9)
    m = gbm.fit(X, y, GBMParams(n_trees=10))
    back = BoostModel.from_json(m.to_json())
    assert back.decision_function(X).tobytes() == m.decision_function(X).tobytes()
    assert back.to_json() == m.to_json()


def test_row_order_does_not_change_predictions():
    X, y = _fixture(3)
    perm = np.random.default_rng(0).permutation(len(y))
    a = gbm.fit(X, y, GBMParams(n_trees=20))
    b = gbm.fit(X[perm], y[perm], GBMParams(n_trees=20))
    grid = np.random.default_rng(1).normal(size=(200, X.shape[1]))
    assert np.allclose(a.decision_function(grid), b.decision_function(grid), rtol=0, atol=1e-9)
    assert [t.feature.tolist() for t in a.trees] == [t.feature.tolist() for t in b.trees]


def test_duplicate_and_constant_columns_ignored_exactly():
    X, y = _fixture(4, d=4)
    wide = np.column_stack([X, np.full(len(y), 3.0), X[:, 1], X[:, 0]])
    a = gbm.fit(X, y, GBMParams(n_trees=15))
    b = gbm.fit(wide, y, GBMParams(n_trees=15))
    assert a.decision_function(X).tobytes() == b.decision_function(wide).tobytes()
    # duplicates lose the lowest-index tie-break
    assert max(b.used_features()) < 4


def test_stratified_folds_exact_sizes():
    y = np.array([0, 1] * 50)
    folds = gbm.stratified_folds(y, 5, seed=2)
    for f in range(5):
        assert np.sum(folds == f) == 20
        assert np.sum(y[folds == f]) == 10
    assert np.array_equal(folds, gbm.stratified_folds(y, 5, seed=2))
    with pytest.raises(ValueError):
        gbm.stratified_folds(np.array([0] * 10 + [1] * 3), 5)


def test_cross_validate_deterministic():
    X, y = _fixture(5, n=100)
    a = gbm.cross_validate(X, y, k=5, seed=8, params=GBMParams(n_trees=10))
    b = gbm.cross_validate(X, y, k=5, seed=8, params=GBMParams(n_trees=10))
    assert a.fold_accuracies == b.fold_accuracies
    assert np.array_equal(a.folds, b.folds)
    assert 0.0 <= a.mean <= 1.0


def test_permutation_importance_constant_and_bounds():
    X, y = _fixture(6)
    X[:, 4] = 2.5
    m = gbm.fit(X, y, GBMParams(n_trees=20))
    imp = gbm.permutation_importance(m, X, y, repeats=5, seed=1)
    assert imp[4] == 0.0
    assert np.all(np.isfinite(imp)) and np.all(np.abs(imp) <= 1.0)
    again = gbm.permutation_importance(m, X, y, repeats=5, seed=1)
    assert np.array_equal(imp, again)


def test_permutation_importance_label_column():
    rng = np.random.default_rng(12)
    y = rng.integers(0, 2, size=500)
    X = y[:, None].astype(float)
    m = gbm.fit(X, y, GBMParams(n_trees=10))
    base = gbm.accuracy(m, X, y)
    imp = gbm.permutation_importance(m, X, y, repeats=10, seed=0)
    assert imp[0] == pytest.approx(base - 0.5, abs=0.1)
