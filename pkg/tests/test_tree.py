import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from uplift_policy.uplift.tree import (BaggedTrees, RegressionTree, TreeParams, fit_regressor,
                                       fit_tree, regressor_from_dict)


def sse(v):
    return float(((v - v.mean()) ** 2).sum()) if v.size else 0.0


def oracle_best_gain(X, y, min_leaf):
    """Exhaustive search over every midpoint of every feature."""
    best = 0.0
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            left = X[:, f] <= (lo + hi) / 2
            if min(left.sum(), (~left).sum()) < min_leaf:
                continue
            best = max(best, sse(y) - sse(y[left]) - sse(y[~left]))
    return best


def leaf_rows(tree, X):
    """Leaf index reached by every row."""
    node = np.zeros(X.shape[0], dtype=int)
    for i in range(X.shape[0]):
        while tree.feature[node[i]] >= 0:
            f = tree.feature[node[i]]
            node[i] = tree.left[node[i]] if X[i, f] <= tree.threshold[node[i]] else tree.right[node[i]]
    return node


def test_constant_targets_make_a_single_leaf():
    X = np.random.default_rng(0).random((50, 3))
    tree = fit_tree(X, np.full(50, 5.0), TreeParams(max_depth=5, min_leaf_size=1))
    assert tree.n_nodes == 1
    assert np.all(tree.predict(np.random.default_rng(1).random((10, 3))) == 5.0)


def test_step_target_splits_between_classes():
    x = np.array([0.1, 0.2, 0.4, 0.6, 0.7, 0.9])
    y = (x > 0.5).astype(float)
    tree = fit_tree(x[:, None], y, TreeParams(max_depth=1, min_leaf_size=1))
    assert tree.n_leaves == 2
    assert 0.4 <= tree.threshold[0] < 0.6
    assert tree.threshold[0] == pytest.approx(0.5)
    assert tree.predict([[0.3], [0.8]]).tolist() == [0.0, 1.0]


def test_min_leaf_equal_to_n_gives_root_only():
    rng = np.random.default_rng(2)
    X, y = rng.random((30, 2)), rng.normal(size=30)
    tree = fit_tree(X, y, TreeParams(max_depth=8, min_leaf_size=30))
    assert tree.n_nodes == 1
    assert tree.predict(X[:1])[0] == pytest.approx(y.mean(), rel=1e-14)


def test_depth_zero_is_root_only():
    rng = np.random.default_rng(3)
    tree = fit_tree(rng.random((20, 1)), rng.normal(size=20), TreeParams(max_depth=0, min_leaf_size=1))
    assert tree.n_nodes == 1


@pytest.mark.parametrize("X,y", [(np.zeros((0, 2)), np.zeros(0)),
                                 (np.array([[np.nan]]), np.array([1.0]))])
def test_bad_input_raises(X, y):
    with pytest.raises(ValueError):
        fit_tree(X, y, TreeParams(min_leaf_size=1))


def test_fewer_rows_than_min_leaf_raises():
    with pytest.raises(ValueError):
        fit_tree(np.zeros((3, 1)), np.zeros(3), TreeParams(min_leaf_size=5))


@pytest.mark.parametrize("kw", [dict(max_depth=-1), dict(min_leaf_size=0), dict(n_trees=0)])
def test_params_validate(kw):
    with pytest.raises(ValueError):
        TreeParams(**kw)


data = st.integers(8, 40).flatmap(lambda n: st.tuples(
    st.lists(st.lists(st.integers(0, 9), min_size=2, max_size=2), min_size=n, max_size=n),
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n),
))


@given(data=data, min_leaf=st.integers(1, 4))
def test_root_split_matches_exhaustive_search(data, min_leaf):
    X = np.array(data[0], dtype=float) / 10
    y = np.array(data[1])
    assume(y.size >= 2 * min_leaf)
    tree = fit_tree(X, y, TreeParams(max_depth=1, min_leaf_size=min_leaf))
    best = oracle_best_gain(X, y, min_leaf)
    if tree.n_nodes == 1:
        assert best <= 1e-9 * max(sse(y), 1.0)
    else:
        left = X[:, tree.feature[0]] <= tree.threshold[0]
        gain = sse(y) - sse(y[left]) - sse(y[~left])
        assert gain == pytest.approx(best, rel=1e-9, abs=1e-9)


@given(data=data, min_leaf=st.integers(1, 5), depth=st.integers(0, 5))
def test_every_leaf_respects_min_leaf_size(data, min_leaf, depth):
    X = np.array(data[0], dtype=float) / 10
    y = np.array(data[1])
    assume(y.size >= min_leaf)
    tree = fit_tree(X, y, TreeParams(max_depth=depth, min_leaf_size=min_leaf))
    counts = np.bincount(leaf_rows(tree, X), minlength=tree.n_nodes)
    leaves = tree.feature < 0
    assert np.all(counts[leaves] >= min_leaf)
    assert np.array_equal(counts[leaves], tree.n_samples[leaves])


@given(data=data, min_leaf=st.integers(1, 4))
def test_deeper_trees_never_fit_worse(data, min_leaf):
    X = np.array(data[0], dtype=float) / 10
    y = np.array(data[1])
    assume(y.size >= min_leaf)
    mse = [np.mean((fit_tree(X, y, TreeParams(max_depth=d, min_leaf_size=min_leaf)).predict(X) - y) ** 2)
           for d in range(6)]
    assert all(b <= a + 1e-12 for a, b in zip(mse, mse[1:]))


@given(data=data, seed=st.integers(0, 1000))
def test_row_order_does_not_change_predictions(data, seed):
    X = np.array(data[0], dtype=float) / 10
    y = np.array(data[1])
    perm = np.random.default_rng(seed).permutation(y.size)
    hp = TreeParams(max_depth=4, min_leaf_size=2)
    grid = np.array([[a, b] for a in np.linspace(0, 1, 11) for b in np.linspace(0, 1, 11)])
    assert np.array_equal(fit_tree(X, y, hp).predict(grid), fit_tree(X[perm], y[perm], hp).predict(grid))


def test_serialization_round_trip():
    rng = np.random.default_rng(4)
    X, y = rng.random((200, 3)), rng.normal(size=200)
    tree = fit_tree(X, y, TreeParams(max_depth=4, min_leaf_size=5))
    back = RegressionTree.from_dict(tree.to_dict())
    assert np.array_equal(back.predict(X), tree.predict(X))


def test_bagged_forest_is_seeded_and_serializable():
    rng = np.random.default_rng(5)
    X, y = rng.random((300, 2)), rng.normal(size=300)
    hp = TreeParams(max_depth=3, min_leaf_size=10, n_trees=5, seed=9)
    a, b = fit_regressor(X, y, hp), fit_regressor(X, y, hp)
    assert isinstance(a, BaggedTrees) and len(a.trees) == 5
    assert np.array_equal(a.predict(X), b.predict(X))
    assert np.array_equal(regressor_from_dict(a.to_dict()).predict(X), a.predict(X))
    other = fit_regressor(X, y, hp, stream=1)
    assert not np.array_equal(other.predict(X), a.predict(X))
