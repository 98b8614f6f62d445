import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peakforge.surrogate import LEAF, ForestParams, SurrogateError, fit, predict


def _leaf_of(forest, t, x):
    node = 0
    while forest.feature[t, node] != LEAF:
        f = forest.feature[t, node]
        node = forest.left[t, node] if x[f] <= forest.threshold[t, node] else forest.right[t, node]
    return node


def test_constant_targets():
    rng = np.random.default_rng(0)
    X = rng.random((40, 3))
    forest = fit(X, np.full(40, 2.5), rng_state=1)
    mean, std = forest.predict_many(rng.random((20, 3)))
    assert np.all(mean == 2.5) and np.all(std == 0.0)


def test_two_points_pure_leaves():
    params = ForestParams(n_trees=1, max_depth=3, min_leaf=1, bootstrap=False)
    forest = fit(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), params, 0)
    assert predict(forest, np.array([0.0])) == (0.0, 0.0)
    assert predict(forest, np.array([1.0])) == (1.0, 0.0)


def test_exact_fit_without_bootstrap():
    rng = np.random.default_rng(1)
    X = rng.random((30, 2))
    y = rng.normal(size=30)
    forest = fit(X, y, ForestParams(n_trees=5, max_depth=30, min_leaf=1, bootstrap=False), 3)
    mean, _ = forest.predict_many(X)
    np.testing.assert_allclose(mean, y, rtol=0, atol=1e-12)


def test_sin_curve_rmse():
    rng = np.random.default_rng(42)
    x = rng.random((200, 1))
    y = np.sin(2 * np.pi * x[:, 0]) + 0.01 * rng.standard_normal(200)
    forest = fit(x, y, ForestParams(), 0)
    xt = rng.random((100, 1))
    mean, _ = forest.predict_many(xt)
    rmse = np.sqrt(np.mean((mean - np.sin(2 * np.pi * xt[:, 0])) ** 2))
    assert rmse < 0.15


def test_single_tree_has_zero_std():
    rng = np.random.default_rng(2)
    forest = fit(rng.random((50, 2)), rng.random(50), ForestParams(n_trees=1), 0)
    _, std = forest.predict_many(rng.random((30, 2)))
    assert np.all(std == 0)


def test_errors():
    with pytest.raises(SurrogateError):
        fit(np.zeros((1, 2)), np.zeros(1))
    forest = fit(np.random.default_rng(0).random((10, 2)), np.arange(10.0))
    with pytest.raises(SurrogateError):
        forest.predict_many(np.zeros((3, 5)))


def test_structure_invariants():
    rng = np.random.default_rng(4)
    X = rng.random((120, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.standard_normal(120)
    params = ForestParams(n_trees=10, max_depth=5, min_leaf=4, bootstrap=False)
    forest = fit(X, y, params, 9)
    for t in range(params.n_trees):
        assert forest.depth(t) <= params.max_depth
        counts = {}
        for x in X:
            leaf = _leaf_of(forest, t, x)
            counts[leaf] = counts.get(leaf, 0) + 1
        assert min(counts.values()) >= params.min_leaf
        for node in range(forest.node_count[t]):
            f = forest.feature[t, node]
            if f == LEAF:
                continue
            thr = forest.threshold[t, node]
            col = X[:, f]
            assert np.any(col < thr) and np.any(col > thr)  # strictly between observed values
            assert not np.any(col == thr)


def test_deterministic_given_seed():
    rng = np.random.default_rng(5)
    X, y = rng.random((80, 3)), rng.random(80)
    a, b = fit(X, y, rng_state=11), fit(X, y, rng_state=11)
    for field in ("feature", "threshold", "left", "right", "value"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    c = fit(X, y, rng_state=12)
    assert not np.array_equal(a.threshold, c.threshold)


def test_numba_and_numpy_growers_agree():
    rng = np.random.default_rng(6)
    X = rng.random((150, 5))
    y = np.sin(4 * X[:, 0]) + X[:, 3]
    a = fit(X, y, rng_state=2, use_numba=True)
    b = fit(X, y, rng_state=2, use_numba=False)
    for field in ("feature", "threshold", "left", "right", "value", "node_count"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 60), d=st.integers(1, 6))
def test_predictions_bounded_by_targets(seed, n, d):
    rng = np.random.default_rng(seed)
    X, y = rng.random((n, d)), rng.normal(size=n)
    forest = fit(X, y, ForestParams(n_trees=8), seed)
    mean, std = forest.predict_many(rng.random((25, d)))
    assert np.all(mean >= y.min() - 1e-12) and np.all(mean <= y.max() + 1e-12)
    assert np.all(std >= 0)


def test_uncertainty_shrinks_with_data():
    rng = np.random.default_rng(8)
    probe = np.linspace(0, 1, 64)[:, None]

    def avg_std(n):
        x = rng.random((n, 1))
        y = np.sin(2 * np.pi * x[:, 0]) + 0.1 * rng.standard_normal(n)
        return fit(x, y, ForestParams(), 0).predict_many(probe)[1].mean()

    stds = [avg_std(n) for n in (100, 200, 400, 800)]
    for a, b in zip(stds, stds[1:]):
        assert b <= 1.05 * a
