import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facecascade.errors import DegenerateTargetError, DimensionError
from facecascade.ferns import (
    BoostedFerns,
    Fern,
    SplitTest,
    descend,
    descend_batch,
    fit_leaves,
    pixel_covariance,
    predict_boosted,
    predict_boosted_batch,
    predict_fern,
    select_split,
    train_boosted,
    train_fern,
)


def make_fern(tests, leaves, m):
    return Fern.from_tests([SplitTest(*t) for t in tests], leaves, m)


def test_single_test_convention():
    fern = make_fern([(0, 1, 0.5)], np.zeros((1, 2)), 2)
    assert descend(fern, [1.0, 0.0]) == 1
    assert descend(fern, [0.5, 0.0]) == 0  # equality goes left
    assert descend(fern, [0.0, 1.0]) == 0


def test_all_tests_fail_gives_leaf_zero():
    fern = make_fern([(0, 1, 10.0), (1, 2, 10.0), (2, 0, 10.0)], np.zeros((1, 8)), 3)
    assert descend(fern, [1.0, 2.0, 3.0]) == 0


def test_leaf_index_is_bit_assembly():
    rng = np.random.default_rng(0)
    tests = [(0, 3, 0.1), (2, 1, -0.2), (4, 0, 0.0)]
    fern = make_fern(tests, np.zeros((1, 8)), 5)
    for x in rng.normal(size=(50, 5)):
        bits = [int(x[i] - x[j] > t) for i, j, t in tests]
        assert descend(fern, x) == bits[2] * 4 + bits[1] * 2 + bits[0]


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=30)
def test_one_hot_indicator(depth, seed):
    rng = np.random.default_rng(seed)
    m = 6
    fern = Fern(rng.integers(0, m, depth), rng.integers(0, m, depth), rng.normal(0, 0.3, depth),
                np.zeros((1, 2**depth)), m)
    idx = descend_batch(fern, rng.normal(size=(40, m)))
    onehot = np.zeros((40, 2**depth))
    onehot[np.arange(40), idx] = 1
    assert np.all(onehot.sum(axis=1) == 1)
    assert np.all((idx >= 0) & (idx < 2**depth))


def test_descend_rejects_wrong_length():
    fern = make_fern([(0, 1, 0.0)], np.zeros((1, 2)), 3)
    with pytest.raises(DimensionError):
        descend(fern, [1.0, 2.0])


def test_zero_leaves_predict_zero():
    fern = make_fern([(0, 1, 0.0), (1, 2, 0.0)], np.zeros((3, 4)), 3)
    np.testing.assert_array_equal(predict_fern(fern, [3.0, 1.0, 2.0]), np.zeros(3))


def test_prediction_selects_leaf_column():
    leaves = np.arange(12, dtype=float).reshape(3, 4)
    fern = make_fern([(0, 1, 0.0), (1, 2, 0.0)], leaves, 3)
    x = [3.0, 2.0, 1.0]  # both tests pass -> leaf 3
    np.testing.assert_array_equal(predict_fern(fern, x), leaves[:, 3])


def test_prediction_matches_dense_product():
    rng = np.random.default_rng(1)
    m, depth = 8, 4
    fern = Fern(rng.integers(0, m, depth), rng.integers(0, m, depth), rng.normal(size=depth),
                rng.normal(size=(5, 2**depth)), m)
    for x in rng.normal(size=(20, m)):
        onehot = np.zeros(2**depth)
        onehot[descend(fern, x)] = 1.0
        np.testing.assert_allclose(predict_fern(fern, x), fern.leaves @ onehot, rtol=0, atol=1e-15)


def _best_pair_brute(X, y):
    best, pair = -1.0, None
    for i, j in itertools.permutations(range(X.shape[1]), 2):
        d = X[:, i] - X[:, j]
        if d.std() == 0:
            continue
        r = abs(np.corrcoef(d, y)[0, 1]) * y.std()
        if r > best + 1e-12:
            best, pair = r, (i, j)
    return pair


def test_split_finds_exact_difference_pair():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 6))
    R = X[:, 1] - X[:, 2]
    s = select_split(X, R, np.random.default_rng(3))
    assert {s.i, s.j} == {1, 2}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_split_pair_matches_all_pairs_correlation(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 7))
    R = rng.normal(size=(60, 3)) + X[:, [0]] * rng.normal(size=3)
    draw = np.random.default_rng(seed + 1)
    u = draw.standard_normal(3)
    y = R @ (u / np.linalg.norm(u))
    s = select_split(X, R, np.random.default_rng(seed + 1))
    i, j = _best_pair_brute(X, y)
    assert {s.i, s.j} == {i, j}


def test_constant_residuals_are_degenerate():
    X = np.random.default_rng(4).normal(size=(30, 4))
    with pytest.raises(DegenerateTargetError):
        select_split(X, np.full((30, 2), 0.7), np.random.default_rng(0))


def test_threshold_stays_in_feature_range():
    rng = np.random.default_rng(5)
    X = np.zeros((101, 2))
    X[:, 0] = np.linspace(-1.0, 1.0, 101)
    X[:, 1] = -X[:, 0]  # x0 - x1 spans [-2, 2]
    R = X[:, 0] - X[:, 1]
    pc = pixel_covariance(X)
    for _ in range(1000):
        s = select_split(X, R, rng, pc)
        assert -2.0 <= s.threshold <= 2.0


def test_leaf_means_without_shrinkage():
    idx = np.array([0, 0, 1, 1, 1])
    R = np.array([[1.0], [3.0], [2.0], [4.0], [6.0]])
    np.testing.assert_allclose(fit_leaves(idx, R, 4, 0.0), [[2.0, 4.0, 0.0, 0.0]])


def test_single_sample_leaf_shrinkage():
    leaves = fit_leaves(np.array([1]), np.array([[2.5, -1.0]]), 2, 1000.0)
    np.testing.assert_allclose(leaves[:, 1], np.array([2.5, -1.0]) / 1001.0, rtol=1e-15)
    np.testing.assert_array_equal(leaves[:, 0], 0.0)


def test_single_fern_ensemble_equals_trained_fern():
    rng = np.random.default_rng(6)
    X, Y = rng.normal(size=(80, 10)), rng.normal(size=(80, 3))
    model = train_boosted(X, Y, 1, 3, 10.0, np.random.default_rng(9))
    fern = train_fern(X, Y.copy(), 3, 10.0, np.random.default_rng(9))
    np.testing.assert_array_equal(model.ferns[0].leaves, fern.leaves)
    assert model.ferns[0].tests == fern.tests


def test_ensemble_prediction_is_sum_of_ferns():
    rng = np.random.default_rng(7)
    X, Y = rng.normal(size=(80, 10)), rng.normal(size=(80, 4))
    model = train_boosted(X, Y, 6, 3, 5.0, rng)
    for x in rng.normal(size=(30, 10)):
        total = sum(predict_fern(f, x) for f in model.ferns)
        np.testing.assert_allclose(predict_boosted(model, x), total, rtol=1e-12, atol=1e-14)


def test_hand_summed_ensemble():
    f1 = make_fern([(0, 1, 0.0)], [[1.0, 2.0]], 2)
    f2 = make_fern([(1, 0, 0.0)], [[10.0, 20.0]], 2)
    model = BoostedFerns((f1, f2))
    np.testing.assert_array_equal(predict_boosted(model, [1.0, 0.0]), [2.0 + 10.0])
    np.testing.assert_array_equal(predict_boosted(model, [0.0, 1.0]), [1.0 + 20.0])


def test_zero_leaf_ensemble_predicts_zero():
    f = make_fern([(0, 1, 0.0)], np.zeros((3, 2)), 2)
    np.testing.assert_array_equal(predict_boosted(BoostedFerns((f, f)), [0.3, 0.1]), np.zeros(3))


@pytest.mark.parametrize("seed", range(10))
def test_boosting_sse_never_increases(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 12))
    Y = np.tanh(X[:, :3] - X[:, 3:6]) + 0.1 * rng.normal(size=(150, 3))
    model = train_boosted(X, Y, 15, 4, 2.0, rng)
    R = Y.copy()
    sse = [np.sum(R**2)]
    for f in model.ferns:
        R -= f.leaves.T[descend_batch(f, X)]
        sse.append(np.sum(R**2))
    assert all(b <= a + 1e-9 for a, b in zip(sse, sse[1:]))
    np.testing.assert_allclose(Y - predict_boosted_batch(model, X), R, atol=1e-12)


def test_constant_target_reproduced_by_shrunk_mean():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(40, 5))
    model = train_boosted(X, np.full((40, 2), 3.0), 1, 2, 0.0, rng)
    np.testing.assert_allclose(predict_boosted_batch(model, X), 3.0, rtol=1e-12)


def test_train_boosted_rejects_bad_budgets():
    X = np.zeros((5, 3))
    with pytest.raises(ValueError):
        train_boosted(X, np.zeros((5, 1)), 0, 3, 1.0, 0)
    with pytest.raises(ValueError):
        train_boosted(X, np.zeros((5, 1)), 1, 0, 1.0, 0)
    with pytest.raises(DimensionError):
        train_boosted(X, np.zeros((4, 1)), 1, 1, 1.0, 0)
