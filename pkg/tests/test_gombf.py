import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facecascade.errors import DimensionError, SingularSystemError
from facecascade.ferns import BoostedFerns, Fern, SplitTest, descend, predict_boosted, predict_boosted_batch, \
    train_boosted
from facecascade.gombf import (
    GoMBFModel,
    ModalityLayout,
    assemble_indicator,
    block_embed,
    global_optimize,
    group_rng,
    predict_gombf,
    predict_gombf_batch,
    regularized_objective,
    train_modular,
)


def dense_indicator(model, X):
    Phi = np.zeros((X.shape[0], model.n_columns))
    for s, x in enumerate(X):
        Phi[s] = assemble_indicator(model, x)
    return Phi


def ridge_oracle(Phi, Y, lam):
    return np.linalg.solve(Phi.T @ Phi + lam * np.eye(Phi.shape[1]), Phi.T @ Y).T


def small_problem(seed, n=60, m=8, widths=(2, 3), k=2, depth=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    Y = np.column_stack([np.sin(X[:, i] - X[:, i + 1]) for i in range(sum(widths))]) + 0.1 * rng.normal(
        size=(n, sum(widths)))
    layout = ModalityLayout.from_widths(widths, k)
    return X, Y, layout


def test_layout_must_tile():
    from facecascade.gombf import ModalityGroup
    with pytest.raises(DimensionError):
        ModalityLayout((ModalityGroup("a", 0, 2, 1), ModalityGroup("b", 3, 2, 1)))


def test_one_group_equals_boosted_ferns():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(50, 6)), rng.normal(size=(50, 3))
    mod = train_modular(X, Y, ModalityLayout.single(3, 4), 3, 5.0, seed=42)
    ref = train_boosted(X, Y, 4, 3, 5.0, group_rng(42, 0))
    np.testing.assert_array_equal(mod.group_models[0].leaf_matrix, ref.leaf_matrix)
    np.testing.assert_array_equal(mod.stacked_tests[0], ref.stacked_tests[0])
    np.testing.assert_array_equal(predict_gombf_batch(mod, X), predict_boosted_batch(ref, X))


def test_modular_beats_shared_budget_on_independent_slices():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 8))
    Y = np.column_stack([np.sign(X[:, 0] - X[:, 1]), np.sign(X[:, 4] - X[:, 5])])
    layout = ModalityLayout.from_widths([1, 1], 3)
    mod = train_modular(X, Y, layout, 2, 0.0, seed=3)
    mono = train_boosted(X, Y, 3, 2, 0.0, np.random.default_rng(3))
    err_mod = Y - predict_gombf_batch(mod, X)
    err_mono = Y - predict_boosted_batch(mono, X)
    for g in range(2):
        assert np.sum(err_mod[:, g] ** 2) <= np.sum(err_mono[:, g] ** 2)


def test_full_size_layout_counts():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 10))
    Y = rng.normal(size=(40, 184))
    layout = ModalityLayout.from_widths([46, 3, 3, 132], 80)
    model = train_modular(X, Y, layout, 5, 1000.0, seed=0)
    assert model.total_ferns == 320
    assert model.n_columns == 10240
    phi = assemble_indicator(model, X[0])
    assert phi.size == 10240 and phi.sum() == 320 and set(np.unique(phi)) == {0.0, 1.0}


def test_one_fern_indicator():
    fern = Fern.from_tests([SplitTest(0, 1, 0.0)], np.zeros((1, 2)), 2)
    model = GoMBFModel(ModalityLayout.single(1, 1), (BoostedFerns((fern,)),), np.zeros((1, 2)))
    np.testing.assert_array_equal(assemble_indicator(model, [1.0, 0.0]), [0.0, 1.0])
    np.testing.assert_array_equal(assemble_indicator(model, [0.0, 1.0]), [1.0, 0.0])


def test_indicator_matches_per_fern_descent():
    X, Y, layout = small_problem(3)
    model = train_modular(X, Y, layout, 2, 1.0, seed=0)
    ferns = [f for g in model.group_models for f in g.ferns]
    for x in X[:10]:
        expected = sorted(k * 4 + descend(f, x) for k, f in enumerate(ferns))
        assert list(np.flatnonzero(assemble_indicator(model, x))) == expected


def test_interpolation_with_zero_ridge():
    fern = Fern.from_tests([SplitTest(0, 1, 0.0), SplitTest(2, 3, 0.0)], np.zeros((2, 4)), 4)
    model = GoMBFModel(ModalityLayout.single(2, 1), (BoostedFerns((fern,)),), np.zeros((2, 4)))
    X = np.array([[0, 1, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0], [1, 0, 1, 0]], dtype=float)
    Y = np.array([[1.0, -1.0], [2.0, 0.5], [3.0, 7.0], [-4.0, 2.0]])
    fused = global_optimize(model, X, Y, lam=0.0)
    np.testing.assert_allclose(predict_gombf_batch(fused, X), Y, atol=1e-12)


def test_three_sample_ridge_matches_dense_oracle():
    rng = np.random.default_rng(4)
    f1 = Fern.from_tests([SplitTest(0, 1, 0.0)], np.zeros((2, 2)), 3)
    f2 = Fern.from_tests([SplitTest(1, 2, 0.0)], np.zeros((2, 2)), 3)
    model = GoMBFModel(ModalityLayout.single(2, 2), (BoostedFerns((f1, f2)),), np.zeros((2, 4)))
    X = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.5, 1.0]])
    Y = rng.normal(size=(3, 2))
    fused = global_optimize(model, X, Y, lam=0.1)
    W = ridge_oracle(dense_indicator(model, X), Y, 0.1)
    np.testing.assert_allclose(fused.fused_leaves, W, rtol=1e-8, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 100.0))
def test_ridge_matches_normal_equations(seed, lam):
    X, Y, layout = small_problem(seed, n=50, widths=(2, 2), k=2, depth=3)  # 4 ferns x 8 leaves = 32 columns
    model = train_modular(X, Y, layout, 3, 1.0, seed=seed)
    assert model.n_columns <= 64
    fused = global_optimize(model, X, Y, lam)
    W = ridge_oracle(dense_indicator(model, X), Y, lam)
    scale = np.abs(W).max()
    assert np.abs(fused.fused_leaves - W).max() <= 1e-8 * scale


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 1e3))
def test_fusion_never_raises_objective(seed, lam):
    X, Y, layout = small_problem(seed)
    model = train_modular(X, Y, layout, 2, 10.0, seed=seed)
    cols = model.indicator_columns(X)
    fused = global_optimize(model, X, Y, lam, cols=cols)
    before = regularized_objective(model.fused_leaves, cols, Y, lam)
    after = regularized_objective(fused.fused_leaves, cols, Y, lam)
    assert after <= before + 1e-9


def test_fusion_lowers_sse_on_full_rank_instance():
    # Every fern's indicator block sums to one, so only a single fern gives a
    # full-column-rank design over its visited leaves.
    X, Y, _ = small_problem(5, n=200, widths=(3,))
    model = train_modular(X, Y, ModalityLayout.single(3, 1), 3, 50.0, seed=1)
    Phi = dense_indicator(model, X)
    Phi = Phi[:, Phi.sum(axis=0) > 0]
    assert np.linalg.matrix_rank(Phi) == Phi.shape[1]
    fused = global_optimize(model, X, Y, lam=1e-8)
    sse = lambda m: np.sum((predict_gombf_batch(m, X) - Y) ** 2)
    assert sse(fused) < sse(model)


def test_unvisited_leaves_stay_zero():
    X, Y, layout = small_problem(6, n=12, widths=(1, 1), k=2, depth=4)
    model = train_modular(X, Y, layout, 4, 1.0, seed=0)
    fused = global_optimize(model, X, Y, 1.0)
    unvisited = dense_indicator(model, X).sum(axis=0) == 0
    assert unvisited.any()
    np.testing.assert_array_equal(fused.fused_leaves[:, unvisited], 0.0)


def test_zero_ridge_on_rank_deficient_design():
    # two identical ferns give identical indicator columns
    fern = Fern.from_tests([SplitTest(0, 1, 0.0)], np.zeros((1, 2)), 2)
    model = GoMBFModel(ModalityLayout.single(1, 2), (BoostedFerns((fern, fern)),), np.zeros((1, 4)))
    X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(SingularSystemError):
        global_optimize(model, X, np.ones((3, 1)), lam=0.0)
    with pytest.raises(ValueError):
        global_optimize(model, X, np.ones((3, 1)), lam=-1.0)


def test_prefusion_prediction_is_block_structured():
    X, Y, layout = small_problem(7, widths=(2, 3))
    model = train_modular(X, Y, layout, 2, 1.0, seed=2)
    for x in X[:5]:
        pred = predict_gombf(model, x)
        for g, sub in zip(layout.groups, model.group_models):
            np.testing.assert_allclose(pred[g.offset:g.offset + g.width], predict_boosted(sub, x), atol=1e-14)


def test_fused_prediction_is_dense_product():
    X, Y, layout = small_problem(8)
    fused = global_optimize(train_modular(X, Y, layout, 2, 1.0, seed=2), X, Y, 1.0)
    Phi = dense_indicator(fused, X)
    np.testing.assert_allclose(predict_gombf_batch(fused, X), Phi @ fused.fused_leaves.T, atol=1e-12)


def test_zero_leaves_predict_zero():
    X, Y, layout = small_problem(9)
    model = train_modular(X, Y, layout, 2, 1.0, seed=2).with_leaves(np.zeros((5, 16)))
    np.testing.assert_array_equal(predict_gombf(model, X[0]), np.zeros(5))


def test_block_embed_places_slices():
    X, Y, layout = small_problem(10)
    model = train_modular(X, Y, layout, 2, 1.0, seed=2)
    W = block_embed(layout, model.group_models)
    assert W.shape == (5, 16)
    np.testing.assert_array_equal(W[:2, 8:], 0.0)
    np.testing.assert_array_equal(W[2:, :8], 0.0)


@pytest.mark.parametrize("threads", [2, 4])
def test_thread_count_does_not_change_result(threads):
    X, Y, layout = small_problem(11, widths=(1, 2, 1, 1), k=3, depth=3)
    a = train_modular(X, Y, layout, 3, 1.0, seed=5, threads=1)
    b = train_modular(X, Y, layout, 3, 1.0, seed=5, threads=threads)
    np.testing.assert_array_equal(a.fused_leaves, b.fused_leaves)
    for p, q in zip(a.stacked_tests, b.stacked_tests):
        np.testing.assert_array_equal(p, q)
