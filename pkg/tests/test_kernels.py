import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_ope import _kernel_ops
from kernel_ope.kernels import (KernelError, KernelSpec, RkhsFunction, gram_matrix, kernel_apply, kernel_quadratic,
                                median_bandwidth, random_features, rkhs_norm)
from oracles import rbf


def test_gram_unit_diagonal(rng):
    X = rng.standard_normal((40, 3))
    K = gram_matrix(KernelSpec(0.7), X)
    assert np.all(np.diag(K) == 1.0)


def test_gram_identical_points():
    K = gram_matrix(KernelSpec(2.0), np.array([[1.0, 2.0], [1.0, 2.0]]))
    np.testing.assert_array_equal(K, np.ones((2, 2)))


def test_gram_distance_h():
    h = 1.3
    K = gram_matrix(KernelSpec(h), np.array([[0.0, 0.0], [h, 0.0]]))
    assert K[0, 1] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert K[0, 1] == pytest.approx(0.60653, abs=1e-5)


def test_gram_dimension_mismatch():
    with pytest.raises(KernelError):
        gram_matrix(KernelSpec(1.0), np.zeros((2, 2)), np.zeros((2, 3)))


def test_bad_bandwidth():
    with pytest.raises(KernelError):
        KernelSpec(0.0)
    with pytest.raises(KernelError):
        KernelSpec(1.0, family="laplace")


@given(n=st.integers(2, 500), seed=st.integers(0, 10**6), h=st.floats(0.05, 5.0))
def test_gram_symmetric_psd(n, seed, h):
    X = np.random.default_rng(seed).standard_normal((n, 2))
    K = gram_matrix(KernelSpec(h), X)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_gram_matches_loop(rng):
    X, Y = rng.standard_normal((7, 3)), rng.standard_normal((5, 3))
    K = gram_matrix(KernelSpec(0.9), X, Y)
    for i in range(7):
        for j in range(5):
            assert K[i, j] == pytest.approx(rbf(X[i], Y[j], 0.9), rel=1e-14)


def test_compiled_paths_match_dense(rng):
    k = KernelSpec(0.8, time_horizon=3.0)
    X = rng.standard_normal((400, 3))
    X[:, -1] = rng.integers(0, 5, 400)
    Y = rng.standard_normal((150, 3))
    Y[:, -1] = rng.integers(0, 5, 150)
    C = rng.standard_normal((400, 2))
    K = gram_matrix(k, X)
    np.testing.assert_allclose(_kernel_ops.quadratic_gram(X, C, k._inv2h2, k._horizon), C.T @ K @ C, rtol=1e-12)
    np.testing.assert_allclose(_kernel_ops.kernel_matvec(Y, X, C, k._inv2h2, k._horizon),
                               gram_matrix(k, Y, X) @ C, rtol=1e-12, atol=1e-13)


def test_vectorized_exp_accuracy(rng):
    x = -rng.uniform(0, 700, 100_000)
    x[:5] = [0.0, -1e-300, -0.5, -708.0, -1e-9]
    buf = x.copy()
    _kernel_ops.exp_nonpos(buf, np.empty(len(x), dtype=np.int64), len(x))
    np.testing.assert_allclose(buf, np.exp(x), rtol=4e-15)


def test_compiled_quadratic_deterministic(rng):
    X = rng.standard_normal((3500, 2))
    C = rng.standard_normal((3500, 2))
    k = KernelSpec(0.5)
    a = kernel_quadratic(k, X, C)
    b = kernel_quadratic(k, X, C)
    np.testing.assert_array_equal(a, b)


def test_time_truncation_zero(rng):
    k = KernelSpec(1.0, time_horizon=4)
    anchors = np.column_stack([rng.standard_normal((6, 2)), rng.integers(0, 4, 6)])
    f = RkhsFunction(k, anchors=anchors, coeffs=rng.standard_normal(6))
    pts = np.column_stack([rng.standard_normal((10, 2)), np.full(10, 4.0)])
    assert np.all(f(pts) == 0.0)
    pts[:, -1] = 7
    assert np.all(f(pts) == 0.0)


@given(seed=st.integers(0, 10**6), H=st.integers(1, 6))
def test_time_truncation_property(seed, H):
    rng = np.random.default_rng(seed)
    k = KernelSpec(0.8, time_horizon=H)
    anchors = np.column_stack([rng.standard_normal((5, 1)), rng.integers(0, H + 2, 5)])
    f = RkhsFunction(k, anchors=anchors, coeffs=rng.standard_normal(5))
    pts = np.column_stack([rng.standard_normal((8, 1)), H + rng.integers(0, 3, 8)])
    assert np.all(f(pts) == 0.0)


def test_rkhs_norm_examples():
    k = KernelSpec(1.0)
    assert rkhs_norm(RkhsFunction(k, anchors=[[0.3]], coeffs=[1.0])) == 1.0
    assert rkhs_norm(RkhsFunction(k, anchors=[[0.3], [1.0]], coeffs=[0.0, 0.0])) == 0.0
    assert rkhs_norm(RkhsFunction(k, anchors=[[0.3], [0.3]], coeffs=[1.0, 1.0])) == pytest.approx(2.0, abs=1e-15)


def test_rkhs_norm_feature_form():
    k = KernelSpec(1.0)
    fmap = random_features(k, 4, 2, seed=0)
    w = np.array([1.0, -2.0, 0.5, 0.0, 3.0, 1.0, 0.0, 2.0])
    f = RkhsFunction(k, feature_map=fmap, weights=w)
    assert rkhs_norm(f) == pytest.approx(math.sqrt(np.sum(w**2) / 4))


@given(c=st.floats(-50, 50), seed=st.integers(0, 10**6))
def test_rkhs_norm_homogeneous(c, seed):
    rng = np.random.default_rng(seed)
    f = RkhsFunction(KernelSpec(0.6), anchors=rng.standard_normal((6, 2)), coeffs=rng.standard_normal(6))
    assert rkhs_norm(f.scaled(c)) == pytest.approx(abs(c) * rkhs_norm(f), rel=1e-9, abs=1e-12)


def test_rkhs_norm_rejects_corrupt_gram(monkeypatch):
    import kernel_ope.kernels as kk

    f = RkhsFunction(KernelSpec(1.0), anchors=[[0.0], [5.0]], coeffs=[1.0, 1.0])
    monkeypatch.setattr(kk, "kernel_quadratic", lambda *a: -1e-3)
    with pytest.raises(KernelError):
        rkhs_norm(f)
    monkeypatch.setattr(kk, "kernel_quadratic", lambda *a: -1e-9)
    assert rkhs_norm(f) == 0.0


def test_rkhs_evaluation_linear(rng):
    k = KernelSpec(0.5)
    A = rng.standard_normal((5, 2))
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    X = rng.standard_normal((9, 2))
    lhs = RkhsFunction(k, anchors=A, coeffs=2 * a - 3 * b)(X)
    rhs = 2 * RkhsFunction(k, anchors=A, coeffs=a)(X) - 3 * RkhsFunction(k, anchors=A, coeffs=b)(X)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_rkhs_json_roundtrip(rng):
    k = KernelSpec(0.5, time_horizon=3)
    f = RkhsFunction(k, anchors=rng.standard_normal((4, 3)), coeffs=rng.standard_normal(4))
    g = RkhsFunction.from_dict(f.to_dict())
    X = rng.standard_normal((6, 3))
    np.testing.assert_array_equal(f(X), g(X))
    fm = RkhsFunction(k, feature_map=random_features(k, 8, 3, seed=1), weights=rng.standard_normal(16))
    np.testing.assert_array_equal(fm(X), RkhsFunction.from_dict(fm.to_dict())(X))


def test_random_features_seeded():
    k = KernelSpec(0.7)
    a, b = random_features(k, 50, 3, seed=9), random_features(k, 50, 3, seed=9)
    np.testing.assert_array_equal(a.frequencies, b.frequencies)
    with pytest.raises(KernelError):
        random_features(k, 0, 3)


def test_random_features_converge_at_distance_h():
    h = 0.9
    fmap = random_features(KernelSpec(h), 100_000, 2, seed=3)
    x = np.array([[0.2, -0.1]])
    y = x + np.array([[h, 0.0]])
    assert abs(fmap.approx_kernel(x, y)[0, 0] - math.exp(-0.5)) < 0.01


def test_random_features_self_inner_product(rng):
    fmap = random_features(KernelSpec(1.0), 256, 3, seed=0)
    X = rng.standard_normal((100, 3))
    phi = fmap(X)
    selfip = np.sum(phi * phi, axis=1) / fmap.m_features
    assert abs(selfip.mean() - 1.0) < 0.02
    np.testing.assert_allclose(selfip, 1.0, atol=1e-12)


def test_random_features_unbiased_over_seeds(rng):
    k = KernelSpec(1.0)
    x, y = rng.standard_normal((1, 2)), rng.standard_normal((1, 2))
    vals = [random_features(k, 20, 2, seed=s).approx_kernel(x, y)[0, 0] for s in range(3000)]
    se = np.std(vals) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - gram_matrix(k, x, y)[0, 0]) < 4 * se


def test_feature_norm_converges_to_anchor_norm(rng):
    k = KernelSpec(1.0)
    A = rng.standard_normal((10, 2))
    alpha = rng.standard_normal(10)
    exact = rkhs_norm(RkhsFunction(k, anchors=A, coeffs=alpha))
    # projection of f = sum alpha_i k(., a_i) onto the features: w = sum_i alpha_i phi(a_i)
    fmap = random_features(k, 10_000, 2, seed=5)
    w = fmap(A).T @ alpha
    approx = rkhs_norm(RkhsFunction(k, feature_map=fmap, weights=w))
    assert abs(approx - exact) / exact < 0.05


def test_median_bandwidth_examples():
    assert median_bandwidth(np.array([[0.0], [3.0]])) == 3.0
    assert median_bandwidth(np.array([[0.0], [1.0], [2.0]])) == 1.0
    with pytest.raises(KernelError):
        median_bandwidth(np.ones((5, 2)))


def test_median_bandwidth_subsample(rng):
    X = rng.standard_normal((5000, 2))
    sub = median_bandwidth(X, seed=1)
    assert sub == median_bandwidth(X, seed=1)
    full_d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))[np.triu_indices(5000, 1)]
    assert abs(sub - np.median(full_d)) / np.median(full_d) < 0.10


def test_kernel_apply_large_matches_dense(rng):
    k = KernelSpec(0.4)
    X, Y = rng.standard_normal((3100, 2)), rng.standard_normal((3100, 2))
    c = rng.standard_normal(3100)
    np.testing.assert_allclose(kernel_apply(k, X[:50], Y, c), gram_matrix(k, X[:50], Y) @ c, atol=1e-11)
