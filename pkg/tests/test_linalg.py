import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from naum.errors import InvalidDimensions, InvalidParameter, NonFiniteInput
from naum.linalg import (IdentityMap, SamplingMap, SamplingPattern, adjoint_map, apply_map,
                         as_dense, nuclear_norm, shrink_singular, shrink_singular_with_values,
                         spectral_norm_sq, thin_svd)
from naum.mc import sample_mask


def svd_shrink_reference(X, nu):
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    return (U * np.maximum(s - nu, 0.0)) @ Vt


# ---- dense matrices and patterns -------------------------------------------

def test_as_dense_rejects_bad_input():
    with pytest.raises(InvalidDimensions):
        as_dense(np.zeros(3))
    with pytest.raises(NonFiniteInput):
        as_dense([[1.0, np.nan]])
    A = as_dense([[1, 2]])
    assert A.dtype == np.float64 and A.flags.c_contiguous


def test_pattern_validation():
    with pytest.raises(InvalidDimensions):
        SamplingPattern(2, 2, [0, 0], [1, 0])  # not sorted
    with pytest.raises(InvalidDimensions):
        SamplingPattern(2, 2, [0, 0], [1, 1])  # duplicate
    with pytest.raises(InvalidDimensions):
        SamplingPattern(2, 2, [2], [0])
    with pytest.raises(InvalidDimensions):
        SamplingPattern.from_pairs(2, 2, [(1, 1), (0, 0), (1, 1)])
    p = SamplingPattern.from_pairs(3, 3, [(2, 0), (0, 1)])
    assert p.pairs() == [(0, 1), (2, 0)]
    assert len(p) == 2
    with pytest.raises(ValueError):
        p.i[0] = 1


def test_pattern_csr_and_gather_product(rng):
    pat = sample_mask(7, 5, 0.4, seed=3)
    X, Y = rng.standard_normal((7, 2)), rng.standard_normal((5, 2))
    np.testing.assert_allclose(pat.gather_product(X, Y), pat.gather(X @ Y.T), atol=1e-14)
    vals = rng.standard_normal(len(pat))
    dense = np.zeros((7, 5))
    dense[pat.i, pat.j] = vals
    np.testing.assert_array_equal(pat.to_csr(vals).toarray(), dense)


# ---- linear maps --------------------------------------------------------------

def test_identity_map_examples():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    lin = IdentityMap(2, 2)
    np.testing.assert_array_equal(apply_map(lin, M), [1, 2, 3, 4])
    np.testing.assert_array_equal(adjoint_map(lin, np.array([1.0, 2, 3, 4])), M)


def test_sampling_map_examples():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    lin = SamplingMap(SamplingPattern.from_pairs(2, 2, [(0, 0), (1, 1)]))
    np.testing.assert_array_equal(apply_map(lin, M), [1, 4])
    lin = SamplingMap(SamplingPattern.from_pairs(2, 2, [(0, 1)]))
    np.testing.assert_array_equal(adjoint_map(lin, np.array([5.0])), [[0, 5], [0, 0]])


def test_map_dimension_errors():
    lin = IdentityMap(2, 3)
    with pytest.raises(InvalidDimensions):
        apply_map(lin, np.zeros((3, 2)))
    with pytest.raises(InvalidDimensions):
        adjoint_map(lin, np.zeros(5))


@pytest.mark.parametrize("sampled", [False, True])
def test_map_adjoint_and_right_inverse(rng, sampled):
    for _ in range(20):
        m, n = rng.integers(1, 12, size=2)
        lin = SamplingMap(sample_mask(m, n, rng.uniform(0.1, 1), int(rng.integers(1000)))) \
            if sampled else IdentityMap(m, n)
        M = rng.standard_normal((m, n))
        v = rng.standard_normal(lin.q)
        # <A M, v> = <M, A* v>
        np.testing.assert_allclose(apply_map(lin, M) @ v, np.sum(M * adjoint_map(lin, v)), atol=1e-12)
        np.testing.assert_allclose(apply_map(lin, adjoint_map(lin, v)), v, atol=1e-12)


# ---- thin SVD -----------------------------------------------------------------

def check_svd(X, res):
    t = min(X.shape)
    assert res.U.shape == (X.shape[0], t) and res.V.shape == (X.shape[1], t)
    assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)
    np.testing.assert_allclose(res.U.T @ res.U, np.eye(t), atol=1e-10)
    np.testing.assert_allclose(res.V.T @ res.V, np.eye(t), atol=1e-10)
    assert np.linalg.norm(res.reconstruct() - X) <= 1e-10 * (1 + np.linalg.norm(X))
    np.testing.assert_allclose(res.s, np.linalg.svd(X, compute_uv=False), atol=1e-10 * (1 + res.s[0]))


def test_thin_svd_diagonal():
    res = thin_svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(res.s, [3, 1])
    np.testing.assert_allclose(np.abs(res.U), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(np.abs(res.V), np.eye(2), atol=1e-15)


def test_thin_svd_zero():
    res = thin_svd(np.zeros((3, 2)))
    np.testing.assert_array_equal(res.s, [0, 0])
    check_svd(np.zeros((3, 2)), res)


def test_thin_svd_random_shapes(rng):
    for _ in range(100):
        m, n = rng.integers(1, 65), rng.integers(1, 33)
        X = rng.standard_normal((m, n))
        check_svd(X, thin_svd(X))


def test_thin_svd_rank_deficient(rng):
    X = rng.standard_normal((10, 2)) @ rng.standard_normal((2, 5))
    res = thin_svd(X)
    check_svd(X, res)
    assert res.s[2] < 1e-12 * res.s[0]


def test_thin_svd_ill_conditioned(rng):
    Q1, _ = np.linalg.qr(rng.standard_normal((20, 4)))
    Q2, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    s = np.array([1.0, 1e-4, 1e-8, 1e-13])
    res = thin_svd((Q1 * s) @ Q2.T)
    np.testing.assert_allclose(res.s, s, rtol=1e-6, atol=1e-15)


def test_thin_svd_rejects_nonfinite():
    with pytest.raises(NonFiniteInput):
        thin_svd(np.array([[np.inf, 0.0]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3, allow_nan=False, width=64)))
def test_thin_svd_property(X):
    check_svd(X, thin_svd(X))


# ---- shrinkage ----------------------------------------------------------------

def test_shrink_examples(rng):
    X = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(shrink_singular(X, 0.0), X)
    np.testing.assert_allclose(shrink_singular(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(shrink_singular(np.array([[0.0, 2.0], [2.0, 0.0]]), 1.0),
                               [[0, 1], [1, 0]], atol=1e-15)
    with pytest.raises(InvalidParameter):
        shrink_singular(X, -1e-3)


def test_shrink_matches_full_svd(rng):
    for _ in range(100):
        X = rng.standard_normal((6, 4))
        s1 = np.linalg.svd(X, compute_uv=False)[0]
        for nu in (0.0, 0.5, s1 + 1):
            np.testing.assert_allclose(shrink_singular(X, nu), svd_shrink_reference(X, nu), atol=1e-10)


def test_shrink_optimality(rng):
    for _ in range(30):
        X = rng.standard_normal((8, 5))
        nu = rng.uniform(0.1, 2.0)
        W, s_bar = shrink_singular_with_values(X, nu)
        # X - W is a subgradient of nu ||.||_* at W
        assert np.linalg.svd(X - W, compute_uv=False)[0] <= nu + 1e-8
        s = np.linalg.svd(X, compute_uv=False)
        kept = s_bar > 0
        np.testing.assert_allclose(s[kept] - s_bar[kept], nu, atol=1e-8)
        np.testing.assert_allclose(np.sum(s_bar), nuclear_norm(W), atol=1e-10)


def test_nuclear_norm(rng):
    X = rng.standard_normal((7, 3))
    np.testing.assert_allclose(nuclear_norm(X), np.linalg.norm(X, "nuc"), rtol=1e-12)


# ---- spectral norm ------------------------------------------------------------

def test_spectral_norm_examples():
    assert spectral_norm_sq(np.zeros((3, 4))) == 0.0
    np.testing.assert_allclose(spectral_norm_sq(np.diag([3.0, 1.0])), 9.0, rtol=1e-8)
    u = np.array([2.0, 0.0, 0.0])
    v = np.array([0.0, 3.0])
    np.testing.assert_allclose(spectral_norm_sq(np.outer(u, v)), 36.0, rtol=1e-8)


def test_spectral_norm_orthogonal_start():
    # all-ones start is orthogonal to the top singular vector here
    np.testing.assert_allclose(spectral_norm_sq(np.array([[1.0, -1.0]])), 2.0, rtol=1e-12)


def test_spectral_norm_random_and_scaling(rng):
    for _ in range(50):
        X = rng.standard_normal((6, 4))
        s1 = np.linalg.svd(X, compute_uv=False)[0]
        np.testing.assert_allclose(spectral_norm_sq(X), s1 ** 2, rtol=1e-8)
        for c in (2.0, 10.0):
            np.testing.assert_allclose(spectral_norm_sq(c * X), c * c * spectral_norm_sq(X), rtol=1e-8)


def test_spectral_norm_clustered_values(rng):
    Q1, _ = np.linalg.qr(rng.standard_normal((30, 5)))
    Q2, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    X = (Q1 * [1.0, 0.999999, 0.5, 0.2, 0.1]) @ Q2.T
    np.testing.assert_allclose(spectral_norm_sq(X), 1.0, rtol=1e-8)


def test_sparse_pattern_csr_type():
    pat = SamplingPattern.full(2, 3)
    assert sp.issparse(pat.to_csr(np.arange(6.0)))
    assert len(pat) == 6
