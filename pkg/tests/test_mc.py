import numpy as np
import pytest

from naum.engine import SolveOptions, update_x, update_y
from naum.errors import InvalidData, InvalidDimensions, InvalidParameter, UnsupportedScheme
from naum.linalg import SamplingPattern, shrink_singular
from naum.mc import (McKernel, McProblem, mc_update_x, mc_update_y, palm_step, run_palm,
                     sample_count, sample_mask, solve_mc)
from naum.model import Scheme, derive_params, z_formula


def scalar_mc(M=6.0, eta=5.0):
    return McProblem.from_matrix([[M]], SamplingPattern.full(1, 1), 1, eta)


def empty_mc(m, n, r, eta):
    return McProblem(SamplingPattern(m, n, [], []), [], r, eta)


def planted(rng, m, n, r, sr, seed=3):
    M = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    pat = sample_mask(m, n, sr, seed)
    return M, pat


# ---- updates --------------------------------------------------------------------

def test_update_x_scalar_example():
    U, nuc = mc_update_x(scalar_mc(), derive_params(0.4), np.array([[1.0]]), np.array([[2.0]]), 1.0)
    np.testing.assert_allclose(U, [[6.5]])
    assert nuc == pytest.approx(6.5)


def test_update_y_scalar_example():
    X, Y, U = np.array([[1.0]]), np.array([[2.0]]), np.array([[6.5]])
    V, _ = mc_update_y(scalar_mc(), derive_params(0.4), X, U, Y, 100.0)
    # 2 - (0.4/100) 2 (5.5)(6.5) + 4 (6.5)/100, then shrink by 5/200
    np.testing.assert_allclose(V, [[2 - 0.286 + 0.26 - 0.025]], rtol=1e-14)


def test_empty_pattern_is_pure_shrinkage(rng):
    prob = empty_mc(6, 5, 3, 2.0)
    X, Y = rng.standard_normal((6, 3)), rng.standard_normal((5, 3))
    U, _ = mc_update_x(prob, derive_params(0.4), X, Y, 4.0)
    np.testing.assert_allclose(U, shrink_singular(X, 0.25), atol=1e-13)
    V, _ = mc_update_y(prob, derive_params(0.4), X, X, Y, 2.0)
    np.testing.assert_allclose(V, shrink_singular(Y, 0.5), atol=1e-13)


def test_zero_residual_is_pure_shrinkage(rng):
    X, Y = rng.standard_normal((6, 2)), rng.standard_normal((5, 2))
    prob = McProblem.from_matrix(X @ Y.T, sample_mask(6, 5, 0.5, 1), 2, 1.0)
    U, _ = mc_update_x(prob, derive_params(0.6), X, Y, 2.0)
    np.testing.assert_allclose(U, shrink_singular(X, 0.25), atol=1e-13)


def test_update_y_without_x_change(rng):
    M, pat = planted(rng, 7, 6, 2, 0.6)
    prob = McProblem.from_matrix(M, pat, 2, 0.5)
    X, Y = rng.standard_normal((7, 2)), rng.standard_normal((6, 2))
    R = pat.to_csr(pat.gather(X @ Y.T - M)).toarray()
    V, _ = mc_update_y(prob, derive_params(0.4), X, X, Y, 3.0)
    np.testing.assert_allclose(V, shrink_singular(Y - R.T @ X / 3.0, 0.5 / 6.0), atol=1e-12)


def test_updates_match_dense_reference(rng):
    for _ in range(50):
        m, n = int(rng.integers(2, 21)), int(rng.integers(2, 16))
        r = int(rng.integers(1, min(m, n, 5) + 1))
        p = derive_params(float(rng.choice([0.4, 0.6, 0.8, 1.1, 2.0])))
        prob = McProblem.from_matrix(rng.standard_normal((m, n)),
                                     sample_mask(m, n, rng.uniform(0.2, 1), int(rng.integers(999))),
                                     r, float(rng.uniform(0.1, 2)))
        spec = prob.to_spec()
        X, Y = rng.standard_normal((m, r)), rng.standard_normal((n, r))
        mu, sigma = rng.uniform(0.5, 5, size=2)
        Z = z_formula(spec, p, X, Y)
        U_ref = update_x(Scheme.PROX_LINEAR, spec, p, X, Y, Z, mu)
        V_ref = update_y(Scheme.PROX_LINEAR, spec, p, U_ref, Y, Z, sigma)
        k = McKernel(prob, p)
        k.prepare(X, Y)
        U = k.update_x(mu)
        np.testing.assert_allclose(U, U_ref, atol=1e-10, rtol=0)
        np.testing.assert_allclose(k.update_y(U, sigma), V_ref, atol=1e-10, rtol=0)


def test_proximal_scheme_matches_dense_reference(rng):
    M, pat = planted(rng, 8, 6, 2, 0.7)
    prob = McProblem.from_matrix(M, pat, 2, 0.3)
    p = derive_params(0.6, scheme_x="prox", scheme_y="prox")
    spec = prob.to_spec()
    X, Y = rng.standard_normal((8, 2)), rng.standard_normal((6, 2))
    Z = z_formula(spec, p, X, Y)
    k = McKernel(prob, p)
    k.prepare(X, Y)
    U = k.update_x(2.0)
    np.testing.assert_allclose(U, update_x("prox", spec, p, X, Y, Z, 2.0), atol=1e-9)
    np.testing.assert_allclose(k.update_y(U, 3.0), update_y("prox", spec, p, U, Y, Z, 3.0), atol=1e-9)


def test_prox_linear_optimality(rng):
    # U = S_t(W) iff W - U lies in t * subdifferential of the nuclear norm at U
    M, pat = planted(rng, 9, 7, 3, 0.5)
    prob = McProblem.from_matrix(M, pat, 3, 4.0)
    X, Y = rng.standard_normal((9, 3)), rng.standard_normal((7, 3))
    mu = 3.0
    U, _ = mc_update_x(prob, derive_params(0.4), X, Y, mu)
    W = X - prob.residual(X, Y) @ Y / mu
    t = prob.eta / (2 * mu)
    Pu, s, Qt = np.linalg.svd(U, full_matrices=False)
    keep = s > 1e-12
    G = (W - U) / t
    P, Q = Pu[:, keep], Qt[keep].T
    np.testing.assert_allclose(P.T @ G @ Q, np.eye(keep.sum()), atol=1e-8)
    rest = G - P @ Q.T
    assert np.linalg.norm(rest, 2) <= 1 + 1e-8


def test_kernel_rejects_hierarchical():
    with pytest.raises(UnsupportedScheme):
        McKernel(scalar_mc(), derive_params(0.4, scheme_x="hier"))
    with pytest.raises(UnsupportedScheme):
        McKernel(scalar_mc(), derive_params(-0.5, scheme_y="prox"))


def test_problem_validation():
    pat = SamplingPattern(2, 2, [0], [1])
    with pytest.raises(InvalidDimensions):
        McProblem(pat, [1.0, 2.0], 1, 1.0)
    with pytest.raises(InvalidData):
        McProblem(pat, [np.nan], 1, 1.0)
    with pytest.raises(InvalidParameter):
        McProblem(pat, [1.0], 1, 0.0)
    with pytest.raises(InvalidDimensions):
        McProblem(pat, [1.0], 3, 1.0)


def test_objective_scalar():
    prob = scalar_mc(6.0, 5.0)
    assert prob.objective(np.array([[3.0]]), np.array([[2.0]])) == pytest.approx(12.5)


# ---- PALM -----------------------------------------------------------------------

def test_palm_scalar_example():
    Xn, _, _ = palm_step(np.array([[1.0]]), np.array([[2.0]]), scalar_mc())
    np.testing.assert_allclose(Xn, [[2.375]], rtol=1e-12)


def test_palm_fixed_point(rng):
    X, Y = rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
    prob = McProblem.from_matrix(X @ Y.T, sample_mask(5, 4, 0.8, 2), 2, 1.0)
    Xn, Yn, F = palm_step(X, Y, prob, eta=0.0)
    np.testing.assert_allclose(Xn, X, atol=1e-14)
    np.testing.assert_allclose(Yn, Y, atol=1e-14)
    assert F == pytest.approx(0.0, abs=1e-25)


def test_palm_monotone(rng):
    M, pat = planted(rng, 30, 25, 3, 0.5)
    prob = McProblem.from_matrix(M, pat, 3, 0.5)
    X, Y = rng.standard_normal((30, 3)), rng.standard_normal((25, 3))
    _, _, tr = run_palm(prob, X, Y, SolveOptions(max_iters=200, tol_obj=None, tol_change=None))
    F = tr.objectives
    assert tr.iterations == 200
    assert np.all(np.diff(F) <= 1e-12 * F[0])


def test_full_observation_recovery(rng):
    M, _ = planted(rng, 25, 20, 3, 1.0)
    prob = McProblem.from_matrix(M, SamplingPattern.full(25, 20), 3, 1e-4)
    X0, Y0 = rng.standard_normal((25, 3)), rng.standard_normal((20, 3))
    opts = SolveOptions(max_iters=3000)
    for solver in (lambda: solve_mc(prob, derive_params(0.4), X0, Y0, opts),
                   lambda: run_palm(prob, X0, Y0, opts)):
        X, Y, _ = solver()
        assert np.linalg.norm(X @ Y.T - M) / np.linalg.norm(M) < 1e-2


def test_solve_mc_descent(rng):
    M, pat = planted(rng, 30, 20, 3, 0.5)
    prob = McProblem.from_matrix(M, pat, 3, 1e-2)
    for alpha in (0.4, 0.6, 2.0):
        X0, Y0 = rng.standard_normal((30, 3)), rng.standard_normal((20, 3))
        X, Y, tr = solve_mc(prob, derive_params(alpha), X0, Y0,
                            SolveOptions(max_iters=150, tol_obj=None, tol_change=None))
        assert tr.descent_violations == tr.cap_violations == tr.forced_accepts == 0
        np.testing.assert_allclose(tr.final_objective, prob.objective(X, Y), rtol=1e-10)


# ---- sampling -------------------------------------------------------------------

def test_sample_counts():
    assert len(sample_mask(2, 2, 0.5, 0)) == 2
    assert len(sample_mask(3, 4, 1.0, 0)) == 12
    assert sample_count(5, 5, 0.5) == 13  # 12.5 rounds up
    with pytest.raises(InvalidParameter):
        sample_mask(2, 2, 0.0, 0)
    with pytest.raises(InvalidParameter):
        sample_mask(2, 2, 1.5, 0)


def test_sample_mask_distinct_and_deterministic():
    a, b = sample_mask(10, 7, 0.3, 42), sample_mask(10, 7, 0.3, 42)
    np.testing.assert_array_equal(a.i, b.i)
    np.testing.assert_array_equal(a.j, b.j)
    flat = a.i * 7 + a.j
    assert len(np.unique(flat)) == len(flat) and np.all(np.diff(flat) > 0)
    c = sample_mask(10, 7, 0.3, 43)
    assert not np.array_equal(c.i * 7 + c.j, flat)


def test_sample_mask_frequencies():
    counts = np.zeros(16)
    for seed in range(10000):
        pat = sample_mask(4, 4, 0.25, seed)
        counts[pat.i * 4 + pat.j] += 1
    np.testing.assert_allclose(counts / 10000, 0.25, atol=0.02)
