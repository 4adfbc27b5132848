"""Self-checks run by ``naum verify``.

Each suite runs a batch of randomized checks and reports how many passed.
The checks compare the library against independent computations (numpy's
SVD, dense reference formulas, brute-force grids) or against runtime
invariants of the solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SolveOptions, run, update_x, update_y
from .linalg import IdentityMap, SamplingMap, shrink_singular
from .mc import McKernel, McProblem, mc_update_x, mc_update_y, sample_mask
from .model import (Box, ProblemSpec, ScaledL1, ScaledNuclear, Scheme, derive_params,
                    objective, potential, z_formula)
from .nmf import NmfCache, NmfKernel, NmfProblem, nmf_column_x, nmf_column_y

ALPHAS = (0.4, 0.6, 0.8, 1.1, 2.0)


@dataclass
class SuiteResult:
    name: str
    passed: int
    failed: int

    @property
    def ok(self):
        return self.failed == 0


def _random_spec(rng, sampled):
    m, n = rng.integers(2, 21, size=2)
    r = int(rng.integers(1, min(m, n, 5) + 1))
    M = rng.standard_normal((m, n))
    if sampled:
        pat = sample_mask(m, n, float(rng.uniform(0.2, 1.0)), int(rng.integers(1 << 31)))
        lin = SamplingMap(pat)
        b = pat.gather(M)
    else:
        lin = IdentityMap(m, n)
        b = lin.apply(M)
    reg = ScaledNuclear(float(rng.uniform(0.1, 2.0)))
    return ProblemSpec(reg, ScaledL1(float(rng.uniform(0.1, 1.0))), lin, b, r)


def potential_identity(rng, count=100):
    ok = bad = 0
    for t in range(count):
        prob = _random_spec(rng, sampled=bool(t % 2))
        params = derive_params(ALPHAS[t % len(ALPHAS)])
        X = rng.standard_normal((prob.m, prob.r))
        Y = rng.standard_normal((prob.n, prob.r))
        F = objective(prob, X, Y)
        theta = potential(prob, params, X, Y, z_formula(prob, params, X, Y))
        if abs(F - theta) <= 1e-10 * (1 + abs(F)):
            ok += 1
        else:
            bad += 1
    return SuiteResult("potential identity", ok, bad)


def grid_argmin(f, lo=-10.0, hi=10.0):
    """Brute-force minimizer of a scalar function: a 1e-3 grid over
    ``[lo, hi]``, refined with a 1e-6 grid around the coarse minimum."""
    coarse = np.linspace(lo, hi, int(round((hi - lo) / 1e-3)) + 1)
    c = coarse[np.argmin(f(coarse))]
    fine = np.linspace(max(lo, c - 2e-3), min(hi, c + 2e-3), 4001)
    return float(fine[np.argmin(f(fine))])


def prox_oracles(rng, count=100):
    ok = bad = 0
    for _ in range(count // 2):
        v = float(rng.uniform(-8, 8))
        t = float(rng.uniform(0.1, 2))
        lo, hi = sorted(rng.uniform(-5, 5, size=2))
        box = Box(lo, hi)
        l1 = ScaledL1(float(rng.uniform(0.1, 3)))
        cases = ((box, lambda w: np.where((w >= lo) & (w <= hi), 0.0, np.inf)),
                 (l1, lambda w: l1.weight * np.abs(w)))
        for reg, g in cases:
            best = grid_argmin(lambda w: g(w) + (w - v) ** 2 / (2 * t))
            got = float(reg.prox(t, np.array([[v]]))[0, 0])
            if abs(got - best) <= 1e-6:
                ok += 1
            else:
                bad += 1
    for _ in range(count):
        A = rng.standard_normal((6, 4))
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        for nu in (0.0, 0.5, s[0] + 1):
            ref = (U * np.maximum(s - nu, 0)) @ Vt
            if np.max(np.abs(shrink_singular(A, nu) - ref)) <= 1e-10:
                ok += 1
            else:
                bad += 1
    return SuiteResult("prox oracles", ok, bad)


def descent_assertions(rng, iters=200):
    ok = bad = 0
    Ms = np.abs(rng.standard_normal((20, 3))) @ np.abs(rng.standard_normal((15, 3))).T
    nmf = NmfProblem(Ms, 3)
    Mc = rng.standard_normal((20, 3)) @ rng.standard_normal((15, 3)).T
    pat = sample_mask(20, 15, 0.6, int(rng.integers(1 << 31)))
    mc = McProblem.from_matrix(Mc, pat, 3, 1e-3 * np.linalg.norm(pat.gather(Mc)))
    opts = SolveOptions(max_iters=iters, tol_obj=None, tol_change=None)
    for a in (0.4, 0.6, 2.0):
        X0 = np.abs(rng.standard_normal((20, 3)))
        Y0 = np.abs(rng.standard_normal((15, 3)))
        runs = (run(NmfKernel(nmf, derive_params(a, scheme_x="hier", scheme_y="hier")), X0, Y0, opts),
                run(McKernel(mc, derive_params(a)), X0, Y0, opts))
        for _, _, tr in runs:
            clean = (tr.descent_violations == 0 and tr.cap_violations == 0
                     and tr.forced_accepts == 0 and tr.window_increases == 0)
            ok += clean
            bad += not clean
    return SuiteResult("descent assertions", ok, bad)


def implicit_vs_dense(rng, steps=50):
    ok = bad = 0
    for _ in range(steps):
        m, n = int(rng.integers(2, 21)), int(rng.integers(2, 16))
        r = int(rng.integers(1, min(m, n, 5) + 1))
        params = derive_params(float(rng.choice(ALPHAS)), scheme_x="hier", scheme_y="hier")
        M = np.abs(rng.standard_normal((m, n)))
        nprob = NmfProblem(M, r)
        spec = nprob.to_spec()
        X = np.abs(rng.standard_normal((m, r)))
        Y = np.abs(rng.standard_normal((n, r)))
        mu, sigma = rng.uniform(0.5, 5, size=2)
        Z = z_formula(spec, params, X, Y)
        U_ref = update_x(Scheme.HIERARCHICAL, spec, params, X, Y, Z, mu)
        V_ref = update_y(Scheme.HIERARCHICAL, spec, params, U_ref, Y, Z, sigma)
        cache = NmfCache(nprob)
        cache.set_point(X, Y)
        U = np.empty_like(X)
        for i in range(r):
            U[:, i] = nmf_column_x(i, cache, U, mu, params)
        V = np.empty_like(Y)
        for i in range(r):
            V[:, i] = nmf_column_y(i, cache, U, V, sigma, params)
        good = np.max(np.abs(U - U_ref)) <= 1e-10 and np.max(np.abs(V - V_ref)) <= 1e-10

        mparams = derive_params(float(rng.choice(ALPHAS)))
        pat = sample_mask(m, n, float(rng.uniform(0.2, 1.0)), int(rng.integers(1 << 31)))
        mprob = McProblem.from_matrix(rng.standard_normal((m, n)), pat, r, float(rng.uniform(0.1, 2)))
        mspec = mprob.to_spec()
        X = rng.standard_normal((m, r))
        Y = rng.standard_normal((n, r))
        Z = z_formula(mspec, mparams, X, Y)
        U_ref = update_x(Scheme.PROX_LINEAR, mspec, mparams, X, Y, Z, mu)
        V_ref = update_y(Scheme.PROX_LINEAR, mspec, mparams, U_ref, Y, Z, sigma)
        U, _ = mc_update_x(mprob, mparams, X, Y, mu)
        V, _ = mc_update_y(mprob, mparams, X, U, Y, sigma)
        good = good and np.max(np.abs(U - U_ref)) <= 1e-10 and np.max(np.abs(V - V_ref)) <= 1e-10
        ok += bool(good)
        bad += not good
    return SuiteResult("implicit vs dense", ok, bad)


SUITES = (potential_identity, prox_oracles, descent_assertions, implicit_vs_dense)


def run_all(seed=0):
    rng = np.random.default_rng(seed)
    return [suite(rng) for suite in SUITES]


__all__ = ["SuiteResult", "run_all", "SUITES", "potential_identity", "prox_oracles",
           "descent_assertions", "implicit_vs_dense", "grid_argmin"]
