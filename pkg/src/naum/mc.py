"""Matrix completion with nuclear-norm regularized factors.

Solves ``min eta/2 ||X||_* + eta/2 ||Y||_* + 0.5 ||P_Omega(X Y^T - M)||^2``.
Since ``beta/(alpha+beta) = 1/alpha``, the factor ``alpha`` cancels from the
data term of the prox-linear updates, and both updates only need the
residual on the sampled entries, kept as a CSR matrix in pattern order.
"""
from __future__ import annotations

import math

import numpy as np

from .engine import (Kernel, SolveOptions, StopMonitor, Trace, TraceRecord,
                     run, scheme_step)
from .errors import InvalidData, InvalidDimensions, InvalidParameter, UnsupportedScheme
from .linalg import (SamplingMap, SamplingPattern, as_dense, check_shape,
                     nuclear_norm, shrink_singular_with_values, spectral_norm_sq)
from .model import ProblemSpec, ScaledNuclear, Scheme, SolverParams
from .rng import STREAM_MASK, make_rng

PALM_EPS = 1e-16


class McProblem:
    """Observed values of ``M`` on a sampling pattern, target rank and
    regularization weight ``eta``."""

    def __init__(self, pattern: SamplingPattern, observed, r: int, eta: float):
        observed = np.asarray(observed, dtype=np.float64).reshape(-1)
        if observed.shape != (len(pattern),):
            raise InvalidDimensions(f"{observed.size} values for a pattern of size {len(pattern)}")
        if not np.all(np.isfinite(observed)):
            raise InvalidData("observed values must be finite")
        if not eta > 0:
            raise InvalidParameter("eta must be positive")
        if not 1 <= r <= min(pattern.rows, pattern.cols):
            raise InvalidDimensions(f"rank {r} must lie in [1, min(m, n)]")
        self.pattern = pattern
        self.observed = observed
        self.r = int(r)
        self.eta = float(eta)
        self.reg = ScaledNuclear(self.eta / 2.0)

    @classmethod
    def from_matrix(cls, M, pattern: SamplingPattern, r, eta):
        M = as_dense(M, "M")
        return cls(pattern, pattern.gather(M), r, eta)

    @property
    def m(self):
        return self.pattern.rows

    @property
    def n(self):
        return self.pattern.cols

    def check_factors(self, X, Y):
        check_shape(X, (self.m, self.r), "X")
        check_shape(Y, (self.n, self.r), "Y")

    def residual(self, X, Y):
        """``X Y^T - M`` on the pattern, as a CSR matrix."""
        return self.pattern.to_csr(self.pattern.gather_product(X, Y) - self.observed)

    def data_term(self, X, Y):
        res = self.pattern.gather_product(X, Y) - self.observed
        return 0.5 * float(res @ res)

    def objective(self, X, Y):
        self.check_factors(X, Y)
        return 0.5 * self.eta * (nuclear_norm(X) + nuclear_norm(Y)) + self.data_term(X, Y)

    def to_spec(self) -> ProblemSpec:
        return ProblemSpec(self.reg, self.reg, SamplingMap(self.pattern), self.observed, self.r)


def mc_update_x(prob: McProblem, params: SolverParams, X, Y, mu, R=None):
    """Prox-linear X update; returns ``(U, ||U||_*)``."""
    if not mu > 0:
        raise InvalidParameter("mu must be positive")
    R = prob.residual(X, Y) if R is None else R
    U, s = shrink_singular_with_values(X - (R @ Y) / mu, prob.eta / (2.0 * mu))
    return U, float(np.sum(s))


def mc_update_y(prob: McProblem, params: SolverParams, X, U, Y, sigma, R=None):
    """Prox-linear Y update, linearized at ``(U, Y)``; ``R`` is the residual at
    ``(X, Y)``. Returns ``(V, ||V||_*)``."""
    if not sigma > 0:
        raise InvalidParameter("sigma must be positive")
    R = prob.residual(X, Y) if R is None else R
    W = Y - (params.alpha / sigma) * (Y @ ((U - X).T @ U)) - (R.T @ U) / sigma
    V, s = shrink_singular_with_values(W, prob.eta / (2.0 * sigma))
    return V, float(np.sum(s))


class McKernel(Kernel):
    def __init__(self, prob: McProblem, params: SolverParams):
        for s in (params.scheme_x, params.scheme_y):
            if s is Scheme.HIERARCHICAL:
                raise UnsupportedScheme("the nuclear norm is not column separable")
            if s is Scheme.PROXIMAL and params.alpha <= 0:
                raise UnsupportedScheme("proximal update needs alpha > 0")
        self.prob = prob
        self.params = params
        self._nuc = {}

    def check_factors(self, X, Y):
        self.prob.check_factors(X, Y)

    def objective(self, X, Y):
        return self.prob.objective(X, Y)

    def prepare(self, X, Y):
        super().prepare(X, Y)
        self.R = self.prob.residual(X, Y)
        self._nuc = {}

    def update_x(self, mu):
        p = self.params
        if p.scheme_x is Scheme.PROX_LINEAR:
            U, nu = mc_update_x(self.prob, p, self.X, self.Y, mu, self.R)
            self._nuc[id(U)] = (U, nu)
            return U
        G = self.Y.T @ self.Y
        ZY = self.X @ G - (self.R @ self.Y) / p.alpha
        return scheme_step(p.scheme_x, self.prob.reg, p.alpha, self.X, ZY, G, mu)

    def update_y(self, U, sigma):
        p = self.params
        if p.scheme_y is Scheme.PROX_LINEAR:
            V, nv = mc_update_y(self.prob, p, self.X, U, self.Y, sigma, self.R)
            self._nuc[id(V)] = (V, nv)
            return V
        G = U.T @ U
        ZtU = self.Y @ (self.X.T @ U) - (self.R.T @ U) / p.alpha
        return scheme_step(p.scheme_y, self.prob.reg, p.alpha, self.Y, ZtU, G, sigma)

    def _nuclear(self, A):
        hit = self._nuc.get(id(A))
        return hit[1] if hit is not None and hit[0] is A else nuclear_norm(A)

    def evaluate(self, U, V):
        F = 0.5 * self.prob.eta * (self._nuclear(U) + self._nuclear(V)) + self.prob.data_term(U, V)
        dX = U - self.X
        dY = V - self.Y
        return F, float(np.vdot(dX, dX)), float(np.vdot(dY, dY))


def solve_mc(prob: McProblem, params: SolverParams, X0, Y0, options: SolveOptions | None = None):
    return run(McKernel(prob, params), X0, Y0, options)


# ---------------------------------------------------------------------------
# PALM baseline


def palm_step(X, Y, prob: McProblem, eta=None):
    """One PALM iteration with spectral-norm step sizes. ``eta`` overrides
    the problem's weight (``0`` gives plain alternating gradient steps)."""
    eta = prob.eta if eta is None else float(eta)
    Ly = max(spectral_norm_sq(Y), PALM_EPS)
    Xn, sx = shrink_singular_with_values(X - (prob.residual(X, Y) @ Y) / Ly, eta / (2.0 * Ly))
    Lx = max(spectral_norm_sq(Xn), PALM_EPS)
    Yn, sy = shrink_singular_with_values(Y - (prob.residual(Xn, Y).T @ Xn) / Lx, eta / (2.0 * Lx))
    return Xn, Yn, 0.5 * eta * float(np.sum(sx) + np.sum(sy)) + prob.data_term(Xn, Yn)


def run_palm(prob: McProblem, X0, Y0, options: SolveOptions | None = None):
    """PALM iterations with the shared stopping rules and trace format."""
    options = options or SolveOptions()
    X = as_dense(X0, "X0").copy()
    Y = as_dense(Y0, "Y0").copy()
    prob.check_factors(X, Y)
    F = prob.objective(X, Y)
    trace = Trace(F)
    monitor = StopMonitor(options)
    k = 0
    nan = float("nan")
    while True:
        reason = monitor.before(k)
        if reason:
            break
        Xn, Yn, Fn = palm_step(X, Y, prob)
        dx, dy = np.linalg.norm(Xn - X), np.linalg.norm(Yn - Y)
        k += 1
        trace.records.append(TraceRecord(k, Fn, monitor.elapsed(), nan, nan, 1, dx, dy))
        F_prev, X, Y, F = F, Xn, Yn, Fn
        reason = monitor.after(F_prev, F, dx, dy, X, Y)
        if reason:
            break
    trace.reason = reason
    return X, Y, trace


# ---------------------------------------------------------------------------
# Sampling


def sample_count(m, n, sr):
    """``round(m n sr)`` with halves rounded up."""
    return int(math.floor(m * n * sr + 0.5))


def sample_mask(m: int, n: int, sr: float, seed) -> SamplingPattern:
    """Uniformly random set of ``round(m n sr)`` distinct entries."""
    if not 0 < sr <= 1:
        raise InvalidParameter(f"sampling ratio must lie in (0, 1], got {sr}")
    if m < 1 or n < 1:
        raise InvalidDimensions("m and n must be positive")
    rng = make_rng(seed, STREAM_MASK)
    idx = np.sort(rng.choice(m * n, size=sample_count(m, n, sr), replace=False))
    return SamplingPattern(m, n, idx // n, idx % n)


__all__ = [
    "McProblem", "McKernel", "mc_update_x", "mc_update_y", "solve_mc",
    "palm_step", "run_palm", "sample_mask", "sample_count",
]
