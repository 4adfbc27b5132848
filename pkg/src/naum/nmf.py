"""Box-constrained nonnegative matrix factorization.

Solves ``min 0.5 ||X Y^T - M||_F^2`` subject to ``0 <= X <= x_max`` and
``0 <= Y <= y_max``. With the identity map, Z is the convex combination
``a X Y^T + b M`` with ``a = 1 - 1/alpha`` and ``b = 1/alpha``, so the
products ``Z Y`` and ``Z^T U`` reduce to Gram blocks and ``M Y``/``M^T U``.
Objective values and successive changes come from trace identities on the
same blocks. ``M`` may be a scipy sparse matrix.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .engine import Kernel, SolveOptions, StopMonitor, Trace, TraceRecord, run, scheme_step
from .errors import CacheDrift, InvalidData, InvalidDimensions, InvalidParameter
from .linalg import as_dense, check_shape
from .model import Box, ProblemSpec, Scheme, SolverParams

logger = logging.getLogger(__name__)

DEFAULT_BOUND = 1e16
HALS_EPS = 1e-16
REFRESH_EVERY = 100
REFRESH_REJECTIONS = 5
DRIFT_RTOL = 1e-8
DRIFT_ATOL = 1e-12  # times ||M||_F^2; floor for near-exact fits
DIRECT_BELOW = 1e-4  # times ||M||_F^2; below this the trace identities cancel badly
ROW_BLOCK = 1024


def _fro_sq(M):
    if sp.issparse(M):
        return float(M.multiply(M).sum())
    return float(np.vdot(M, M))


def direct_fit(M, U, V):
    """``0.5 ||U V^T - M||_F^2`` summed over row blocks, so a sparse ``M`` is
    never densified in one piece."""
    total = 0.0
    for lo in range(0, M.shape[0], ROW_BLOCK):
        R = U[lo:lo + ROW_BLOCK] @ V.T - M[lo:lo + ROW_BLOCK]
        R = np.asarray(R)
        total += float(np.vdot(R, R))
    return 0.5 * total


@dataclass(eq=False)
class NmfProblem:
    M: np.ndarray | sp.spmatrix
    r: int
    x_max: float | np.ndarray = DEFAULT_BOUND
    y_max: float | np.ndarray = DEFAULT_BOUND
    norm_M_sq: float = field(init=False)

    def __post_init__(self):
        if sp.issparse(self.M):
            M = sp.csr_matrix(self.M, dtype=np.float64)
            M.sum_duplicates()
            if not np.all(np.isfinite(M.data)):
                raise InvalidData("M has non-finite entries")
            if M.data.size and M.data.min() < 0:
                raise InvalidData("M must be nonnegative")
        else:
            M = as_dense(self.M, "M")
            if M.size and M.min() < 0:
                raise InvalidData("M must be nonnegative")
        self.M = M
        m, n = M.shape
        if not 1 <= self.r <= min(m, n):
            raise InvalidDimensions(f"rank {self.r} must lie in [1, min(m, n)]")
        for name, shape in (("x_max", (m, self.r)), ("y_max", (n, self.r))):
            b = np.asarray(getattr(self, name), dtype=np.float64)
            if b.ndim == 2:
                check_shape(b, shape, name)
            elif b.ndim != 0:
                raise InvalidDimensions(f"{name} must be a scalar or a matrix")
            if not np.all(b > 0):
                raise InvalidParameter(f"{name} must be positive")
            setattr(self, name, b if b.ndim else float(b))
        self.norm_M_sq = _fro_sq(M)
        self.box_x = Box(0.0, self.x_max)
        self.box_y = Box(0.0, self.y_max)

    @property
    def shape(self):
        return self.M.shape

    @property
    def m(self):
        return self.M.shape[0]

    @property
    def n(self):
        return self.M.shape[1]

    def dense_M(self):
        return self.M.toarray() if sp.issparse(self.M) else self.M

    def to_spec(self) -> ProblemSpec:
        """Equivalent generic problem (identity map, box regularizers)."""
        return ProblemSpec.from_matrix(self.dense_M(), self.r, self.box_x, self.box_y)

    def check_factors(self, X, Y):
        check_shape(X, (self.m, self.r), "X")
        check_shape(Y, (self.n, self.r), "Y")

    def feasible(self, X, Y):
        return self.box_x.contains(X) and self.box_y.contains(Y)

    def objective(self, X, Y) -> float:
        """``0.5 ||X Y^T - M||_F^2`` computed densely; ``inf`` if infeasible."""
        self.check_factors(X, Y)
        if not self.feasible(X, Y):
            return math.inf
        return direct_fit(self.M, X, Y)

    def relerr(self, X, Y) -> float:
        if self.norm_M_sq == 0:
            raise InvalidData("||M||_F = 0")
        return math.sqrt(2.0 * self.objective(X, Y) / self.norm_M_sq) if self.feasible(X, Y) \
            else math.inf


class NmfCache:
    """Gram blocks at the current point ``(X, Y)`` and at trial points.

    ``XtX``, ``YtY`` (r x r), ``MY`` (m x r) at the current point; for a
    trial ``U``: ``UtU``, ``XtU`` and ``MtU`` (n x r).
    """

    def __init__(self, prob: NmfProblem):
        self.prob = prob
        self.norm_M_sq = prob.norm_M_sq
        self.X = self.Y = None
        self.XtX = self.YtY = None
        self.U = None

    def set_point(self, X, Y, XtX=None, YtY=None):
        M = self.prob.M
        self.X, self.Y = X, Y
        self.XtX = X.T @ X if XtX is None else XtX
        self.YtY = Y.T @ Y if YtY is None else YtY
        self.MY = np.asarray(M @ Y)
        self.U = None

    def set_trial_x(self, U):
        if self.U is U:
            return
        self.U = U
        self.UtU = U.T @ U
        self.XtU = self.X.T @ U
        self.MtU = np.asarray(self.prob.M.T @ U)

    def objective_at(self, X, Y, XtX=None, YtY=None, MY=None):
        """Trace-identity objective for an arbitrary point (used at start)."""
        XtX = X.T @ X if XtX is None else XtX
        YtY = Y.T @ Y if YtY is None else YtY
        MY = np.asarray(self.prob.M @ Y) if MY is None else MY
        val = 0.5 * max(float(np.sum(XtX * YtY) - 2.0 * np.sum(MY * X) + self.norm_M_sq), 0.0)
        if val <= DIRECT_BELOW * self.norm_M_sq:
            return direct_fit(self.prob.M, X, Y)
        return val


def _z_coefs(params: SolverParams):
    b = 1.0 / params.alpha  # beta / (alpha + beta)
    return 1.0 - b, b


def nmf_zy(cache: NmfCache, params: SolverParams):
    """``Z Y`` for the current point without forming Z."""
    a, b = _z_coefs(params)
    return a * (cache.X @ cache.YtY) + b * cache.MY


def nmf_ztu(cache: NmfCache, params: SolverParams, U):
    """``Z^T U`` for the current point and a trial ``U``."""
    cache.set_trial_x(U)
    a, b = _z_coefs(params)
    return a * (cache.Y @ cache.XtU) + b * cache.MtU


def nmf_column_x(i, cache: NmfCache, U, mu, params: SolverParams):
    """Column ``i`` of the hierarchical X update. ``U`` holds the already
    updated columns ``0..i-1``; the result is not written into ``U``."""
    a, b = _z_coefs(params)
    X, G = cache.X, cache.YtY
    py = a * (X @ G[:, i]) + b * cache.MY[:, i] - U[:, :i] @ G[:i, i] - X[:, i + 1:] @ G[i + 1:, i]
    d = params.alpha * G[i, i] + mu
    lo, hi = cache.prob.box_x.column_bounds(i)
    return np.clip((params.alpha * py + mu * X[:, i]) / d, lo, hi)


def nmf_column_y(i, cache: NmfCache, U, V, sigma, params: SolverParams):
    """Column ``i`` of the hierarchical Y update at trial ``U``; ``V`` holds
    the already updated columns ``0..i-1``."""
    cache.set_trial_x(U)
    a, b = _z_coefs(params)
    Y, G = cache.Y, cache.UtU
    qu = a * (Y @ cache.XtU[:, i]) + b * cache.MtU[:, i] - V[:, :i] @ G[:i, i] - Y[:, i + 1:] @ G[i + 1:, i]
    d = params.alpha * G[i, i] + sigma
    lo, hi = cache.prob.box_y.column_bounds(i)
    return np.clip((params.alpha * qu + sigma * Y[:, i]) / d, lo, hi)


def nmf_cached_metrics(cache: NmfCache, U, V):
    """``(objective, ||U - X||^2, ||V - Y||^2)`` from trace identities, with
    ``X, Y`` the cache's current point."""
    cache.set_trial_x(U)
    VtV = V.T @ V
    YtV = cache.Y.T @ V
    fit = np.sum(cache.UtU * VtV) - 2.0 * np.sum(cache.MtU * V) + cache.norm_M_sq
    dx2 = np.trace(cache.UtU) - 2.0 * np.trace(cache.XtU) + np.trace(cache.XtX)
    dy2 = np.trace(VtV) - 2.0 * np.trace(YtV) + np.trace(cache.YtY)
    cache.VtV = VtV
    return 0.5 * max(float(fit), 0.0), max(float(dx2), 0.0), max(float(dy2), 0.0)


class NmfKernel(Kernel):
    def __init__(self, prob: NmfProblem, params: SolverParams,
                 refresh_every=REFRESH_EVERY, refresh_rejections=REFRESH_REJECTIONS):
        for s in (params.scheme_x, params.scheme_y):
            if s is not Scheme.PROX_LINEAR and params.alpha <= 0:
                raise InvalidParameter(f"{s.name.lower()} update needs alpha > 0")
        self.prob = prob
        self.params = params
        self.cache = NmfCache(prob)
        self.refresh_every = refresh_every
        self.refresh_rejections = refresh_rejections
        self.accepted_count = 0
        self.refreshes = 0
        self._carry = None

    def check_factors(self, X, Y):
        self.prob.check_factors(X, Y)

    def objective(self, X, Y):
        if not self.prob.feasible(X, Y):
            return math.inf
        return self.cache.objective_at(X, Y)

    def prepare(self, X, Y):
        super().prepare(X, Y)
        if self._carry is not None and self._carry[0] is X and self._carry[1] is Y:
            self.cache.set_point(X, Y, self._carry[2], self._carry[3])
        else:
            self.cache.set_point(X, Y)
        self._carry = None

    def norm_sq(self, A):
        if A is self.cache.Y:
            return float(np.trace(self.cache.YtY))
        if A is self.cache.U:
            return float(np.trace(self.cache.UtU))
        return float(np.vdot(A, A))

    def update_x(self, mu):
        p = self.params
        c = self.cache
        if p.scheme_x is Scheme.HIERARCHICAL:
            U = np.empty_like(c.X)
            for i in range(self.prob.r):
                U[:, i] = nmf_column_x(i, c, U, mu, p)
        else:
            U = scheme_step(p.scheme_x, self.prob.box_x, p.alpha, c.X, nmf_zy(c, p), c.YtY, mu)
        c.set_trial_x(U)
        return U

    def update_y(self, U, sigma):
        p = self.params
        c = self.cache
        c.set_trial_x(U)
        if p.scheme_y is Scheme.HIERARCHICAL:
            V = np.empty_like(c.Y)
            for i in range(self.prob.r):
                V[:, i] = nmf_column_y(i, c, U, V, sigma, p)
            return V
        return scheme_step(p.scheme_y, self.prob.box_y, p.alpha, c.Y, nmf_ztu(c, p, U), c.UtU, sigma)

    def evaluate(self, U, V):
        F, dx2, dy2 = nmf_cached_metrics(self.cache, U, V)
        if F <= DIRECT_BELOW * self.prob.norm_M_sq:
            # near an exact fit the cached value is mostly rounding error
            dX = U - self.cache.X
            dY = V - self.cache.Y
            F = direct_fit(self.prob.M, U, V)
            dx2, dy2 = float(np.vdot(dX, dX)), float(np.vdot(dY, dY))
        return F, dx2, dy2

    def accepted(self, U, V, objective, rejections):
        self.accepted_count += 1
        self.cache.set_trial_x(U)
        self._carry = (U, V, self.cache.UtU, self.cache.VtV)
        if self.accepted_count % self.refresh_every == 0 or rejections >= self.refresh_rejections:
            self.refresh(U, V, objective)

    def refresh(self, U, V, objective):
        """Recompute the carried Gram blocks from scratch and compare the
        cached objective with a dense evaluation."""
        self.refreshes += 1
        self._carry = None
        dense = self.prob.objective(U, V)
        if abs(dense - objective) > DRIFT_RTOL * dense + DRIFT_ATOL * self.prob.norm_M_sq:
            warnings.warn(f"cached objective {objective!r} drifted from {dense!r}", CacheDrift,
                          stacklevel=2)


def solve_nmf(prob: NmfProblem, params: SolverParams, X0, Y0, options: SolveOptions | None = None):
    return run(NmfKernel(prob, params), X0, Y0, options)


# ---------------------------------------------------------------------------
# HALS baseline


def _hals_sweep(X, G, MY, lower, upper_for):
    X = X.copy()
    for i in range(X.shape[1]):
        num = MY[:, i] - X[:, :i] @ G[:i, i] - X[:, i + 1:] @ G[i + 1:, i]
        X[:, i] = np.minimum(np.maximum(num / max(G[i, i], HALS_EPS), lower), upper_for(i))
    return X


def hals_step(X, Y, M, x_max=np.inf, y_max=np.inf):
    """One HALS sweep over the columns of X, then of Y.

    Updating columns in place is equivalent to using the new columns for
    ``j < i`` and the old ones for ``j > i``. Bounds default to none beyond
    nonnegativity.
    """
    X = as_dense(X, "X")
    Y = as_dense(Y, "Y")
    if X.shape[1] != Y.shape[1] or (X.shape[0], Y.shape[0]) != M.shape:
        raise InvalidDimensions("factor shapes do not match M")

    def col(bound):
        return (lambda i: bound[:, i]) if np.ndim(bound) == 2 else (lambda i: bound)

    Xn = _hals_sweep(X, Y.T @ Y, np.asarray(M @ Y), 0.0, col(x_max))
    Yn = _hals_sweep(Y, Xn.T @ Xn, np.asarray(M.T @ Xn), 0.0, col(y_max))
    return Xn, Yn


def run_hals(prob: NmfProblem, X0, Y0, options: SolveOptions | None = None):
    """HALS iterations with the same stopping rules and trace format as the
    main solver; ``mu``/``sigma`` are recorded as NaN."""
    options = options or SolveOptions()
    X = as_dense(X0, "X0").copy()
    Y = as_dense(Y0, "Y0").copy()
    prob.check_factors(X, Y)
    cache = NmfCache(prob)
    F = cache.objective_at(X, Y)
    trace = Trace(F)
    monitor = StopMonitor(options)
    k = 0
    nan = float("nan")
    while True:
        reason = monitor.before(k)
        if reason:
            break
        Xn, Yn = hals_step(X, Y, prob.M, prob.x_max, prob.y_max)
        Fn = cache.objective_at(Xn, Yn)
        dx, dy = np.linalg.norm(Xn - X), np.linalg.norm(Yn - Y)
        k += 1
        trace.records.append(TraceRecord(k, Fn, monitor.elapsed(), nan, nan, 1, dx, dy))
        F_prev, X, Y, F = F, Xn, Yn, Fn
        reason = monitor.after(F_prev, F, dx, dy, X, Y)
        if reason:
            break
    trace.reason = reason
    return X, Y, trace


__all__ = [
    "NmfProblem", "NmfCache", "NmfKernel", "nmf_column_x", "nmf_column_y",
    "nmf_cached_metrics", "nmf_zy", "nmf_ztu", "solve_nmf", "hals_step", "run_hals",
    "DEFAULT_BOUND", "direct_fit",
]
