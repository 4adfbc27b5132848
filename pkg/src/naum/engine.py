"""The alternating-update iteration with a non-monotone line search.

Each outer iteration forms Z from the current factors, then searches over
the step parameters ``(mu, sigma)`` for a pair of updates ``(U, V)`` that
decreases the objective relative to the worst of the last ``N + 1``
accepted values. Problem classes plug in through :class:`Kernel`, which owns
the Z step and the two factor updates; :class:`DenseKernel` is the generic
version that materializes Z.

Every scheme only needs ``Z @ Y`` and ``Y^T Y`` (resp. ``Z^T @ U`` and
``U^T U``), which is what lets the application kernels avoid ``m x n``
intermediates.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import InfeasibleInitialization, InvalidParameter, UnsupportedScheme
from .linalg import as_dense, check_shape
from .model import (ProblemSpec, ProxOracle, Scheme, SolverParams, Zero,
                    objective, z_formula)

logger = logging.getLogger(__name__)

DESCENT_SLACK = 1e-8
FISTA_TOL = 1e-13
FISTA_MAX_ITER = 20000
TRACE_HEADER = ("k", "objective", "seconds", "mu", "sigma", "inner_iters", "dx", "dy")


# ---------------------------------------------------------------------------
# Factor updates


def _prox_linear(reg, alpha, X, ZY, G, mu):
    return reg.prox(1.0 / mu, X - (alpha / mu) * (X @ G - ZY))


def _proximal(reg, alpha, X, ZY, G, mu):
    r = G.shape[0]
    rhs = alpha * ZY + mu * X
    H = alpha * G + mu * np.eye(r)
    if isinstance(reg, Zero):
        # U H = rhs with H symmetric positive definite
        return np.linalg.solve(H, rhs.T).T
    ev = np.linalg.eigvalsh(H)
    L, m_s = float(ev[-1]), float(ev[0])
    q = (math.sqrt(L) - math.sqrt(m_s)) / (math.sqrt(L) + math.sqrt(m_s))
    U = X.copy()
    W = U
    for _ in range(FISTA_MAX_ITER):
        U_new = reg.prox(1.0 / L, W - (W @ H - rhs) / L)
        step = np.linalg.norm(U_new - U)
        W = U_new + q * (U_new - U)
        U = U_new
        if step <= FISTA_TOL * (1.0 + np.linalg.norm(U)):
            break
    else:
        logger.warning("proximal subproblem solver hit its iteration limit")
    return U


def hierarchical_column(reg, i, alpha, X, U, ZY, G, mu):
    """Column ``i`` of the hierarchical update, given columns ``0..i-1`` of
    ``U`` already updated and columns ``i+1..`` of ``X`` still current."""
    p = ZY[:, i] - U[:, :i] @ G[:i, i] - X[:, i + 1:] @ G[i + 1:, i]
    d = alpha * G[i, i] + mu
    return reg.column_prox(i, 1.0 / d, (alpha * p + mu * X[:, i]) / d)


def _hierarchical(reg, alpha, X, ZY, G, mu):
    U = np.empty_like(X)
    for i in range(X.shape[1]):
        U[:, i] = hierarchical_column(reg, i, alpha, X, U, ZY, G, mu)
    return U


_STEPS = {
    Scheme.PROX_LINEAR: _prox_linear,
    Scheme.PROXIMAL: _proximal,
    Scheme.HIERARCHICAL: _hierarchical,
}


def scheme_step(scheme: Scheme, reg: ProxOracle, alpha: float, X, ZY, G, mu: float):
    """Update of one factor from the products ``ZY = Z @ Y`` and ``G = Y^T Y``.

    Minimizes (exactly, linearized, or column by column) the function
    ``reg(U) + alpha/2 ||U Y^T - Z||^2 + mu/2 ||U - X||^2``.
    """
    if not mu > 0:
        raise InvalidParameter(f"step parameter must be positive, got {mu}")
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.HIERARCHICAL and not reg.column_separable:
        raise UnsupportedScheme(f"{type(reg).__name__} is not column separable")
    if scheme is not Scheme.PROX_LINEAR and alpha <= 0:
        raise UnsupportedScheme(f"{scheme.name.lower()} update needs alpha > 0")
    return _STEPS[scheme](reg, alpha, X, ZY, G, mu)


def update_x(scheme, prob: ProblemSpec, params: SolverParams, X, Y, Z, mu):
    X, Y, Z = (as_dense(A) for A in (X, Y, Z))
    prob.check_factors(X, Y)
    check_shape(Z, (prob.m, prob.n), "Z")
    return scheme_step(scheme, prob.psi, params.alpha, X, Z @ Y, Y.T @ Y, mu)


def update_y(scheme, prob: ProblemSpec, params: SolverParams, U, Y, Z, sigma):
    """Mirror of :func:`update_x`: the roles of ``(X, Y, Z)`` become
    ``(Y, U, Z^T)``."""
    U, Y, Z = (as_dense(A) for A in (U, Y, Z))
    prob.check_factors(U, Y)
    check_shape(Z, (prob.m, prob.n), "Z")
    return scheme_step(scheme, prob.phi, params.alpha, Y, Z.T @ U, U.T @ U, sigma)


# ---------------------------------------------------------------------------
# Kernels


class Kernel:
    """Problem-specific parts of an iteration.

    ``prepare`` runs once per outer iteration with the current factors;
    ``update_x``/``update_y`` may then be called several times by the line
    search. ``evaluate`` returns ``(F(U, V), ||U - X||^2, ||V - Y||^2)``.
    """

    params: SolverParams

    def objective(self, X, Y) -> float:
        raise NotImplementedError

    def prepare(self, X, Y):
        self.X, self.Y = X, Y

    def update_x(self, mu):
        raise NotImplementedError

    def update_y(self, U, sigma):
        raise NotImplementedError

    def evaluate(self, U, V):
        dX = U - self.X
        dY = V - self.Y
        return self.objective(U, V), float(np.vdot(dX, dX)), float(np.vdot(dY, dY))

    def norm_sq(self, A) -> float:
        return float(np.vdot(A, A))

    def accepted(self, U, V, objective, rejections):
        """Called once per outer iteration with the accepted pair, its
        objective and the number of rejected trial pairs."""

    def check_factors(self, X, Y):
        pass


class DenseKernel(Kernel):
    """Generic kernel: Z is formed explicitly from the linear map."""

    def __init__(self, prob: ProblemSpec, params: SolverParams):
        params.check_schemes(prob)
        self.prob = prob
        self.params = params

    def objective(self, X, Y):
        return objective(self.prob, X, Y)

    def check_factors(self, X, Y):
        self.prob.check_factors(X, Y)

    def prepare(self, X, Y):
        super().prepare(X, Y)
        self.Z = z_formula(self.prob, self.params, X, Y)
        self._ZY = self.Z @ Y
        self._G = Y.T @ Y

    def update_x(self, mu):
        return scheme_step(self.params.scheme_x, self.prob.psi, self.params.alpha,
                           self.X, self._ZY, self._G, mu)

    def update_y(self, U, sigma):
        return scheme_step(self.params.scheme_y, self.prob.phi, self.params.alpha,
                           self.Y, self.Z.T @ U, U.T @ U, sigma)


# ---------------------------------------------------------------------------
# State, trace and line search


@dataclass
class IterateState:
    X: np.ndarray
    Y: np.ndarray
    objective: float
    window_size: int
    last_mu: float = 1.0
    last_sigma: float = 1.0
    k: int = 0
    history: deque = field(init=False)

    def __post_init__(self):
        self.history = deque([self.objective], maxlen=self.window_size)

    @property
    def reference(self):
        return max(self.history)

    def commit(self, U, V, F, mu, sigma):
        self.X, self.Y, self.objective = U, V, F
        self.history.append(F)
        self.last_mu, self.last_sigma = mu, sigma
        self.k += 1


class LineSearchOutcome(NamedTuple):
    U: np.ndarray
    V: np.ndarray
    objective: float
    dx2: float
    dy2: float
    mu_accepted: float
    sigma_accepted: float
    inner_iterations: int
    forced_accept: bool
    cap: int
    descent_violation: bool


def inner_iteration_cap(mu_max, sigma_max_k, params: SolverParams) -> int:
    lt = math.log(params.tau)
    first = max(1, math.floor(math.log(mu_max / params.mu_min) / lt + 2))
    second = max(0, math.floor(math.log(sigma_max_k / params.sigma_min) / lt + 1))
    return first + second + 1


def line_search(kernel: Kernel, state: IterateState) -> LineSearchOutcome:
    p = kernel.params
    a = p.descent_coef
    mu_t = max(0.1 * state.last_mu, p.mu_min)
    sigma = min(max(0.1 * state.last_sigma, p.sigma_min), p.sigma_max)
    ny = kernel.norm_sq(state.Y)
    mu_max = a * ny + p.c
    ref = state.reference
    inner = 0
    forced = False
    while True:
        mu = min(mu_t, mu_max)
        U = kernel.update_x(mu)
        nu = kernel.norm_sq(U)
        sigma_max_k = a * nu + p.c
        while True:
            V = kernel.update_y(U, sigma)
            inner += 1
            F, dx2, dy2 = kernel.evaluate(U, V)
            if F - ref <= -0.5 * p.c * (dx2 + dy2):
                break
            if mu == mu_max:
                if sigma == sigma_max_k:
                    forced = True
                    logger.warning("line search accepted a step at mu_max/sigma_max "
                                   "without sufficient decrease (rounding)")
                    break
                sigma = min(p.tau * sigma, sigma_max_k)
                continue
            break
        if forced or F - ref <= -0.5 * p.c * (dx2 + dy2):
            break
        mu_t = p.tau * mu
        sigma = p.tau * sigma
    bound = -0.5 * (mu - a * ny) * dx2 - 0.5 * (sigma - a * nu) * dy2 + DESCENT_SLACK
    violation = F - state.objective > bound
    return LineSearchOutcome(U, V, F, dx2, dy2, mu, sigma, inner, forced,
                             inner_iteration_cap(mu_max, sigma_max_k, p), violation)


class TraceRecord(NamedTuple):
    k: int
    objective: float
    seconds: float
    mu: float
    sigma: float
    inner_iters: int
    dx: float
    dy: float


@dataclass
class Trace:
    """Per-iteration log. ``initial_objective`` is ``F`` at the starting
    point (time 0); ``records`` has one entry per completed iteration."""

    initial_objective: float
    records: list = field(default_factory=list)
    reason: str = ""
    descent_violations: int = 0
    cap_violations: int = 0
    forced_accepts: int = 0
    window_increases: int = 0

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self):
        return len(self.records)

    @property
    def objectives(self):
        return np.array([self.initial_objective] + [r.objective for r in self.records])

    @property
    def times(self):
        return np.array([0.0] + [r.seconds for r in self.records])

    @property
    def final_objective(self):
        return self.records[-1].objective if self.records else self.initial_objective

    def without_timing(self):
        """Copy with every wall-clock value set to 0."""
        return replace(self, records=[r._replace(seconds=0.0) for r in self.records])

    def rows(self, timing=True):
        nan = float("nan")
        yield (0, self.initial_objective, 0.0, nan, nan, 0, nan, nan)
        for rec in self.records:
            yield rec if timing else rec._replace(seconds=0.0)

    def write_csv(self, path, timing=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for row in self.rows(timing):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:5]]
                           + [int(row[5])] + [repr(float(v)) for v in row[6:]])

    def to_dict(self, timing=True):
        return {
            "reason": self.reason,
            "iterations": self.iterations,
            "descent_violations": self.descent_violations,
            "cap_violations": self.cap_violations,
            "forced_accepts": self.forced_accepts,
            "window_increases": self.window_increases,
            "rows": [[None if isinstance(v, float) and math.isnan(v) else v for v in r]
                     for r in self.rows(timing)],
        }


# ---------------------------------------------------------------------------
# Outer loop


@dataclass(frozen=True)
class SolveOptions:
    """Stopping rules. A tolerance of ``None`` disables that rule, which is
    how the fixed-time comparison protocol runs. ``target`` optionally stops
    as soon as the objective reaches the given value."""

    max_iters: int = 5000
    max_seconds: float = math.inf
    tol_obj: float | None = 1e-4
    tol_change: float | None = 1e-4
    consecutive: int = 3
    target: float | None = None

    def __post_init__(self):
        if self.max_iters < 0 or not self.max_seconds > 0:
            raise InvalidParameter("max_iters must be >= 0 and max_seconds > 0")
        for tol in (self.tol_obj, self.tol_change):
            if tol is not None and not tol >= 0:
                raise InvalidParameter("tolerances must be nonnegative")
        if self.consecutive < 1:
            raise InvalidParameter("consecutive must be at least 1")

    def time_mode(self):
        """Copy with both convergence rules off (budget-only termination)."""
        return SolveOptions(self.max_iters, self.max_seconds, None, None, self.consecutive,
                            self.target)


class StopMonitor:
    """Applies the stopping rules after each committed iteration."""

    def __init__(self, options: SolveOptions):
        self.options = options
        self.streak = 0
        self.t0 = time.perf_counter()

    def elapsed(self):
        return time.perf_counter() - self.t0

    def before(self, k):
        """Budget check before starting iteration ``k + 1``."""
        if k >= self.options.max_iters:
            return "max_iters"
        if self.elapsed() >= self.options.max_seconds:
            return "max_seconds"
        return None

    def after(self, F_prev, F, dx, dy, X, Y):
        o = self.options
        if o.target is not None and F <= o.target:
            return "target"
        if o.tol_obj is not None:
            if abs(F - F_prev) / (abs(F) + 1.0) <= o.tol_obj:
                self.streak += 1
                if self.streak >= o.consecutive:
                    return "tol_obj"
            else:
                self.streak = 0
        if o.tol_change is not None:
            scale = np.linalg.norm(X) + np.linalg.norm(Y) + 1.0
            if (dx + dy) / scale <= o.tol_change:
                return "tol_change"
        return None


def run(kernel: Kernel, X0, Y0, options: SolveOptions | None = None):
    """Run the iteration from ``(X0, Y0)``; returns ``(X, Y, trace)``."""
    options = options or SolveOptions()
    X = as_dense(X0, "X0").copy()
    Y = as_dense(Y0, "Y0").copy()
    kernel.check_factors(X, Y)
    F0 = kernel.objective(X, Y)
    if not math.isfinite(F0):
        raise InfeasibleInitialization("starting point is outside the regularizer domain")
    params = kernel.params
    state = IterateState(X, Y, F0, params.N + 1)
    trace = Trace(F0)
    monitor = StopMonitor(options)
    ref = state.reference
    while True:
        reason = monitor.before(state.k)
        if reason:
            break
        kernel.prepare(state.X, state.Y)
        out = line_search(kernel, state)
        kernel.accepted(out.U, out.V, out.objective, out.inner_iterations - 1)
        F_prev = state.objective
        state.commit(out.U, out.V, out.objective, out.mu_accepted, out.sigma_accepted)
        dx, dy = math.sqrt(out.dx2), math.sqrt(out.dy2)
        trace.records.append(TraceRecord(state.k, out.objective, monitor.elapsed(),
                                         out.mu_accepted, out.sigma_accepted,
                                         out.inner_iterations, dx, dy))
        trace.descent_violations += out.descent_violation
        trace.cap_violations += out.inner_iterations > out.cap
        trace.forced_accepts += out.forced_accept
        new_ref = state.reference
        trace.window_increases += new_ref > ref
        ref = new_ref
        reason = monitor.after(F_prev, out.objective, dx, dy, state.X, state.Y)
        if reason:
            break
    trace.reason = reason
    return state.X, state.Y, trace


def solve(prob: ProblemSpec, params: SolverParams, X0, Y0,
          options: SolveOptions | None = None):
    """Generic solve with an explicitly formed Z."""
    return run(DenseKernel(prob, params), X0, Y0, options)


__all__ = [
    "scheme_step", "hierarchical_column", "update_x", "update_y", "Kernel",
    "DenseKernel", "IterateState", "LineSearchOutcome", "line_search",
    "inner_iteration_cap", "TraceRecord", "Trace", "SolveOptions",
    "StopMonitor", "run", "solve", "TRACE_HEADER",
]
