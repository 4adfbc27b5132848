"""Problem definition, regularizers, the objective and its potential function.

The problem is ``min_{X,Y} psi(X) + phi(Y) + 0.5 * ||A(X Y^T) - b||^2`` with
``X`` of shape ``(m, r)``, ``Y`` of shape ``(n, r)`` and ``A A* = I``. The
solver works with the potential

    theta(X, Y, Z) = psi(X) + phi(Y) + alpha/2 ||X Y^T - Z||_F^2
                     + beta/2 ||A(Z) - b||^2,     1/alpha + 1/beta = 1,

which coincides with the objective when ``Z`` is given by :func:`z_formula`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidDimensions, InvalidParameter, UnsupportedScheme
from .linalg import (IdentityMap, LinearMap, as_dense, check_shape,
                     nuclear_norm, shrink_singular, shrink_singular_with_values)


class Scheme(enum.Enum):
    PROXIMAL = "prox"
    PROX_LINEAR = "proxlin"
    HIERARCHICAL = "hier"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"proximal": "prox", "prox-linear": "proxlin", "prox_linear": "proxlin",
                   "hierarchical": "hier", "hierarchical-prox": "hier"}
        key = str(value).lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise InvalidParameter(f"unknown update scheme {value!r}") from None


# ---------------------------------------------------------------------------
# Regularizers


class ProxOracle:
    """A regularizer ``g`` with its value and proximal mapping.

    ``prox(t, V)`` returns ``argmin_W g(W) + ||W - V||_F^2 / (2 t)``.
    Column-separable regularizers also provide ``column_prox`` for the
    hierarchical (column-by-column) update.
    """

    column_separable = False

    def value(self, X) -> float:
        raise NotImplementedError

    def prox(self, t, V) -> np.ndarray:
        raise NotImplementedError

    def column_prox(self, i, t, v) -> np.ndarray:
        raise UnsupportedScheme(f"{type(self).__name__} is not column separable")

    def contains(self, X) -> bool:
        return math.isfinite(self.value(X))


def _check_step(t):
    if not t > 0:
        raise InvalidParameter(f"prox step must be positive, got {t}")


@dataclass(frozen=True)
class Zero(ProxOracle):
    column_separable = True

    def value(self, X):
        return 0.0

    def prox(self, t, V):
        _check_step(t)
        return np.array(V, dtype=np.float64)

    def column_prox(self, i, t, v):
        return np.array(v, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Box(ProxOracle):
    """Indicator of ``lower <= X <= upper``; bounds are scalars or full-size
    matrices."""

    lower: float | np.ndarray = 0.0
    upper: float | np.ndarray = np.inf
    column_separable = True

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.ndim not in (0, 2) or hi.ndim not in (0, 2):
            raise InvalidDimensions("box bounds must be scalars or matrices")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise InvalidParameter("box bounds need lower <= upper")
        object.__setattr__(self, "lower", lo if lo.ndim else float(lo))
        object.__setattr__(self, "upper", hi if hi.ndim else float(hi))

    def _bounds(self, shape):
        lo, hi = self.lower, self.upper
        for b in (lo, hi):
            if np.ndim(b) == 2 and b.shape != shape:
                raise InvalidDimensions(f"box bound has shape {b.shape}, expected {shape}")
        return lo, hi

    def value(self, X):
        X = np.asarray(X, dtype=np.float64)
        lo, hi = self._bounds(X.shape)
        return 0.0 if np.all(X >= lo) and np.all(X <= hi) else math.inf

    def prox(self, t, V):
        _check_step(t)
        V = np.asarray(V, dtype=np.float64)
        lo, hi = self._bounds(V.shape)
        return np.minimum(np.maximum(V, lo), hi)

    def column_bounds(self, i):
        lo = self.lower[:, i] if np.ndim(self.lower) == 2 else self.lower
        hi = self.upper[:, i] if np.ndim(self.upper) == 2 else self.upper
        return lo, hi

    def column_prox(self, i, t, v):
        lo, hi = self.column_bounds(i)
        return np.minimum(np.maximum(v, lo), hi)


@dataclass(frozen=True)
class ScaledL1(ProxOracle):
    """``weight * ||X||_1``."""

    weight: float
    column_separable = True

    def __post_init__(self):
        if not self.weight > 0:
            raise InvalidParameter("l1 weight must be positive")

    def value(self, X):
        return self.weight * float(np.abs(X).sum())

    def prox(self, t, V):
        _check_step(t)
        V = np.asarray(V, dtype=np.float64)
        return np.sign(V) * np.maximum(np.abs(V) - t * self.weight, 0.0)

    def column_prox(self, i, t, v):
        return self.prox(t, v)


@dataclass(frozen=True)
class ScaledNuclear(ProxOracle):
    """``weight * ||X||_*``; the completion model uses ``weight = eta / 2``."""

    weight: float

    def __post_init__(self):
        if not self.weight > 0:
            raise InvalidParameter("nuclear weight must be positive")

    def value(self, X):
        return self.weight * nuclear_norm(X)

    def prox(self, t, V):
        _check_step(t)
        return shrink_singular(V, t * self.weight)

    def prox_with_value(self, t, V):
        """Prox result together with its regularizer value (saves an SVD)."""
        _check_step(t)
        W, s = shrink_singular_with_values(V, t * self.weight)
        return W, self.weight * float(np.sum(s))


def prox(oracle: ProxOracle, t: float, V) -> np.ndarray:
    return oracle.prox(t, V)


# ---------------------------------------------------------------------------
# Problem and parameters


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    psi: ProxOracle
    phi: ProxOracle
    linmap: LinearMap
    b: np.ndarray
    r: int

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if b.shape != (self.linmap.q,):
            raise InvalidDimensions(f"b has length {b.size}, map output is {self.linmap.q}")
        if not 1 <= self.r <= min(self.m, self.n):
            raise InvalidDimensions(f"rank {self.r} must lie in [1, min(m, n)]")
        object.__setattr__(self, "b", b)

    @property
    def m(self):
        return self.linmap.rows

    @property
    def n(self):
        return self.linmap.cols

    @classmethod
    def from_matrix(cls, M, r, psi=None, phi=None):
        """Full-observation problem with ``b = vec(M)``."""
        M = as_dense(M, "M")
        linmap = IdentityMap(*M.shape)
        return cls(psi or Zero(), phi or Zero(), linmap, linmap.apply(M), r)

    def check_factors(self, X, Y):
        check_shape(X, (self.m, self.r), "X")
        check_shape(Y, (self.n, self.r), "Y")


@dataclass(frozen=True)
class SolverParams:
    alpha: float
    beta: float
    gamma: float
    rho: float
    tau: float = 4.0
    c: float = 1e-4
    N: int = 3
    mu_min: float = 1.0
    sigma_min: float = 1.0
    sigma_max: float = 1e6
    scheme_x: Scheme = Scheme.PROX_LINEAR
    scheme_y: Scheme = Scheme.PROX_LINEAR

    def __post_init__(self):
        object.__setattr__(self, "scheme_x", Scheme.parse(self.scheme_x))
        object.__setattr__(self, "scheme_y", Scheme.parse(self.scheme_y))
        a, b = self.alpha, self.beta
        if a == 0 or b == 0 or abs(1.0 / a + 1.0 / b - 1.0) > 1e-12:
            raise InvalidParameter(f"need 1/alpha + 1/beta = 1, got alpha={a}, beta={b}")
        if self.gamma < max(0.0, -a, -(a + b)) - 1e-15:
            raise InvalidParameter("gamma too small for (alpha+gamma) I + beta A*A >= 0")
        if abs(self.rho - max(1.0, a * a / (a + b) ** 2)) > 1e-12 * max(1.0, self.rho):
            raise InvalidParameter("rho must equal max{1, alpha^2/(alpha+beta)^2}")
        if not self.tau > 1:
            raise InvalidParameter("tau must exceed 1")
        if not self.c > 0 or not self.mu_min > 0 or not self.sigma_min > 0:
            raise InvalidParameter("c, mu_min and sigma_min must be positive")
        if not self.sigma_min < self.sigma_max:
            raise InvalidParameter("need sigma_min < sigma_max")
        if int(self.N) != self.N or self.N < 0:
            raise InvalidParameter("N must be a nonnegative integer")

    @property
    def omega(self):
        """Weight ``beta / (alpha + beta)`` of the data in the Z update."""
        return self.beta / (self.alpha + self.beta)

    @property
    def descent_coef(self):
        """``alpha + 2 gamma rho``, the curvature term in mu_max / sigma_max."""
        return self.alpha + 2.0 * self.gamma * self.rho

    def check_schemes(self, prob: ProblemSpec):
        for scheme, reg, side in ((self.scheme_x, prob.psi, "X"), (self.scheme_y, prob.phi, "Y")):
            if scheme is Scheme.HIERARCHICAL and not reg.column_separable:
                raise UnsupportedScheme(f"hierarchical update of {side} needs a column-separable regularizer")
            if scheme is not Scheme.PROX_LINEAR and self.alpha <= 0:
                raise UnsupportedScheme(f"{scheme.name.lower()} update of {side} needs alpha > 0")


def derive_params(alpha: float, **overrides) -> SolverParams:
    """Parameters for a given ``alpha``: ``beta = alpha/(alpha-1)`` and the
    smallest admissible ``gamma`` and ``rho``; other fields take the defaults
    unless overridden."""
    alpha = float(alpha)
    if alpha == 0.0 or alpha == 1.0:
        raise InvalidParameter(f"alpha must not be 0 or 1, got {alpha}")
    allowed = {f.name for f in fields(SolverParams)} - {"alpha", "beta", "gamma", "rho"}
    unknown = set(overrides) - allowed
    if unknown:
        raise InvalidParameter(f"unknown parameters: {sorted(unknown)}")
    beta = alpha / (alpha - 1.0)
    s = alpha + beta
    # alpha/(alpha+beta) = 1 - 1/alpha; this form is exact for e.g. alpha = 0.4
    return SolverParams(alpha=alpha, beta=beta, gamma=max(0.0, -alpha, -s),
                        rho=max(1.0, (1.0 - 1.0 / alpha) ** 2), **overrides)


# ---------------------------------------------------------------------------
# Objective, potential, Z update


def _data_residual(prob, X, Y):
    return prob.linmap.apply(X @ Y.T) - prob.b


def objective(prob: ProblemSpec, X, Y) -> float:
    """``psi(X) + phi(Y) + 0.5 ||A(X Y^T) - b||^2``; ``inf`` outside the
    regularizers' domains."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    prob.check_factors(X, Y)
    reg = prob.psi.value(X) + prob.phi.value(Y)
    if not math.isfinite(reg):
        return math.inf
    res = _data_residual(prob, X, Y)
    return reg + 0.5 * float(res @ res)


def potential(prob: ProblemSpec, params: SolverParams, X, Y, Z) -> float:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    prob.check_factors(X, Y)
    check_shape(Z, (prob.m, prob.n), "Z")
    reg = prob.psi.value(X) + prob.phi.value(Y)
    if not math.isfinite(reg):
        return math.inf
    D = X @ Y.T - Z
    res = prob.linmap.apply(Z) - prob.b
    return reg + 0.5 * params.alpha * float(np.sum(D * D)) + 0.5 * params.beta * float(res @ res)


def z_formula(prob: ProblemSpec, params: SolverParams, X, Y) -> np.ndarray:
    """``Z = (I - w A*A)(X Y^T) + w A*(b)`` with ``w = beta/(alpha+beta)``."""
    if params.alpha + params.beta == 0:
        raise InvalidParameter("alpha + beta must be nonzero")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    prob.check_factors(X, Y)
    P = X @ Y.T
    return P - params.omega * prob.linmap.adjoint(prob.linmap.apply(P) - prob.b)


def smooth_gradients(prob: ProblemSpec, X, Y):
    """Gradients of ``0.5 ||A(X Y^T) - b||^2`` with respect to X and Y."""
    R = prob.linmap.adjoint(_data_residual(prob, X, Y))
    return R @ Y, R.T @ X


def stationarity_residual(prob: ProblemSpec, X, Y) -> float:
    """Unit-step prox-gradient fixed-point residual, scaled by
    ``1 + ||X||_F + ||Y||_F``. Zero exactly at stationary points for convex
    regularizers."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    prob.check_factors(X, Y)
    GX, GY = smooth_gradients(prob, X, Y)
    rx = np.linalg.norm(X - prob.psi.prox(1.0, X - GX))
    ry = np.linalg.norm(Y - prob.phi.prox(1.0, Y - GY))
    return float((rx + ry) / (1.0 + np.linalg.norm(X) + np.linalg.norm(Y)))


__all__ = [
    "Scheme", "ProxOracle", "Zero", "Box", "ScaledL1", "ScaledNuclear", "prox",
    "ProblemSpec", "SolverParams", "derive_params", "objective", "potential",
    "z_formula", "smooth_gradients", "stationarity_residual",
]
