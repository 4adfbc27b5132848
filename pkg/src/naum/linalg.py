"""Dense/sparse storage, linear maps with adjoints, thin SVD, shrinkage and
spectral norms.

Dense matrices are plain C-contiguous ``float64`` numpy arrays. Every function
checks shapes explicitly; nothing relies on broadcasting between operands of
different shapes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDimensions, InvalidParameter, NonFiniteInput

logger = logging.getLogger(__name__)

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 50
RANK_TOL = 1e-12
POWER_TOL = 1e-10
POWER_MAX_ITER = 500


def as_dense(X, name="matrix", finite=True) -> np.ndarray:
    """Return ``X`` as a 2-D C-contiguous float64 array, validating it."""
    A = np.ascontiguousarray(X, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidDimensions(f"{name} must be 2-D, got shape {A.shape}")
    if finite and not np.all(np.isfinite(A)):
        raise NonFiniteInput(f"{name} has non-finite entries")
    return A


def check_shape(X, shape, name="matrix"):
    if X.shape != tuple(shape):
        raise InvalidDimensions(f"{name} has shape {X.shape}, expected {tuple(shape)}")


class SamplingPattern:
    """Sorted, duplicate-free set of zero-based ``(i, j)`` positions in a
    ``rows x cols`` matrix.

    Entries are kept in lexicographic (row-major) order, which is also CSR
    order, so residual vectors indexed by the pattern can be wrapped into a
    sparse matrix without any permutation.
    """

    def __init__(self, rows, cols, i, j):
        self.rows = int(rows)
        self.cols = int(cols)
        i = np.asarray(i, dtype=np.int64).ravel()
        j = np.asarray(j, dtype=np.int64).ravel()
        if i.shape != j.shape:
            raise InvalidDimensions("row and column index arrays differ in length")
        if i.size:
            if i.min() < 0 or i.max() >= self.rows or j.min() < 0 or j.max() >= self.cols:
                raise InvalidDimensions("pattern index out of range")
            key = i * self.cols + j
            if np.any(np.diff(key) <= 0):
                raise InvalidDimensions("pattern entries must be strictly sorted and unique")
        self.i = i
        self.j = j
        self.i.flags.writeable = False
        self.j.flags.writeable = False

    @classmethod
    def from_pairs(cls, rows, cols, pairs):
        """Build from an unordered iterable of pairs; duplicates are an error."""
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        key = arr[:, 0] * int(cols) + arr[:, 1]
        order = np.argsort(key, kind="stable")
        if np.any(np.diff(key[order]) == 0):
            raise InvalidDimensions("duplicate entries in sampling pattern")
        return cls(rows, cols, arr[order, 0], arr[order, 1])

    @classmethod
    def full(cls, rows, cols):
        ii, jj = np.divmod(np.arange(rows * cols, dtype=np.int64), cols)
        return cls(rows, cols, ii, jj)

    def __len__(self):
        return int(self.i.size)

    def __eq__(self, other):
        return (isinstance(other, SamplingPattern) and self.shape == other.shape
                and np.array_equal(self.i, other.i) and np.array_equal(self.j, other.j))

    def __repr__(self):
        return f"SamplingPattern({self.rows}x{self.cols}, nnz={len(self)})"

    @property
    def shape(self):
        return (self.rows, self.cols)

    def pairs(self):
        return list(zip(self.i.tolist(), self.j.tolist()))

    @cached_property
    def indptr(self):
        counts = np.bincount(self.i, minlength=self.rows)
        return np.concatenate(([0], np.cumsum(counts))).astype(np.int64)

    def to_csr(self, values) -> sp.csr_matrix:
        """Sparse matrix with ``values`` placed on the pattern (pattern order)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self),):
            raise InvalidDimensions(f"expected {len(self)} values, got {values.shape}")
        return sp.csr_matrix((values, self.j, self.indptr), shape=self.shape)

    def gather(self, M):
        """Entries of dense ``M`` on the pattern."""
        check_shape(M, self.shape, "M")
        return M[self.i, self.j]

    def gather_product(self, X, Y):
        """Entries of ``X @ Y.T`` on the pattern, without forming the product."""
        if X.shape[0] != self.rows or Y.shape[0] != self.cols or X.shape[1] != Y.shape[1]:
            raise InvalidDimensions("factor shapes do not match the pattern")
        return np.einsum("ij,ij->i", X[self.i], Y[self.j])


class LinearMap:
    """Linear map from ``rows x cols`` matrices to vectors of length ``q``
    with ``A A* = I_q``."""

    rows: int
    cols: int

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def q(self) -> int:
        raise NotImplementedError

    def apply(self, M) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, v) -> np.ndarray:
        raise NotImplementedError

    def _check_matrix(self, M):
        M = np.asarray(M, dtype=np.float64)
        check_shape(M, self.shape, "M")
        return M

    def _check_vector(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.q,):
            raise InvalidDimensions(f"vector has shape {v.shape}, expected ({self.q},)")
        return v


class IdentityMap(LinearMap):
    """Identity on ``R^{m x n}`` viewed as ``R^{mn}``, flattened row-major."""

    def __init__(self, rows, cols):
        self.rows = int(rows)
        self.cols = int(cols)

    def __repr__(self):
        return f"IdentityMap({self.rows}, {self.cols})"

    @property
    def q(self):
        return self.rows * self.cols

    def apply(self, M):
        return self._check_matrix(M).reshape(-1).copy()

    def adjoint(self, v):
        return self._check_vector(v).reshape(self.rows, self.cols).copy()


class SamplingMap(LinearMap):
    """Keeps the entries on a sampling pattern, in pattern order."""

    def __init__(self, pattern: SamplingPattern):
        self.pattern = pattern
        self.rows, self.cols = pattern.shape

    def __repr__(self):
        return f"SamplingMap({self.pattern!r})"

    @property
    def q(self):
        return len(self.pattern)

    def apply(self, M):
        return self.pattern.gather(self._check_matrix(M)).copy()

    def adjoint(self, v):
        v = self._check_vector(v)
        out = np.zeros(self.shape)
        out[self.pattern.i, self.pattern.j] = v
        return out


def apply_map(linmap: LinearMap, M) -> np.ndarray:
    return linmap.apply(M)


def adjoint_map(linmap: LinearMap, v) -> np.ndarray:
    return linmap.adjoint(v)


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.s) @ self.V.T


def _jacobi_columns(B, W):
    """One-sided (Hestenes) Jacobi on the rows of ``B`` (t x m).

    Rotates pairs of rows until they are mutually orthogonal; the same
    rotations are accumulated into ``W`` (t x t, rows). The rotation angles
    are exactly those that diagonalize the Gram matrix ``B B^T``.
    """
    t = B.shape[0]
    norms = np.einsum("ij,ij->i", B, B)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(t - 1):
            bp = B[p]
            for q in range(p + 1, t):
                a = norms[p]
                b = norms[q]
                if a == 0.0 or b == 0.0:
                    continue
                bq = B[q]
                g = float(bp @ bq)
                if abs(g) <= JACOBI_TOL * math.sqrt(a * b):
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * g)
                tn = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + tn * tn)
                s = c * tn
                new_p = c * bp - s * bq
                B[q] = s * bp + c * bq
                B[p] = new_p
                bp = B[p]
                wp = W[p].copy()
                W[p] = c * wp - s * W[q]
                W[q] = s * wp + c * W[q]
                norms[p] = max(a - tn * g, 0.0)
                norms[q] = max(b + tn * g, 0.0)
        if not rotated:
            return
        # refresh against accumulated rounding in the norm updates
        norms = np.einsum("ij,ij->i", B, B)
    logger.warning("Jacobi SVD did not converge in %d sweeps", JACOBI_MAX_SWEEPS)


def _complete_orthonormal(Q, m, t):
    """Extend the orthonormal columns of ``Q`` (m x k) to m x t."""
    k = Q.shape[1]
    if k == t:
        return Q
    basis = np.linalg.qr(np.hstack([Q, np.eye(m)]))[0]
    return np.hstack([Q, basis[:, k:t]])


def thin_svd(X) -> SvdResult:
    """Thin SVD ``X = U diag(s) V^T`` with ``t = min(m, n)`` singular values,
    sorted in descending order.

    Works on the narrow side: the ``t x t`` Gram matrix is diagonalized, its
    eigenvectors rotate the columns of ``X``, and one-sided Jacobi sweeps then
    orthogonalize the rotated columns to full working accuracy.
    Singular values below ``1e-12 * s_1`` are treated as numerically zero and
    their left singular vectors are completed to an orthonormal set.
    """
    X = as_dense(X, "X")
    m, n = X.shape
    if m < n:
        res = thin_svd(X.T)
        return SvdResult(res.V, res.s, res.U)
    t = n
    if t:
        # Rotate onto the Gram eigenbasis first; the Jacobi sweeps then only
        # polish the nearly orthogonal columns (usually one or two sweeps).
        _, Q = np.linalg.eigh(X.T @ X)
        W = np.ascontiguousarray(Q.T)
        B = W @ X.T
        _jacobi_columns(B, W)
    else:
        B = np.zeros((0, m))
        W = np.zeros((0, 0))
    s = np.sqrt(np.einsum("ij,ij->i", B, B))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    B = B[order]
    V = np.ascontiguousarray(W[order].T)
    keep = s > RANK_TOL * s[0] if t and s[0] > 0 else np.zeros(t, dtype=bool)
    k = int(np.count_nonzero(keep))
    U = (B[:k] / s[:k, None]).T
    if k < t:
        U = _complete_orthonormal(U, m, t)
        s[k:] = np.where(s[k:] > 0, s[k:], 0.0)
    return SvdResult(np.ascontiguousarray(U), s, V)


def _shrink(X, nu):
    if nu < 0:
        raise InvalidParameter(f"shrinkage threshold must be nonnegative, got {nu}")
    X = as_dense(X, "X")
    if nu == 0:
        res = thin_svd(X)
        return X.copy(), res.s
    res = thin_svd(X)
    s_bar = np.maximum(res.s - nu, 0.0)
    k = int(np.count_nonzero(s_bar))
    W = (res.U[:, :k] * s_bar[:k]) @ res.V[:, :k].T
    return W, s_bar


def shrink_singular(X, nu: float) -> np.ndarray:
    """Singular value soft-thresholding: the prox of ``nu * ||.||_*``."""
    if nu < 0:
        raise InvalidParameter(f"shrinkage threshold must be nonnegative, got {nu}")
    if nu == 0:
        return as_dense(X, "X").copy()
    return _shrink(X, nu)[0]


def shrink_singular_with_values(X, nu: float):
    """Like :func:`shrink_singular` but also returns the shrunk singular
    values, whose sum is the nuclear norm of the result."""
    return _shrink(X, nu)


def nuclear_norm(X) -> float:
    return float(np.sum(thin_svd(X).s))


def spectral_norm_sq(X) -> float:
    """Squared largest singular value by power iteration on the small Gram
    matrix, started from the normalized all-ones vector.

    Stops once the eigen-residual ``||G v - lam v||`` drops below ``1e-10 lam``.
    Successive Rayleigh quotients can stall far from the answer when the top
    two singular values are close, the residual cannot. Falls back to
    :func:`thin_svd` when the iteration does not converge, or when the start
    vector was (numerically) orthogonal to the top eigenvector.
    """
    X = as_dense(X, "X")
    if not X.any():
        return 0.0
    G = X.T @ X if X.shape[0] >= X.shape[1] else X @ X.T
    k = G.shape[0]
    lower = float(np.max(np.diag(G)))
    v = np.full(k, 1.0 / np.sqrt(k))
    for _ in range(POWER_MAX_ITER):
        w = G @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= POWER_TOL * lam:
            if lam >= lower * (1.0 - 1e-12):
                return lam
            break
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
    logger.debug("power iteration fell back to the SVD")
    s1 = float(thin_svd(X).s[0])
    return s1 * s1
