"""Dense SPD kernels and the O(N) block-tridiagonal solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NotPositiveDefinite

__all__ = [
    "DenseSpd",
    "BlockTridiagonal",
    "chol_solve",
    "block_tridiag_solve",
    "rank_check",
    "sym_sqrt",
    "sym_inv_sqrt",
]


@dataclass
class DenseSpd:
    """Symmetric positive-definite matrix with a cached Cholesky factor."""

    a: np.ndarray
    _factor: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise DimensionMismatch(f"expected square matrix, got {self.a.shape}")
        try:
            self._factor = sla.cho_factor(self.a, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self._factor, np.asarray(rhs, dtype=float),
                             check_finite=False)


def chol_solve(a: DenseSpd | np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve A x = rhs for SPD A via Cholesky."""
    if not isinstance(a, DenseSpd):
        a = DenseSpd(a)
    return a.solve(rhs)


class BlockTridiagonal:
    """Symmetric block-tridiagonal matrix, stored as diagonal blocks plus
    the sub-diagonal blocks; the super-diagonal is implicit (transposes).

    diag: (N, n, n), offdiag: (N-1, n, n) where offdiag[k] sits at block
    row k+1, column k.
    """

    def __init__(self, diag: np.ndarray, offdiag: np.ndarray | None = None):
        diag = np.asarray(diag, dtype=float)
        if diag.ndim != 3 or diag.shape[1] != diag.shape[2]:
            raise DimensionMismatch(f"diag must be (N, n, n), got {diag.shape}")
        self.N = diag.shape[0]
        self.n = diag.shape[1]
        if offdiag is None:
            offdiag = np.zeros((max(self.N - 1, 0), self.n, self.n))
        offdiag = np.asarray(offdiag, dtype=float)
        if offdiag.shape != (max(self.N - 1, 0), self.n, self.n):
            raise DimensionMismatch(
                f"offdiag must be (N-1, n, n), got {offdiag.shape}")
        self.diag = diag
        self.offdiag = offdiag

    @property
    def size(self) -> int:
        return self.N * self.n

    def to_dense(self) -> np.ndarray:
        n, N = self.n, self.N
        full = np.zeros((N * n, N * n))
        for k in range(N):
            full[k * n:(k + 1) * n, k * n:(k + 1) * n] = self.diag[k]
        for k in range(N - 1):
            full[(k + 1) * n:(k + 2) * n, k * n:(k + 1) * n] = self.offdiag[k]
            full[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = self.offdiag[k].T
        return full

    def matvec(self, x: np.ndarray) -> np.ndarray:
        n, N = self.n, self.N
        xb = np.asarray(x, dtype=float).reshape(N, n)
        out = np.einsum("kij,kj->ki", self.diag, xb)
        if N > 1:
            out[1:] += np.einsum("kij,kj->ki", self.offdiag, xb[:-1])
            out[:-1] += np.einsum("kji,kj->ki", self.offdiag, xb[1:])
        return out.reshape(-1)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Block forward elimination + back substitution (O(N n^3))."""
        n, N = self.n, self.N
        r = np.asarray(rhs, dtype=float).reshape(N, n)
        factors = []
        gains = []  # S_{k-1}^{-1} L_k^T, reused in the back sweep
        z = np.empty_like(r)
        s_k = self.diag[0]
        for k in range(N):
            try:
                c = sla.cho_factor(s_k, lower=True, check_finite=False)
            except sla.LinAlgError as exc:
                raise NotPositiveDefinite(f"pivot block {k} not SPD") from exc
            factors.append(c)
            if k == 0:
                z[0] = sla.cho_solve(c, r[0], check_finite=False)
            else:
                z[k] = sla.cho_solve(
                    c, r[k] - self.offdiag[k - 1] @ z[k - 1], check_finite=False)
            if k < N - 1:
                lk = self.offdiag[k]
                w = sla.cho_solve(c, lk.T, check_finite=False)
                gains.append(w)
                s_k = self.diag[k + 1] - lk @ w
        # here z[k] = S_k^{-1}(r_k - L_k z_{k-1}) already
        x = np.empty_like(r)
        x[N - 1] = z[N - 1]
        for k in range(N - 2, -1, -1):
            x[k] = z[k] - gains[k] @ x[k + 1]
        return x.reshape(-1)


def block_tridiag_solve(omega: BlockTridiagonal, rhs: np.ndarray) -> np.ndarray:
    """Solve omega @ x = rhs for an SPD block-tridiagonal omega."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != omega.size:
        raise DimensionMismatch(
            f"rhs length {rhs.shape[0]} != matrix size {omega.size}")
    return omega.solve(rhs)


def rank_check(a: np.ndarray, rel_tol: float = 1e-12) -> int:
    """Numerical rank: singular values above rel_tol * sigma_max."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def sym_sqrt(q: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix (eigendecomposition)."""
    q = np.asarray(q, dtype=float)
    w, v = np.linalg.eigh(0.5 * (q + q.T))
    if np.min(w) <= 0:
        raise NotPositiveDefinite(f"min eigenvalue {np.min(w):.3e} <= 0")
    return (v * np.sqrt(w)) @ v.T


def sym_inv_sqrt(q: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix."""
    q = np.asarray(q, dtype=float)
    w, v = np.linalg.eigh(0.5 * (q + q.T))
    if np.min(w) <= 0:
        raise NotPositiveDefinite(f"min eigenvalue {np.min(w):.3e} <= 0")
    return (v / np.sqrt(w)) @ v.T
