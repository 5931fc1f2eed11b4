"""Primal-dual interior-point kernel for concave QPs over polyhedra.

Solves

    maximize    c^T u - 1/2 u^T M u
    subject to  A^T u <= a                    (A is m x ell)

by path-following on the relaxed optimality system

    F_gamma(s, q, u) = [ s + A^T u - a ;  D(s) D(q) 1 - gamma 1 ;  c - M u - A q ]

with an infeasible start: only s > 0, q > 0 are maintained; the affine
residuals are driven to zero by the Newton corrections.  Each step solves

    T du = r,   T = M + A D(q) D(s)^{-1} A^T,

which is nonsingular exactly when null(M) & null(A^T) = {0}.  The kernel
tolerates feasible sets with empty interior (slack pairs pinched to zero),
which the feasible-start solver in `ipsolve` cannot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import EvaluationDidNotConverge, SingularT

__all__ = ["QpResult", "maximize_qp"]

_FRACTION_TO_BOUNDARY = 0.995
_SIGMA = 0.1


@dataclass
class QpResult:
    u: np.ndarray          # maximizer
    value: float           # objective at u (inf if unbounded)
    q: np.ndarray          # multipliers for A^T u <= a
    s: np.ndarray          # slacks a - A^T u
    iterations: int
    unbounded: bool = False


def _step_length(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, _FRACTION_TO_BOUNDARY * np.min(-v[neg] / dv[neg]))


def maximize_qp(c: np.ndarray,
                M: np.ndarray | None,
                A: np.ndarray | None,
                a: np.ndarray | None,
                u0: np.ndarray | None = None,
                gap_tol: float = 1e-11,
                res_tol: float = 1e-10,
                max_iter: int = 120,
                blowup: float = 1e10) -> QpResult:
    """Maximize c^T u - 1/2 u^T M u over {u : A^T u <= a}.

    M=None means M=0 (pure LP).  A=None/ell=0 means unconstrained, which
    requires solvable M u = c.  Unboundedness is reported via
    ``unbounded=True`` with ``value=inf`` rather than raising.
    """
    c = np.asarray(c, dtype=float)
    m = c.shape[0]
    M = np.zeros((m, m)) if M is None else np.asarray(M, dtype=float)
    if A is None or A.shape[1] == 0:
        # stationary point M u = c, or unbounded if inconsistent
        u, *_ = np.linalg.lstsq(M, c, rcond=None)
        if np.linalg.norm(M @ u - c, np.inf) > 1e-8 * (1.0 + np.linalg.norm(c, np.inf)):
            return QpResult(u, np.inf, np.zeros(0), np.zeros(0), 0, unbounded=True)
        val = float(c @ u - 0.5 * u @ (M @ u))
        return QpResult(u, val, np.zeros(0), np.zeros(0), 0)

    A = np.asarray(A, dtype=float)
    a = np.asarray(a, dtype=float)
    ell = A.shape[1]

    u = np.zeros(m) if u0 is None else np.array(u0, dtype=float)
    s = np.maximum(a - A.T @ u, 1.0)
    q = np.ones(ell)

    cnorm = 1.0 + np.linalg.norm(c, np.inf)
    growing = False
    for it in range(max_iter):
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s))
                and np.all(np.isfinite(q))):
            if growing:
                return QpResult(u, np.inf, q, s, it, unbounded=True)
            raise EvaluationDidNotConverge("iterates became non-finite")
        r_p = s + A.T @ u - a
        r_d = c - M @ u - A @ q
        gap = float(s @ q) / ell
        if (gap <= gap_tol
                and np.linalg.norm(r_p, np.inf) <= res_tol * (1.0 + np.linalg.norm(a, np.inf))
                and np.linalg.norm(r_d, np.inf) <= res_tol * cnorm):
            break

        obj = float(c @ u - 0.5 * u @ (M @ u))
        if obj > blowup * cnorm or np.linalg.norm(u, np.inf) > blowup:
            return QpResult(u, np.inf, q, s, it, unbounded=True)
        growing = obj > 1e4 * cnorm

        gamma = _SIGMA * gap
        r_c = s * q - gamma
        # eliminate (ds, dq): T du = r_d - A s^{-1} (q r_p - r_c)
        w = q / s
        T = M + (A * w) @ A.T
        rhs = r_d - A @ ((q * r_p - r_c) / s)
        try:
            cf = sla.cho_factor(T, lower=True, check_finite=False)
            du = sla.cho_solve(cf, rhs, check_finite=False)
        except sla.LinAlgError:
            try:
                du = sla.solve(T, rhs, assume_a="sym", check_finite=False)
            except sla.LinAlgError as exc:
                raise SingularT(
                    "reduced matrix T singular; null(M) & null(A^T) != {0}"
                ) from exc
        ds = -r_p - A.T @ du
        dq = (-r_c - q * ds) / s

        alpha = min(_step_length(s, ds), _step_length(q, dq))
        u = u + alpha * du
        s = s + alpha * ds
        q = q + alpha * dq
    else:
        obj = float(c @ u - 0.5 * u @ (M @ u))
        if np.isfinite(obj) and obj > 1e6 * cnorm:
            return QpResult(u, np.inf, q, s, max_iter, unbounded=True)
        raise EvaluationDidNotConverge(
            f"dual maximization: gap {float(s @ q) / ell:.2e} after {max_iter} iterations")

    val = float(c @ u - 0.5 * u @ (M @ u))
    return QpResult(u, val, q, s, it, unbounded=False)
