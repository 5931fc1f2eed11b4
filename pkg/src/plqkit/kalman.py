"""Kalman smoothing with PLQ process/measurement penalties.

The dynamic estimation problem

    min_x  rho_v(R^{-1/2}(H x - z)) + rho_w(Q^{-1/2}(G x - mu))

has block-diagonal measurement structure and block-bidiagonal process
structure, so the interior-point Newton systems reduce to block-diagonal
T_w, T_v and a block-tridiagonal Omega solved in O(N(n^3 + m^3 + ell))
per iteration.  ``stack_problem`` builds the equivalent dense problem for
the generic solver, which is the independent route used in tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .densities import huber_constants, vapnik_constants
from .errors import (
    BadKind,
    ConditionViolated,
    DimensionMismatch,
    IterationLimit,
    NoInteriorFound,
    NotEpsilonLoss,
    NumericalBreakdown,
)
from .ipsolve import PlqProblem, SolveOptions, SolveStats, assemble_problem
from .linalg import BlockTridiagonal, block_tridiag_solve, rank_check, sym_inv_sqrt
from .penalties import QsPenalty, make_catalogue, precompose_affine

__all__ = [
    "StateSpaceModel",
    "SmootherSpec",
    "SmoothResult",
    "smooth_quadratic",
    "smooth_plq",
    "statistical_weight",
    "support_vectors",
    "build_spline_model",
    "stack_problem",
    "model_from_dict",
]


@dataclass
class StateSpaceModel:
    """Block sequences of x_k = G_k x_{k-1} + w_k, z_k = H_k x_k + v_k.

    G[0] is implicitly the identity (x_1 = x0 + w_1); it is stored but
    never applied.  All blocks are (N, ., .) arrays.
    """

    G: np.ndarray        # (N, n, n)
    H: np.ndarray        # (N, m, n)
    Q: np.ndarray        # (N, n, n), SPD
    R: np.ndarray        # (N, m, m), SPD
    x0: np.ndarray       # (n,)

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        N, n = self.G.shape[0], self.G.shape[1]
        m = self.H.shape[1]
        if self.G.shape != (N, n, n) or self.H.shape != (N, m, n):
            raise DimensionMismatch("G must be (N,n,n) and H (N,m,n)")
        if self.Q.shape != (N, n, n) or self.R.shape != (N, m, m):
            raise DimensionMismatch("Q must be (N,n,n) and R (N,m,m)")
        if self.x0.shape[0] != n:
            raise DimensionMismatch("x0 must have length n")

    @property
    def N(self) -> int:
        return self.G.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[1]

    def mu(self) -> np.ndarray:
        """Prior mean vector: first block x0, the rest zero."""
        out = np.zeros((self.N, self.n))
        out[0] = self.x0
        return out


@dataclass
class SmootherSpec:
    process: str = "l2"
    meas: str = "l2"
    process_params: dict = field(default_factory=dict)
    meas_params: dict = field(default_factory=dict)
    weight_mode: str = "none"    # "none" | "standardized"


@dataclass
class SmoothResult:
    xhat: np.ndarray             # (N, n)
    proc_residual: np.ndarray    # (N, n): G xhat - mu
    meas_residual: np.ndarray    # (N, m): H xhat - z
    meas_arg: np.ndarray         # (N, m): penalty argument on the measurement side
    stats: SolveStats
    spec: SmootherSpec | None = None


def _check_z(model: StateSpaceModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if z.shape != (model.N, model.m):
        raise DimensionMismatch(f"z must be (N, m) = {(model.N, model.m)}")
    return z


def _residuals(model: StateSpaceModel, z: np.ndarray, x: np.ndarray):
    rw = x - np.einsum("kij,kj->ki", model.G, np.vstack([x[:1], x[:-1]]))
    rw[0] = x[0] - model.x0
    rv = np.einsum("kij,kj->ki", model.H, x) - z
    return rw, rv


# -- quadratic smoother ---------------------------------------------------------

def smooth_quadratic(model: StateSpaceModel, z) -> SmoothResult:
    """Gaussian smoother: solve (G^T Q^{-1} G + H^T R^{-1} H) x = r with the
    block-tridiagonal solver, never materializing the stacked matrices."""
    z = _check_z(model, z)
    t0 = time.perf_counter()
    N, n = model.N, model.n
    Qi = np.linalg.inv(model.Q)
    Ri = np.linalg.inv(model.R)
    HtRi = np.einsum("kji,kjl->kil", model.H, Ri)          # (N, n, m)

    diag = np.einsum("kij,kjl->kil", HtRi, model.H) + Qi
    sub = np.zeros((N - 1, n, n))
    for k in range(1, N):
        QiG = Qi[k] @ model.G[k]
        diag[k - 1] += model.G[k].T @ QiG
        sub[k - 1] = -QiG
    rhs = np.einsum("kij,kj->ki", HtRi, z)
    rhs[0] += Qi[0] @ model.x0

    omega = BlockTridiagonal(diag, sub)
    x = block_tridiag_solve(omega, rhs.reshape(-1)).reshape(N, n)
    rw, rv = _residuals(model, z, x)
    stats = SolveStats(iterations=1, wall_time=time.perf_counter() - t0)
    return SmoothResult(x, rw, rv, rv.copy(), stats,
                        SmootherSpec(process="l2", meas="l2"))


# -- statistical weights ---------------------------------------------------------

def statistical_weight(kind: str, params: dict | None = None) -> float:
    """Multiplier that keeps a robust loss consistent with unit-variance
    noise: sqrt(2) for l1, 1 for l2, the closed-form moment ratio m2/m0 for
    Huber, and the standardization constant c2 for Vapnik."""
    params = params or {}
    if kind == "l1":
        return math.sqrt(2.0)
    if kind == "l2":
        return 1.0
    if kind == "huber":
        c = huber_constants(params.get("kappa", 1.0))
        return c.m2 / c.m0
    if kind == "vapnik":
        return vapnik_constants(params.get("eps", 0.1)).c2
    raise BadKind(f"no statistical weight for kind {kind!r}")


def _inside_scale(kind: str, params: dict) -> float:
    """Argument scaling c2 of the standardized density for this kind."""
    if kind == "l2":
        return 1.0
    if kind == "l1":
        return math.sqrt(2.0)
    if kind == "huber":
        return huber_constants(params.get("kappa", 1.0)).c2
    if kind == "vapnik":
        return vapnik_constants(params.get("eps", 0.1)).c2
    raise BadKind(f"no standardization constant for kind {kind!r}")


# -- PLQ smoother -----------------------------------------------------------------

def _block_atom(kind: str, dim: int, params: dict, scale_arg: float) -> QsPenalty:
    pen = make_catalogue(kind, dim=dim, **params)
    if scale_arg != 1.0:
        pen = precompose_affine(pen, scale_arg * np.eye(dim))
    return pen


def _atom_interior(pen: QsPenalty) -> np.ndarray:
    mid = pen.U.midpoint()
    if np.linalg.norm(pen.B.T @ mid, np.inf) <= 1e-12 and pen.U.strictly_contains(mid):
        return mid
    zero = np.zeros(pen.m)
    if pen.U.strictly_contains(zero):
        return zero
    raise NoInteriorFound(f"no interior dual with B^T u = 0 for kind {pen.kind!r}")


class _Blocks:
    """Per-time-step data of one side (process or measurement) of the KKT
    system, batched over k."""

    def __init__(self, pen: QsPenalty, N: int):
        self.pen = pen
        self.d = pen.m                 # dual dim per step
        self.ell = pen.ell             # rows per step
        self.A = pen.rows.A            # (d, ell), same every step
        self.a = pen.rows.a
        self.M = pen.M
        self.N = N
        if rank_check(np.vstack([pen.M, pen.rows.A.T])) < pen.m:
            raise ConditionViolated(
                f"block kind {pen.kind!r}: null(M) & null(A^T) != {{0}}")

    def classes(self):
        from .ipsolve import _row_classes

        return _row_classes(self.pen.U)


def _build_T(blocks: _Blocks, s: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = q / s                                            # (N, ell)
    return blocks.M + np.einsum("il,kl,jl->kij", blocks.A, d, blocks.A)


def smooth_plq(model: StateSpaceModel, z, spec: SmootherSpec,
               opts: SolveOptions | None = None,
               _trace: list | None = None) -> SmoothResult:
    """PLQ smoother: path-following IP with block-diagonal T_w, T_v and a
    block-tridiagonal Omega, O(N (n^3 + m^3 + ell)) per iteration.

    _trace is a testing hook: when a list is passed, per-iteration Newton
    data (the Omega object and slack/multiplier copies) is appended.
    """
    z = _check_z(model, z)
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    if spec.process == "l2" and spec.meas == "l2":
        # standardization constants are 1, so this is exactly the Gaussian case
        return smooth_quadratic(model, z)

    N, n, m = model.N, model.n, model.m
    cv = _inside_scale(spec.meas, spec.meas_params) if spec.weight_mode == "standardized" else 1.0
    cw = _inside_scale(spec.process, spec.process_params) if spec.weight_mode == "standardized" else 1.0
    vpen = _block_atom(spec.meas, m, spec.meas_params, cv)
    wpen = _block_atom(spec.process, n, spec.process_params, cw)
    bv = _Blocks(vpen, N)
    bw = _Blocks(wpen, N)

    Qis = np.stack([sym_inv_sqrt(model.Q[k]) for k in range(N)])
    Ris = np.stack([sym_inv_sqrt(model.R[k]) for k in range(N)])
    # row coefficient blocks: V rows_k = Dm_k y_k + bv_k,
    # W rows_k = E_k y_k - F_k y_{k-1} + bw_k
    Dm = np.einsum("ij,kjl,klp->kip", vpen.B, Ris, model.H)   # (N, dv, n)
    E = np.einsum("ij,kjl->kil", wpen.B, Qis)                 # (N, dw, n)
    F = np.zeros_like(E)
    F[1:] = np.einsum("kij,kjl->kil", E[1:], model.G[1:])
    b_v = vpen.b - np.einsum("ij,kjl,kl->ki", vpen.B, Ris, z)
    b_w = np.tile(wpen.b, (N, 1))
    b_w[0] -= E[0] @ model.x0

    def By(y):
        v = np.einsum("kij,kj->ki", Dm, y)
        w = np.einsum("kij,kj->ki", E, y)
        w[1:] -= np.einsum("kij,kj->ki", F[1:], y[:-1])
        return v, w

    def BTu(uv, uw):
        out = np.einsum("kij,ki->kj", Dm, uv) + np.einsum("kij,ki->kj", E, uw)
        out[:-1] -= np.einsum("kij,ki->kj", F[1:], uw[1:])
        return out

    # -- feasible start, blockwise ------------------------------------------
    uv0 = _atom_interior(vpen)
    uw0 = _atom_interior(wpen)
    uv = np.tile(uv0, (N, 1))
    uw = np.tile(uw0, (N, 1))
    cls_v = bv.classes()
    cls_w = bw.classes()
    free_v = [i for i, c in enumerate(cls_v) if c == "free"]
    free_w = [i for i, c in enumerate(cls_w) if c == "free"]
    if any(c in ("up", "dn") for c in cls_v + cls_w):
        raise NoInteriorFound("one-sided dual bounds are not supported blockwise")
    y = np.zeros((N, n))
    if free_v or free_w:
        tv = (vpen.M @ uv0 - vpen.b)[free_v] if free_v else np.zeros(0)
        tw0 = wpen.M @ uw0 - wpen.b
        for k in range(N):
            rows = []
            rhs = []
            if free_w:
                rows.append(E[k][free_w])
                extra = (F[k] @ y[k - 1])[free_w] if k else np.zeros(len(free_w))
                base = tw0[free_w] + extra
                if k == 0:
                    base = base + (E[0] @ model.x0)[free_w]
                rhs.append(base)
            if free_v:
                rows.append(Dm[k][free_v])
                rhs.append(tv + np.einsum("ij,jl,l->i", vpen.B[free_v], Ris[k], z[k]))
            Ak = np.vstack(rows)
            bk = np.concatenate(rhs)
            yk, *_ = np.linalg.lstsq(Ak, bk, rcond=None)
            if np.linalg.norm(Ak @ yk - bk, np.inf) > 1e-8 * (1.0 + np.abs(bk).max()):
                raise NoInteriorFound(
                    f"rowless block at step {k} is not exactly solvable")
            y[k] = yk
    Byv, Byw = By(y)
    wv = b_v + Byv - uv @ vpen.M.T
    ww = b_w + Byw - uw @ wpen.M.T

    def _mults(blocks: _Blocks, w: np.ndarray, cls):
        q = np.zeros((N, blocks.ell))
        rows = blocks.pen.rows
        for i, c in enumerate(cls):
            if c == "free":
                if np.abs(w[:, i]).max() > 1e-8:
                    raise NoInteriorFound("free coordinate residual nonzero")
            else:
                q[:, rows.up_row[i]] = 1.0 + np.maximum(w[:, i], 0.0)
                q[:, rows.dn_row[i]] = 1.0 - np.minimum(w[:, i], 0.0)
        return q

    qv = _mults(bv, wv, cls_v)
    qw = _mults(bw, ww, cls_w)
    sv = bv.a - uv @ bv.A
    sw = bw.a - uw @ bw.A
    if (bv.ell and (sv.min() <= 0 or qv.min() <= 0)) or \
            (bw.ell and (sw.min() <= 0 or qw.min() <= 0)):
        raise NoInteriorFound("blockwise start is not strictly interior")

    # -- path following -------------------------------------------------------
    stats = SolveStats()
    ell_total = N * (bv.ell + bw.ell)
    fixed = opts.fixed_iterations
    budget = fixed if fixed is not None else opts.max_iter
    converged = False
    for it in range(budget):
        state = (sv, sw, qv, qw, uv, uw, y)
        if not all(np.all(np.isfinite(t)) for t in state):
            raise NumericalBreakdown("non-finite iterate")
        gap_num = float((sv * qv).sum() + (sw * qw).sum())
        gap = gap_num / ell_total
        comp = max((sv * qv).max(initial=0.0), (sw * qw).max(initial=0.0))
        Byv, Byw = By(y)
        f3v = Byv - uv @ vpen.M.T - qv @ bv.A.T + b_v
        f3w = Byw - uw @ wpen.M.T - qw @ bw.A.T + b_w
        f4 = BTu(uv, uw)
        f1v = sv + uv @ bv.A - bv.a
        f1w = sw + uw @ bw.A - bw.a
        aff = max(np.abs(f1v).max(initial=0.0), np.abs(f1w).max(initial=0.0),
                  np.abs(f3v).max(), np.abs(f3w).max(), np.abs(f4).max())
        if fixed is None and gap <= opts.gap_tol and comp <= opts.comp_tol \
                and aff <= opts.res_tol:
            converged = True
            break
        gamma = opts.sigma * gap
        stats.gamma_trajectory.append(gamma)

        f2v = qv * sv - gamma
        f2w = qw * sw - gamma
        Tv = _build_T(bv, sv, qv)
        Tw = _build_T(bw, sw, qw)

        gv = -f3v + np.einsum("il,kl->ki", bv.A, (-f2v + qv * f1v) / sv) \
            if bv.ell else -f3v
        gw = -f3w + np.einsum("il,kl->ki", bw.A, (-f2w + qw * f1w) / sw) \
            if bw.ell else -f3w
        hv = np.linalg.solve(Tv, gv[..., None])[..., 0]
        hw = np.linalg.solve(Tw, gw[..., None])[..., 0]

        Pv = np.linalg.solve(Tv, Dm)                       # (N, dv, n)
        Pw = np.linalg.solve(Tw, E)                        # (N, dw, n)
        PwF = np.zeros_like(Pw)
        PwF[1:] = np.linalg.solve(Tw[1:], F[1:])
        # W row k couples (y_k, y_{k-1}) with coefficients (E_k, -F_k), so
        # Omega block (k, k-1) = -E_k^T Tw_k^{-1} F_k
        diag = np.einsum("kij,kil->kjl", Dm, Pv) + np.einsum("kij,kil->kjl", E, Pw)
        diag[:-1] += np.einsum("kij,kil->kjl", F[1:], PwF[1:])
        sub = -np.einsum("kij,kil->kjl", E[1:], PwF[1:])
        omega = BlockTridiagonal(diag, sub)
        if _trace is not None:
            _trace.append({"omega": omega, "sv": sv.copy(), "sw": sw.copy(),
                           "qv": qv.copy(), "qw": qw.copy()})

        rhs = -f4 + np.einsum("kij,ki->kj", Dm, hv) + np.einsum("kij,ki->kj", E, hw)
        rhs[:-1] -= np.einsum("kij,ki->kj", F[1:], hw[1:])
        dy = block_tridiag_solve(omega, rhs.reshape(-1)).reshape(N, n)

        Bdv, Bdw = By(dy)
        duv = np.linalg.solve(Tv, (Bdv - gv)[..., None])[..., 0]
        duw = np.linalg.solve(Tw, (Bdw - gw)[..., None])[..., 0]
        dsv = -f1v - duv @ bv.A
        dsw = -f1w - duw @ bw.A
        dqv = (-f2v - qv * dsv) / sv
        dqw = (-f2w - qw * dsw) / sw

        alpha = 1.0
        for vv, dv_ in ((sv, dsv), (qv, dqv), (sw, dsw), (qw, dqw)):
            neg = dv_ < 0
            if np.any(neg):
                alpha = min(alpha, opts.boundary_frac *
                            float(np.min(-vv[neg] / dv_[neg])))
        sv = sv + alpha * dsv
        qv = qv + alpha * dqv
        sw = sw + alpha * dsw
        qw = qw + alpha * dqw
        uv = uv + alpha * duv
        uw = uw + alpha * duw
        y = y + alpha * dy
        stats.iterations += 1
    else:
        if fixed is None:
            raise IterationLimit(f"smoother: no convergence in {budget} iterations")

    stats.final_gap = float((sv * qv).sum() + (sw * qw).sum())
    Byv, Byw = By(y)
    f3v = Byv - uv @ vpen.M.T - qv @ bv.A.T + b_v
    f3w = Byw - uw @ wpen.M.T - qw @ bw.A.T + b_w
    f1v = sv + uv @ bv.A - bv.a
    f1w = sw + uw @ bw.A - bw.a
    comp = max((sv * qv).max(initial=0.0), (sw * qw).max(initial=0.0))
    stats.final_kkt_inf = max(
        np.abs(f1v).max(initial=0.0), np.abs(f1w).max(initial=0.0),
        np.abs(f3v).max(), np.abs(f3w).max(),
        np.abs(BTu(uv, uw)).max(), comp)
    stats.wall_time = time.perf_counter() - t0

    rw, rv = _residuals(model, z, y)
    arg = cv * np.einsum("kij,kj->ki", Ris, rv)
    return SmoothResult(y, rw, rv, arg, stats, spec)


def support_vectors(result: SmoothResult, eps: float, tol: float = 1e-6) -> np.ndarray:
    """Indices k whose standardized measurement residual reaches the
    epsilon tube boundary (|arg| >= eps - tol in some component)."""
    if result.spec is None or result.spec.meas not in ("vapnik", "silf"):
        raise NotEpsilonLoss("measurement loss is not epsilon-insensitive")
    hits = np.abs(result.meas_arg).max(axis=1) >= eps - tol
    return np.flatnonzero(hits)


def build_spline_model(dt: float, lam2: float, N: int, *,
                       meas_var: float = 1.0, f0: float = 1.0,
                       diffuse_prior: bool = False) -> StateSpaceModel:
    """Integrated-Wiener-process model behind cubic smoothing splines:

        G_k = [[1, 0], [dt, 1]],  H_k = [0, 1],
        Q_k = lam2 [[dt, dt^2/2], [dt^2/2, dt^3/3]],

    with state (derivative, level) and known initial level f0.  With
    diffuse_prior the first process covariance is inflated by 1e6."""
    if dt <= 0 or lam2 <= 0:
        raise BadKind("dt and lam2 must be positive")
    G1 = np.array([[1.0, 0.0], [dt, 1.0]])
    H1 = np.array([[0.0, 1.0]])
    Q1 = lam2 * np.array([[dt, dt * dt / 2.0], [dt * dt / 2.0, dt ** 3 / 3.0]])
    G = np.tile(G1, (N, 1, 1))
    H = np.tile(H1, (N, 1, 1))
    Q = np.tile(Q1, (N, 1, 1))
    if diffuse_prior:
        Q[0] = Q1 * 1e6
    R = np.tile(np.array([[float(meas_var)]]), (N, 1, 1))
    return StateSpaceModel(G, H, Q, R, np.array([0.0, f0]))


def stack_problem(model: StateSpaceModel, z, spec: SmootherSpec) -> PlqProblem:
    """Dense assembly of the same smoothing problem for the generic solver."""
    z = _check_z(model, z)
    N, n, m = model.N, model.n, model.m
    Gd = np.eye(N * n)
    for k in range(1, N):
        Gd[k * n:(k + 1) * n, (k - 1) * n:k * n] = -model.G[k]
    Hd = np.zeros((N * m, N * n))
    Qd = np.zeros((N * n, N * n))
    Rd = np.zeros((N * m, N * m))
    for k in range(N):
        Hd[k * m:(k + 1) * m, k * n:(k + 1) * n] = model.H[k]
        Qd[k * n:(k + 1) * n, k * n:(k + 1) * n] = model.Q[k]
        Rd[k * m:(k + 1) * m, k * m:(k + 1) * m] = model.R[k]
    mu = np.zeros(N * n)
    mu[:n] = model.x0
    V = make_catalogue(spec.meas, dim=N * m, **spec.meas_params)
    W = make_catalogue(spec.process, dim=N * n, **spec.process_params)
    if spec.weight_mode == "standardized":
        cv = _inside_scale(spec.meas, spec.meas_params)
        cw = _inside_scale(spec.process, spec.process_params)
        if cv != 1.0:
            V = precompose_affine(V, cv * np.eye(N * m))
        if cw != 1.0:
            W = precompose_affine(W, cw * np.eye(N * n))
    return assemble_problem(V, W, Hd, Gd, Rd, Qd, z.reshape(-1), mu)


def model_from_dict(spec: dict) -> StateSpaceModel:
    """Model from JSON: either {"spline": {"dt":..., "lambda2":..., "N":...}}
    or explicit block lists {"G": [...], "H": [...], "Q": [...], "R": [...],
    "x0": [...]} (single blocks are tiled over N)."""
    if "spline" in spec:
        s = spec["spline"]
        return build_spline_model(
            float(s["dt"]), float(s["lambda2"]), int(s["N"]),
            meas_var=float(s.get("meas_var", 1.0)),
            f0=float(s.get("f0", 1.0)),
            diffuse_prior=bool(s.get("diffuse_prior", False)))
    try:
        N = int(spec["N"])

        def blocks(key):
            arr = np.asarray(spec[key], dtype=float)
            if arr.ndim == 2:
                arr = np.tile(arr, (N, 1, 1))
            return arr

        return StateSpaceModel(blocks("G"), blocks("H"), blocks("Q"),
                               blocks("R"), np.asarray(spec["x0"], dtype=float))
    except KeyError as exc:
        raise BadKind(f"model spec missing field {exc}") from exc
