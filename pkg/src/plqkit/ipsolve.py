"""Path-following interior-point solver for min_y rho(U, M, b, B; y).

With the polyhedral rows U = {u : A^T u <= a}, optimality of the
minimization is the square system

    F_gamma(s, q, u, y) = [ s + A^T u - a
                            D(q) D(s) 1 - gamma 1
                            B y - M u - A q + b
                            B^T u ]                       = 0 at gamma = 0,

and the solver damps Newton steps on F_gamma while driving gamma down
through gamma = sigma s^T q / ell.  Each Newton system is reduced by block
elimination to

    T  = M + A D(q) D(s)^{-1} A^T          (m x m)
    Omega = B^T T^{-1} B                   (n x n, SPD)

followed by back-substitution.  Iterates stay strictly interior (s, q > 0)
via the fraction-to-boundary rule; starts come from structured feasible
constructions or a generic heuristic ladder.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import ipcore
from .errors import (
    BadParameter,
    ConditionViolated,
    DimensionMismatch,
    IterationLimit,
    NoInteriorFound,
    NumericalBreakdown,
    SingularG,
    SingularT,
)
from .linalg import rank_check, sym_inv_sqrt
from .penalties import (
    IntervalProduct,
    QsPenalty,
    check_ip_condition,
    evaluate,
    make_penalty,
    penalty_from_dict,
)

__all__ = [
    "PlqProblem",
    "KktState",
    "SolveStats",
    "SolveOptions",
    "assemble_problem",
    "kkt_residual",
    "newton_step",
    "init_strictly_feasible",
    "solve",
    "objective_value",
    "problem_from_dict",
]

_QFLOOR = 1e-2


@dataclass
class SolveOptions:
    sigma: float = 0.1                 # centering parameter
    boundary_frac: float = 0.995       # fraction-to-boundary
    gap_tol: float = 1e-10             # on s^T q / ell
    comp_tol: float = 5e-8             # on max_i s_i q_i
    res_tol: float = 1e-8              # on affine residual inf-norms
    max_iter: int = 200
    fixed_iterations: int | None = None
    keep_iterates: bool = False


@dataclass
class KktState:
    s: np.ndarray
    q: np.ndarray
    u: np.ndarray
    y: np.ndarray
    gamma: float = 0.0

    def copy(self) -> "KktState":
        return KktState(self.s.copy(), self.q.copy(), self.u.copy(),
                        self.y.copy(), self.gamma)

    @property
    def duality_measure(self) -> float:
        return float(self.s @ self.q) / max(len(self.s), 1)


@dataclass
class SolveStats:
    iterations: int = 0
    final_gap: float = 0.0             # s^T q at exit
    final_kkt_inf: float = 0.0         # ||F_0||_inf at exit
    gamma_trajectory: list = field(default_factory=list)
    wall_time: float = 0.0
    iterates: list = field(default_factory=list)


@dataclass
class AssemblyInfo:
    """Provenance of a two-term problem min V(Hy - z; R) + W(Gy - mu; Q)."""

    v_pen: QsPenalty
    w_pen: QsPenalty
    H: np.ndarray
    G: np.ndarray
    R_is: np.ndarray       # R^{-1/2}
    Q_is: np.ndarray       # Q^{-1/2}
    z: np.ndarray
    mu: np.ndarray


class PlqProblem:
    """An unconstrained PLQ minimization through its assembled penalty."""

    def __init__(self, penalty: QsPenalty, provenance: AssemblyInfo | None = None):
        if not check_ip_condition(penalty):
            raise ConditionViolated("null(M) & null(A^T) != {0}")
        self.penalty = penalty
        self.provenance = provenance

    @property
    def m(self) -> int:
        return self.penalty.m

    @property
    def n(self) -> int:
        return self.penalty.n

    @property
    def ell(self) -> int:
        return self.penalty.ell

    @classmethod
    def from_penalty(cls, penalty: QsPenalty) -> "PlqProblem":
        return cls(penalty)


def _affine_piece(pen: QsPenalty, S: np.ndarray, t: np.ndarray) -> QsPenalty:
    # composition without the per-piece injectivity check: only the stacked
    # B of the assembled problem needs a trivial null space
    closed = None
    if pen.closed_eval is not None:
        f = pen.closed_eval
        closed = lambda y, f=f, S=S, t=t: f(S @ np.atleast_1d(np.asarray(y, float)) + t)
    return QsPenalty(pen.U, pen.M, pen.b + pen.B @ t, pen.B @ S,
                     kind=pen.kind, params=dict(pen.params), closed_eval=closed)


def assemble_problem(V: QsPenalty, W: QsPenalty, H, G, R, Q, z, mu) -> PlqProblem:
    """Stack V(R^{-1/2}(Hy - z)) + W(Q^{-1/2}(Gy - mu)) into one penalty:

        U = U_v x U_w,  M = diag(M_v, M_w),
        b = (b_v - B_v R^{-1/2} z ; b_w - B_w Q^{-1/2} mu),
        B = [B_v R^{-1/2} H ; B_w Q^{-1/2} G].
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    n = G.shape[0]
    if G.shape != (n, n):
        raise DimensionMismatch(f"G must be square, got {G.shape}")
    if rank_check(G) < n:
        raise SingularG("G is numerically singular")
    if H.shape[1] != n or V.n != H.shape[0] or W.n != n:
        raise DimensionMismatch(
            f"H {H.shape}, V input {V.n}, W input {W.n}, state dim {n}")
    if z.shape[0] != H.shape[0] or mu.shape[0] != n:
        raise DimensionMismatch("z or mu length mismatch")
    R_is = sym_inv_sqrt(np.atleast_2d(np.asarray(R, dtype=float)))
    Q_is = sym_inv_sqrt(np.atleast_2d(np.asarray(Q, dtype=float)))

    vp = _affine_piece(V, R_is @ H, -R_is @ z)
    wp = _affine_piece(W, Q_is @ G, -Q_is @ mu)
    U = vp.U.cross(wp.U)
    M = np.zeros((vp.m + wp.m, vp.m + wp.m))
    M[:vp.m, :vp.m] = vp.M
    M[vp.m:, vp.m:] = wp.M
    b = np.concatenate([vp.b, wp.b])
    B = np.vstack([vp.B, wp.B])
    closed = None
    if vp.closed_eval is not None and wp.closed_eval is not None:
        f1, f2 = vp.closed_eval, wp.closed_eval
        closed = lambda y: f1(y) + f2(y)
    total = make_penalty(U, M, b, B, closed_eval=closed)
    info = AssemblyInfo(V, W, H, G, R_is, Q_is, z, mu)
    return PlqProblem(total, provenance=info)


# -- residuals and Newton step -------------------------------------------------

def kkt_residual(p: PlqProblem, st: KktState, gamma: float) -> np.ndarray:
    """Stacked residual (F1; F2; F3; F4) of the relaxed optimality map."""
    pen = p.penalty
    A, a = pen.rows.A, pen.rows.a
    f1 = st.s + A.T @ st.u - a
    f2 = st.q * st.s - gamma
    f3 = pen.B @ st.y - pen.M @ st.u - A @ st.q + pen.b
    f4 = pen.B.T @ st.u
    return np.concatenate([f1, f2, f3, f4])


def _affine_residual_inf(p: PlqProblem, st: KktState) -> float:
    pen = p.penalty
    A, a = pen.rows.A, pen.rows.a
    r = 0.0
    if pen.ell:
        r = np.linalg.norm(st.s + A.T @ st.u - a, np.inf)
    r = max(r, np.linalg.norm(pen.B @ st.y - pen.M @ st.u - A @ st.q + pen.b, np.inf))
    r = max(r, np.linalg.norm(pen.B.T @ st.u, np.inf))
    return float(r)


def newton_step(p: PlqProblem, st: KktState, gamma: float):
    """Newton direction on F_gamma via the T / Omega block elimination."""
    pen = p.penalty
    A, a = pen.rows.A, pen.rows.a
    B, M, b = pen.B, pen.M, pen.b
    s, q, u, y = st.s, st.q, st.u, st.y

    f1 = s + A.T @ u - a
    f2 = q * s - gamma
    f3 = B @ y - M @ u - A @ q + b
    f4 = B.T @ u

    w = q / s
    T = M + (A * w) @ A.T
    try:
        cf = sla.cho_factor(T, lower=True, check_finite=False)
        solve_T = lambda rhs: sla.cho_solve(cf, rhs, check_finite=False)
    except sla.LinAlgError:
        try:
            lu = sla.lu_factor(T, check_finite=False)
        except sla.LinAlgError as exc:
            raise SingularT("reduced Newton matrix T is singular") from exc
        solve_T = lambda rhs: sla.lu_solve(lu, rhs, check_finite=False)

    g = -f3 + A @ ((-f2 + q * f1) / s) if pen.ell else -f3
    TiB = solve_T(B)
    Tig = solve_T(g)
    omega = B.T @ TiB
    try:
        cfo = sla.cho_factor(omega, lower=True, check_finite=False)
        dy = sla.cho_solve(cfo, -f4 + B.T @ Tig, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularT("reduced matrix B^T T^{-1} B is singular") from exc
    du = TiB @ dy - Tig
    ds = -f1 - A.T @ du
    dq = (-f2 - q * ds) / s
    return ds, dq, du, dy


# -- feasible starts -------------------------------------------------------------

def _row_classes(U: IntervalProduct):
    """Coordinate classes of the dual box: 'free', 'double', 'up', 'dn'."""
    classes = []
    for lo, hi in zip(U.lower, U.upper):
        flo, fhi = np.isfinite(lo), np.isfinite(hi)
        if flo and fhi:
            classes.append("double")
        elif fhi:
            classes.append("up")
        elif flo:
            classes.append("dn")
        else:
            classes.append("free")
    return classes


def _atom_interior_nullBT(pen: QsPenalty) -> np.ndarray | None:
    """Per-atom interior point of U with B^T u = 0, for separable catalogue
    penalties: midpoint when the atom's B columns cancel, zero otherwise."""
    if pen.kind is None:
        # not a catalogue penalty; try the whole-U shortcut
        zero = np.zeros(pen.m)
        if pen.U.strictly_contains(zero):
            return zero
        return None
    mid = pen.U.midpoint()
    if np.linalg.norm(pen.B.T @ mid, np.inf) <= 1e-12 and pen.U.strictly_contains(mid):
        return mid
    zero = np.zeros(pen.m)
    if pen.U.strictly_contains(zero):
        return zero
    return None


def _solve_free_rows(pen: QsPenalty, u: np.ndarray, classes: list[str]):
    """Pick y zeroing b + By - Mu on rowless coordinates (exactly), and
    aiming at +-1 on one-sided coordinates."""
    target = pen.M @ u - pen.b
    rows, rhs, hard = [], [], []
    for i, c in enumerate(classes):
        if c == "free":
            rows.append(pen.B[i])
            rhs.append(target[i])
            hard.append(i)
        elif c == "up":
            rows.append(pen.B[i])
            rhs.append(target[i] + 1.0)
        elif c == "dn":
            rows.append(pen.B[i])
            rhs.append(target[i] - 1.0)
    if not rows:
        return np.zeros(pen.n), hard
    Bsub = np.vstack(rows)
    y, *_ = np.linalg.lstsq(Bsub, np.asarray(rhs), rcond=None)
    return y, hard


def _assemble_state(pen: QsPenalty, u: np.ndarray, y: np.ndarray) -> KktState:
    classes = _row_classes(pen.U)
    rows = pen.rows
    w = pen.b + pen.B @ y - pen.M @ u
    q = np.zeros(pen.ell)
    for i, c in enumerate(classes):
        if c == "free":
            if abs(w[i]) > 1e-9:
                raise NoInteriorFound(
                    f"rowless coordinate {i} has residual {w[i]:.2e}")
        elif c == "double":
            q[rows.up_row[i]] = 1.0 + max(w[i], 0.0)
            q[rows.dn_row[i]] = 1.0 - min(w[i], 0.0)
        elif c == "up":
            if w[i] < _QFLOOR:
                raise NoInteriorFound(f"one-sided coordinate {i} needs w > 0")
            q[rows.up_row[i]] = w[i]
        else:  # dn
            if w[i] > -_QFLOOR:
                raise NoInteriorFound(f"one-sided coordinate {i} needs w < 0")
            q[rows.dn_row[i]] = -w[i]
    s = rows.a - rows.A.T @ u
    if pen.ell and (s.min() <= 0 or q.min() <= 0):
        raise NoInteriorFound("constructed point is not strictly interior")
    return KktState(s=s, q=q, u=u.copy(), y=np.asarray(y, dtype=float).copy())


def _structured_init(p: PlqProblem) -> KktState:
    """Feasible point for assembled two-term problems, built blockwise.

    For the l1 -- l2 pair this reproduces u = 0, y = G^{-1} mu, s = 1,
    q = 1 +- clipped residual parts; for Vapnik -- Huber it reproduces the
    half-unit duals, kappa slacks, and shifted multipliers.
    """
    info = p.provenance
    if info is None:
        raise NoInteriorFound("problem has no assembly provenance")
    uv = _atom_interior_nullBT(info.v_pen)
    uw = _atom_interior_nullBT(info.w_pen)
    if uv is None or uw is None:
        raise NoInteriorFound("no blockwise interior dual with B^T u = 0")
    u = np.concatenate([uv, uw])
    pen = p.penalty
    classes = _row_classes(pen.U)
    if any(c in ("up", "dn") for c in classes):
        raise NoInteriorFound("one-sided dual bounds need the generic ladder")
    free_idx = [i for i, c in enumerate(classes) if c == "free"]
    if free_idx:
        target = (pen.M @ u - pen.b)[free_idx]
        Bf = pen.B[free_idx]
        y, *_ = np.linalg.lstsq(Bf, target, rcond=None)
        if np.linalg.norm(Bf @ y - target, np.inf) > 1e-9 * (1.0 + np.abs(target).max()):
            raise NoInteriorFound("rowless block is not exactly solvable")
    else:
        y = np.zeros(pen.n)
    return _assemble_state(pen, u, y)


def _chebyshev_interior(pen: QsPenalty) -> np.ndarray:
    """Max-margin interior point of U restricted to null(B^T), by LP."""
    A, a = pen.rows.A, pen.rows.a
    nsv = sla.null_space(pen.B.T)
    if nsv.shape[1] == 0:
        raise NoInteriorFound("null(B^T) is trivial; no dual freedom left")
    nz = nsv.shape[1]
    scale = float(np.abs(a).max()) if a.size else 1.0
    box = 10.0 * max(scale, 1.0)
    # variables (w, delta): maximize delta s.t. (A^T Z) w + delta <= a, |w| <= box
    AtZ = A.T @ nsv
    Gc = np.vstack([
        np.hstack([AtZ, np.ones((AtZ.shape[0], 1))]),
        np.hstack([np.eye(nz), np.zeros((nz, 1))]),
        np.hstack([-np.eye(nz), np.zeros((nz, 1))]),
    ])
    h = np.concatenate([a, np.full(2 * nz, box)])
    c = np.zeros(nz + 1)
    c[-1] = 1.0
    res = ipcore.maximize_qp(c, None, Gc.T, h, u0=np.zeros(nz + 1))
    if res.unbounded or res.value <= 1e-9 * max(scale, 1.0):
        raise NoInteriorFound("U has no interior point on null(B^T)")
    return nsv @ res.u[:-1]


def _generic_init(p: PlqProblem) -> KktState:
    """Heuristic ladder: zero dual, projected midpoint anchor, then a
    Chebyshev-style max-margin LP on null(B^T)."""
    pen = p.penalty
    classes = _row_classes(pen.U)
    candidates = []
    zero = np.zeros(pen.m)
    if pen.U.strictly_contains(zero):
        candidates.append(zero)
    mid = pen.U.midpoint()
    bt = pen.B.T @ mid
    if np.linalg.norm(bt, np.inf) > 1e-12:
        corr, *_ = np.linalg.lstsq(pen.B.T, bt, rcond=None)
        mid = mid - corr
    if pen.U.strictly_contains(mid):
        candidates.append(mid)

    last_err: Exception | None = None
    for u in candidates:
        try:
            y, _ = _solve_free_rows(pen, u, classes)
            return _assemble_state(pen, u, y)
        except NoInteriorFound as exc:
            last_err = exc
    try:
        u = _chebyshev_interior(pen)
        y, _ = _solve_free_rows(pen, u, classes)
        return _assemble_state(pen, u, y)
    except NoInteriorFound as exc:
        raise NoInteriorFound(
            f"generic initializer failed: {exc}") from (last_err or exc)


def init_strictly_feasible(p: PlqProblem, strategy: str = "generic") -> KktState:
    """Strictly feasible start (s, q > 0, affine equations exact).

    l1_l2 and vapnik_huber follow the structured blockwise constructions
    for assembled problems of those shapes; generic first tries the
    structured recipe when provenance exists, then the heuristic ladder.
    """
    if strategy in ("l1_l2", "vapnik_huber"):
        info = p.provenance
        if info is None:
            raise BadParameter(f"strategy {strategy!r} needs an assembled problem")
        kinds = (info.v_pen.kind, info.w_pen.kind)
        want = ("l1", "l2") if strategy == "l1_l2" else ("vapnik", "huber")
        if kinds != want:
            raise BadParameter(f"strategy {strategy!r} does not match kinds {kinds}")
        return _structured_init(p)
    if strategy != "generic":
        raise BadParameter(f"unknown strategy {strategy!r}")
    if p.provenance is not None:
        try:
            return _structured_init(p)
        except NoInteriorFound:
            pass
    return _generic_init(p)


# -- main loop -------------------------------------------------------------------

def _step_length(v: np.ndarray, dv: np.ndarray, frac: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, frac * float(np.min(-v[neg] / dv[neg])))


def solve(p: PlqProblem, opts: SolveOptions | None = None,
          start: KktState | None = None):
    """Minimize the assembled penalty; returns (y, u, SolveStats)."""
    opts = opts or SolveOptions()
    pen = p.penalty
    t0 = time.perf_counter()
    stats = SolveStats()

    if pen.ell == 0:
        # equality KKT system: B y - M u + b = 0, B^T u = 0, M invertible
        Mi = np.linalg.inv(pen.M)
        omega = pen.B.T @ Mi @ pen.B
        y = np.linalg.solve(omega, -pen.B.T @ (Mi @ pen.b))
        u = Mi @ (pen.b + pen.B @ y)
        st = KktState(np.zeros(0), np.zeros(0), u, y)
        stats.iterations = 1
        stats.final_kkt_inf = float(np.linalg.norm(kkt_residual(p, st, 0.0), np.inf))
        stats.wall_time = time.perf_counter() - t0
        return y, u, stats

    st = start.copy() if start is not None else init_strictly_feasible(p)
    if st.s.min() <= 0 or st.q.min() <= 0:
        raise NoInteriorFound("start is not strictly interior")

    fixed = opts.fixed_iterations
    budget = fixed if fixed is not None else opts.max_iter
    converged = False
    for it in range(budget):
        if not (np.all(np.isfinite(st.s)) and np.all(np.isfinite(st.q))
                and np.all(np.isfinite(st.u)) and np.all(np.isfinite(st.y))):
            raise NumericalBreakdown("non-finite iterate")
        gap = st.duality_measure
        comp = float(np.max(st.s * st.q))
        if fixed is None and gap <= opts.gap_tol and comp <= opts.comp_tol \
                and _affine_residual_inf(p, st) <= opts.res_tol:
            converged = True
            break
        gamma = opts.sigma * gap
        st.gamma = gamma
        stats.gamma_trajectory.append(gamma)
        if opts.keep_iterates:
            stats.iterates.append(st.copy())
        ds, dq, du, dy = newton_step(p, st, gamma)
        alpha = min(_step_length(st.s, ds, opts.boundary_frac),
                    _step_length(st.q, dq, opts.boundary_frac))
        st.s = st.s + alpha * ds
        st.q = st.q + alpha * dq
        st.u = st.u + alpha * du
        st.y = st.y + alpha * dy
        stats.iterations += 1
    else:
        if fixed is None:
            raise IterationLimit(
                f"no convergence in {opts.max_iter} iterations "
                f"(gap {st.duality_measure:.2e})")

    stats.final_gap = float(st.s @ st.q)
    stats.final_kkt_inf = float(np.linalg.norm(kkt_residual(p, st, 0.0), np.inf))
    stats.wall_time = time.perf_counter() - t0
    if opts.keep_iterates:
        stats.iterates.append(st.copy())
    return st.y, st.u, stats


def objective_value(p: PlqProblem, y) -> float:
    return evaluate(p.penalty, y)


# -- JSON interface ---------------------------------------------------------------

def _load_matrix(entry, base_dir: str = "."):
    import os

    if isinstance(entry, str):
        return np.loadtxt(os.path.join(base_dir, entry), delimiter=",", ndmin=2)
    return np.asarray(entry, dtype=float)


def problem_from_dict(spec: dict, base_dir: str = ".") -> PlqProblem:
    """Assemble a problem from its JSON form:

    {"V": {...penalty...}, "W": {...}, "H": [[...]] or "h.csv",
     "G": ..., "R": ..., "Q": ..., "z": [...], "mu": [...]}
    """
    try:
        V = penalty_from_dict(spec["V"])
        W = penalty_from_dict(spec["W"])
        H = _load_matrix(spec["H"], base_dir)
        G = _load_matrix(spec["G"], base_dir)
        R = _load_matrix(spec["R"], base_dir)
        Q = _load_matrix(spec["Q"], base_dir)
        z = np.asarray(spec["z"], dtype=float).reshape(-1)
        mu = np.asarray(spec["mu"], dtype=float).reshape(-1)
    except KeyError as exc:
        raise BadParameter(f"problem spec missing field {exc}") from exc
    return assemble_problem(V, W, H, G, R, Q, z, mu)
