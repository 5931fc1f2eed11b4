"""Benchmark suites and experiments: problem generators, the ADMM-vs-IP
comparison table, the noisy-oscillator simulation, cross-validation, and
timing/scaling runs.

All generators are seeded (numpy default_rng / PCG64) and all CSV output
uses 17 significant digits, so identical configs reproduce byte-identical
files on one platform.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import admm
from .errors import BadParameter
from .ipsolve import PlqProblem, SolveOptions, solve
from .kalman import SmootherSpec, StateSpaceModel, smooth_plq, support_vectors
from .densities import sample_gaussian_mixture
from .penalties import (
    IntervalProduct,
    QsPenalty,
    make_catalogue,
    make_penalty,
    scale_penalty,
)

__all__ = [
    "BenchConfig",
    "CvGrid",
    "gen_matrix",
    "lasso_problem",
    "svm_problem",
    "robust_lasso_problem",
    "general_l1l1_problem",
    "run_table1_suite",
    "simulate_expsin8",
    "spline_model_from_times",
    "cross_validate",
    "bench_scaling",
    "write_csv",
]


@dataclass
class BenchConfig:
    suite: str = "table1"
    seed: int = 0
    out_dir: str = "."
    lasso_shape: tuple = (150, 500)
    robust_shape: tuple = (100, 400)
    svm_shape: tuple = (200, 40)
    l1l1_shape: tuple = (150, 200, 100)    # A rows, cols, C rows
    cond_targets: tuple = (5.0, 1330.0)
    admm_outer_cap: int = 800
    smooth_outer_cap: int = 300            # ADMM/L-BFGS rows (inner solves are costly)
    workers: int = 1
    solver: SolveOptions = field(default_factory=SolveOptions)


@dataclass
class CvGrid:
    lam2_values: np.ndarray
    eps_values: np.ndarray
    train_frac: float = 0.65
    seed: int = 0

    def __post_init__(self):
        self.lam2_values = np.atleast_1d(np.asarray(self.lam2_values, dtype=float))
        self.eps_values = np.atleast_1d(np.asarray(self.eps_values, dtype=float))
        if self.lam2_values.size == 0 or self.eps_values.size == 0:
            raise BadParameter("grid must be nonempty")


def write_csv(path, header: list[str], rows) -> None:
    """CSV with header row, comma delimiter, 17 significant digits."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return f"{v:.17g}"
        return str(v)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def gen_matrix(rows: int, cols: int, cond_target: float, seed: int) -> np.ndarray:
    """Random matrix with prescribed condition number: U diag(sigma) V^T with
    log-spaced singular values from 1 down to 1/cond_target."""
    if cond_target < 1:
        raise BadParameter("cond_target must be >= 1")
    rng = np.random.default_rng(seed)
    k = min(rows, cols)
    qu, _ = np.linalg.qr(rng.standard_normal((rows, k)))
    qv, _ = np.linalg.qr(rng.standard_normal((cols, k)))
    sigma = np.logspace(0.0, -math.log10(cond_target), k)
    return (qu * sigma) @ qv.T


# -- PLQ formulations of the comparison problems --------------------------------

def _quad_datafit(A: np.ndarray, b: np.ndarray) -> QsPenalty:
    """1/2 ||Ax - b||^2 as a QS piece (validated only after stacking)."""
    r = A.shape[0]
    U = IntervalProduct(np.full(r, -np.inf), np.full(r, np.inf))
    closed = lambda x: float(0.5 * np.sum((A @ np.atleast_1d(x) - b) ** 2))
    return QsPenalty(U, np.eye(r), -b, A, closed_eval=closed)


def _pieces_to_problem(pieces: list[QsPenalty]) -> PlqProblem:
    total = pieces[0]
    for p in pieces[1:]:
        U = total.U.cross(p.U)
        M = np.zeros((total.m + p.m, total.m + p.m))
        M[:total.m, :total.m] = total.M
        M[total.m:, total.m:] = p.M
        f1, f2 = total.closed_eval, p.closed_eval
        closed = (lambda y, f1=f1, f2=f2: f1(y) + f2(y)) \
            if (f1 is not None and f2 is not None) else None
        total = QsPenalty(U, M, np.concatenate([total.b, p.b]),
                          np.vstack([total.B, p.B]), closed_eval=closed)
    validated = make_penalty(total.U, total.M, total.b, total.B,
                             closed_eval=total.closed_eval)
    return PlqProblem.from_penalty(validated)


def lasso_problem(A, b, lam: float) -> PlqProblem:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    return _pieces_to_problem([
        _quad_datafit(A, b),
        scale_penalty(make_catalogue("l1", dim=A.shape[1]), lam),
    ])


def svm_problem(A, labels, lam: float) -> PlqProblem:
    """1/2 ||w||^2 + lam sum (1 - d_i(a_i^T w - gamma))_+ over theta = (w, gamma)."""
    A = np.asarray(A, dtype=float)
    d = np.asarray(labels, dtype=float).reshape(-1)
    mrows, k = A.shape
    quad_B = np.hstack([np.eye(k), np.zeros((k, 1))])
    Uq = IntervalProduct(np.full(k, -np.inf), np.full(k, np.inf))
    quad = QsPenalty(Uq, np.eye(k), np.zeros(k), quad_B,
                     closed_eval=lambda th: float(0.5 * np.sum(np.atleast_1d(th)[:k] ** 2)))
    # hinge rows: arg_i = 1 - d_i (a_i^T w - gamma)
    S = np.hstack([-(d[:, None] * A), d[:, None]])
    Uh = IntervalProduct(np.zeros(mrows), np.full(mrows, lam))
    hinge = QsPenalty(Uh, np.zeros((mrows, mrows)), np.ones(mrows), S,
                      closed_eval=lambda th: float(
                          lam * np.maximum(S @ np.atleast_1d(th) + 1.0, 0.0).sum()))
    return _pieces_to_problem([quad, hinge])


def robust_lasso_problem(A, b, lam: float, loss: str = "huber",
                         kappa: float = 1.0) -> PlqProblem:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    r = A.shape[0]
    if loss == "huber":
        U = IntervalProduct(np.full(r, -kappa), np.full(r, kappa))
        M = np.eye(r)
        closed = lambda x: admm.huber_value(A @ np.atleast_1d(x) - b, kappa)
    elif loss == "l1":
        U = IntervalProduct(np.full(r, -1.0), np.full(r, 1.0))
        M = np.zeros((r, r))
        closed = lambda x: float(np.abs(A @ np.atleast_1d(x) - b).sum())
    else:
        raise BadParameter(f"loss must be huber or l1, got {loss!r}")
    fit = QsPenalty(U, M, -b, A, closed_eval=closed)
    return _pieces_to_problem([
        fit,
        scale_penalty(make_catalogue("l1", dim=A.shape[1]), lam),
    ])


def general_l1l1_problem(A, b, C, d, lam: float = 1.0) -> PlqProblem:
    """||Ax - b||_1 + lam ||Cx - d||_1 (requires stacked [A; C] injective)."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)

    def l1_piece(Mat, vec, w):
        # w |Mat x - vec|_1 = sup over u in [-w, w]^r of <u, Mat x - vec>;
        # the weight folds entirely into U since M = 0
        r = Mat.shape[0]
        U = IntervalProduct(np.full(r, -w), np.full(r, w))
        closed = lambda x: float(w * np.abs(Mat @ np.atleast_1d(x) - vec).sum())
        return QsPenalty(U, np.zeros((r, r)), -vec, Mat, closed_eval=closed)

    return _pieces_to_problem([l1_piece(A, b, 1.0), l1_piece(C, d, lam)])


# -- table 1 methodology ----------------------------------------------------------

def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def run_table1_suite(config: BenchConfig):
    """ADMM-vs-IP comparison rows; ObjDiff = f(x_ADMM) - f(x_IP).

    Returns a list of row dicts; use write_csv + table1_header for files.
    Solver failures are recorded in the row's status column.
    """
    rng = np.random.default_rng(config.seed)
    rows = []

    def record(problem_name, prob, admm_fn, admm_iters, inner_cap, extract):
        row = {"problem": problem_name, "status": "ok", "admm_iters": "",
               "admm_inner_cap": inner_cap, "ip_iters": "", "t_admm": "",
               "t_ip": "", "obj_admm": "", "obj_ip": "", "obj_diff": "",
               "kkt_inf": ""}
        try:
            (y_ip, _, stats), t_ip = _timed(lambda: solve(prob, config.solver))
            f_ip = prob.penalty.closed_eval(y_ip)
            row.update(ip_iters=stats.iterations, t_ip=t_ip, obj_ip=f_ip,
                       kkt_inf=stats.final_kkt_inf)
            if admm_fn is not None:
                out, t_admm = _timed(admm_fn)
                x_admm = extract(out)
                trace = out[-1]
                f_admm = prob.penalty.closed_eval(x_admm)
                row.update(admm_iters=trace.iterations, t_admm=t_admm,
                           obj_admm=f_admm, obj_diff=f_admm - f_ip)
        except Exception as exc:                     # noqa: BLE001 — report per row
            row["status"] = f"error:{type(exc).__name__}"
        rows.append(row)

    # Lasso
    mrows, ncols = config.lasso_shape
    A = gen_matrix(mrows, ncols, 10.0, config.seed)
    x_true = np.zeros(ncols)
    idx = rng.choice(ncols, size=ncols // 20, replace=False)
    x_true[idx] = rng.standard_normal(idx.size)
    b = A @ x_true + 0.01 * rng.standard_normal(mrows)
    lam = 0.1 * np.abs(A.T @ b).max()
    prob = lasso_problem(A, b, lam)
    outer = admm.AdmmOptions(max_outer=config.admm_outer_cap)
    record("lasso", prob,
           lambda: admm.admm_lasso(A, b, lam, outer), None, "---",
           lambda out: out[0])

    # SVM on an ill-conditioned synthetic stand-in
    sm, sk = config.svm_shape
    As = gen_matrix(sm, sk, 1e6, config.seed + 1)
    w_true = rng.standard_normal(sk)
    labels = np.sign(As @ w_true + 1e-6)
    labels[labels == 0] = 1.0
    flip = rng.random(sm) < 0.05
    labels[flip] *= -1.0
    lam_svm = 1.0
    prob = svm_problem(As, labels, lam_svm)
    record("svm", prob,
           lambda: admm.admm_svm(As, labels, lam_svm, outer), None, "---",
           lambda out: np.concatenate([out[0], [out[1]]]))

    # Huber Lasso and L1 Lasso at two condition numbers, two ADMM variants
    hm, hn = config.robust_shape
    for cond in config.cond_targets:
        Ah = gen_matrix(hm, hn, cond, config.seed + 2)
        xh = np.zeros(hn)
        idx = rng.choice(hn, size=hn // 20, replace=False)
        xh[idx] = rng.standard_normal(idx.size)
        bh = Ah @ xh + 0.01 * rng.standard_normal(hm)
        lamh = 0.1 * np.abs(Ah.T @ bh).max()

        prob = robust_lasso_problem(Ah, bh, lamh, "huber", kappa=1.0)
        opts_in = admm.AdmmOptions(inner_cap=100, max_outer=config.admm_outer_cap)
        opts_sm = admm.AdmmOptions(max_outer=config.smooth_outer_cap)
        record(f"huber_lasso_admm_admm_cond{cond:g}", prob,
               lambda Ah=Ah, bh=bh, lamh=lamh, o=opts_in: admm.admm_robust_lasso(
                   Ah, bh, lamh, "huber", "split_residual", o),
               None, 100, lambda out: out[0])
        record(f"huber_lasso_admm_lbfgs_cond{cond:g}", prob,
               lambda Ah=Ah, bh=bh, lamh=lamh, o=opts_sm: admm.admm_robust_lasso(
                   Ah, bh, lamh, "huber", "smooth_x", o),
               None, "---", lambda out: out[0])

        prob = robust_lasso_problem(Ah, bh, lamh, "l1")
        record(f"l1_lasso_admm_admm_cond{cond:g}", prob,
               lambda Ah=Ah, bh=bh, lamh=lamh, o=opts_in: admm.admm_robust_lasso(
                   Ah, bh, lamh, "l1", "split_residual", o),
               None, 100, lambda out: out[0])

    # General L1-L1: IP only
    gm, gn, gc = config.l1l1_shape
    Ag = gen_matrix(gm, gn, 5.0, config.seed + 3)
    Cg = gen_matrix(gc, gn, 5.0, config.seed + 4)
    xg = rng.standard_normal(gn)
    bg = Ag @ xg + 0.05 * rng.standard_normal(gm)
    dg = np.zeros(gc)
    prob = general_l1l1_problem(Ag, bg, Cg, dg, lam=0.5)
    record("general_l1l1", prob, None, None, "---", None)
    return rows


TABLE1_HEADER = ["problem", "status", "admm_iters", "admm_inner_cap", "ip_iters",
                 "t_admm", "t_ip", "obj_admm", "obj_ip", "obj_diff", "kkt_inf"]


def table1_rows_to_csv(rows, path) -> None:
    write_csv(path, TABLE1_HEADER, ([r[k] for k in TABLE1_HEADER] for r in rows))


# -- simulation and cross-validation -----------------------------------------------

def simulate_expsin8(count: int, p: float, seed: int,
                     sigma1: float = 0.5, sigma2: float = 5.0):
    """Noisy samples of f(t) = exp(sin 8t) on a uniform grid over (0, 1]
    with two-component Gaussian mixture noise; f(0) = 1 is known."""
    if count < 2:
        raise BadParameter("count must be >= 2")
    t = np.arange(1, count + 1) / count
    truth = np.exp(np.sin(8.0 * t))
    noise = sample_gaussian_mixture(p, sigma1, sigma2, count, seed)
    return t, truth, truth + noise


def spline_model_from_times(times: np.ndarray, lam2: float, *,
                            meas_var: float = 1.0, f0: float = 1.0,
                            t0: float = 0.0) -> StateSpaceModel:
    """Integrated-Wiener spline model on an arbitrary increasing time grid."""
    times = np.asarray(times, dtype=float)
    dts = np.diff(np.concatenate([[t0], times]))
    if np.any(dts <= 0):
        raise BadParameter("times must be strictly increasing and after t0")
    N = times.size
    G = np.zeros((N, 2, 2))
    Q = np.zeros((N, 2, 2))
    for k, dt in enumerate(dts):
        G[k] = [[1.0, 0.0], [dt, 1.0]]
        Q[k] = lam2 * np.array([[dt, dt * dt / 2.0],
                                [dt * dt / 2.0, dt ** 3 / 3.0]])
    H = np.tile(np.array([[0.0, 1.0]]), (N, 1, 1))
    R = np.tile(np.array([[float(meas_var)]]), (N, 1, 1))
    return StateSpaceModel(G, H, Q, R, np.array([0.0, f0]))


def _predict_from_states(train_t, xhat, query_t, f0: float = 1.0):
    """Integrated-Wiener prediction: level + gap * derivative from the last
    earlier training state."""
    idx = np.searchsorted(train_t, query_t, side="right") - 1
    out = np.empty(query_t.shape)
    for j, (tq, k) in enumerate(zip(query_t, idx)):
        if k < 0:
            out[j] = f0
        else:
            out[j] = xhat[k, 1] + (tq - train_t[k]) * xhat[k, 0]
    return out


def _cv_error(t, z, grid: CvGrid, meas_kind: str, lam2: float, eps: float,
              train_idx, val_idx, meas_var: float) -> float:
    tt, zt = t[train_idx], z[train_idx]
    model = spline_model_from_times(tt, lam2, meas_var=meas_var)
    params = {"eps": eps} if meas_kind == "vapnik" else {}
    spec = SmootherSpec(process="l2", meas=meas_kind, meas_params=params)
    res = smooth_plq(model, zt.reshape(-1, 1), spec)
    pred = _predict_from_states(tt, res.xhat, t[val_idx])
    zv = z[val_idx]
    return float(np.mean(np.abs(pred - zv) / (1.0 + np.abs(zv))))


def cross_validate(t, z, grid: CvGrid, meas_kind: str = "vapnik",
                   meas_var: float = 1.0, workers: int = 1):
    """Grid search on (lam2, eps): fit on the training split, score the
    relative average prediction error mean |pred - z| / (1 + |z|) on the
    validation split.  Returns ((lam2*, eps*), surface rows)."""
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1)
    rng = np.random.default_rng(grid.seed)
    n = t.size
    perm = rng.permutation(n)
    ntrain = int(round(grid.train_frac * n))
    train_idx = np.sort(perm[:ntrain])
    val_idx = np.sort(perm[ntrain:])

    eps_vals = grid.eps_values if meas_kind == "vapnik" else np.array([0.0])
    points = [(l2, e) for l2 in grid.lam2_values for e in eps_vals]

    def run(pt):
        l2, e = pt
        try:
            err = _cv_error(t, z, grid, meas_kind, l2, e, train_idx, val_idx,
                            meas_var)
        except Exception:                            # noqa: BLE001
            err = np.inf
        return (l2, e, err)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            surface = list(pool.map(run, points))
    else:
        surface = [run(pt) for pt in points]
    best = min(surface, key=lambda r: r[2])
    return (best[0], best[1]), surface, (train_idx, val_idx)


def bench_scaling(N_list, spec: SmootherSpec, *, lam2: float = 100.0,
                  meas_var: float = 0.25, iterations: int = 20, seed: int = 0,
                  repeats: int = 3):
    """Median-of-repeats wall times at fixed IP iteration count, plus the
    fitted log-log slope."""
    N_list = list(N_list)
    if len(N_list) < 4:
        raise BadParameter("need at least 4 values of N")
    rows = []
    for N in N_list:
        t_grid, truth, z = simulate_expsin8(N, 0.1, seed)
        model = spline_model_from_times(t_grid, lam2, meas_var=meas_var)
        opts = SolveOptions(fixed_iterations=iterations)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            smooth_plq(model, z.reshape(-1, 1), spec, opts)
            times.append(time.perf_counter() - t0)
        rows.append((N, float(np.median(times))))
    xs = np.log([r[0] for r in rows])
    ys = np.log([r[1] for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return rows, slope
