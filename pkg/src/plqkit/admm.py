"""ADMM reference solvers: Lasso, linear SVM, robust Lasso (two splittings).

These are the comparison baselines; the interior-point route to the same
problems lives in `bench`.  Iterations stop on the standard primal/dual
residual criteria or at the configured caps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import BadParameter, InnerSolveFailed, LineSearchFailed

__all__ = [
    "AdmmOptions",
    "AdmmTrace",
    "soft_threshold",
    "admm_lasso",
    "admm_svm",
    "admm_robust_lasso",
    "lbfgs_minimize",
    "lasso_objective",
    "svm_objective",
    "robust_lasso_objective",
    "huber_value",
]


@dataclass
class AdmmOptions:
    eta: float = 1.0              # augmented Lagrangian parameter
    max_outer: int = 2000
    inner_cap: int = 100          # cap for nested ADMM solves
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6

    def __post_init__(self):
        if self.eta <= 0:
            raise BadParameter("eta must be positive")
        if self.max_outer < 1 or self.inner_cap < 1:
            raise BadParameter("iteration caps must be >= 1")


@dataclass
class AdmmTrace:
    iterations: int = 0
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    objective: float = np.nan


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """Componentwise sign(v) * max(|v| - t, 0), the prox of t |.|_1."""
    if t < 0:
        raise BadParameter("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def huber_value(r: np.ndarray, kappa: float) -> float:
    r = np.abs(np.asarray(r, dtype=float))
    quad = r <= kappa
    return float(np.sum(0.5 * r[quad] ** 2)
                 + np.sum(kappa * r[~quad] - 0.5 * kappa * kappa))


def _huber_grad(r: np.ndarray, kappa: float) -> np.ndarray:
    return np.clip(r, -kappa, kappa)


def lasso_objective(A, b, lam, x) -> float:
    r = A @ x - b
    return float(0.5 * r @ r + lam * np.abs(x).sum())


def svm_objective(A, labels, lam, w, gamma) -> float:
    margins = 1.0 - labels * (A @ w - gamma)
    return float(0.5 * w @ w + lam * np.maximum(margins, 0.0).sum())


def robust_lasso_objective(A, b, lam, x, loss: str, kappa: float = 1.0) -> float:
    r = A @ x - b
    rho = np.abs(r).sum() if loss == "l1" else huber_value(r, kappa)
    return float(rho + lam * np.abs(x).sum())


def _stop(r_norm, s_norm, eps_pri, eps_dual) -> bool:
    return r_norm <= eps_pri and s_norm <= eps_dual


def admm_lasso(A, b, lam, opts: AdmmOptions | None = None,
               x0: np.ndarray | None = None):
    """min 1/2 ||Ax - b||^2 + lam ||x||_1 by splitting x = z, with the
    multiplier coupling eta y^T (z - x):

        x <- (A^T A + eta I)^{-1} (A^T b + eta (z + y))
        z <- soft_threshold(x - y, lam / eta)
        y <- y + (z - x)

    One Cholesky of A^T A + eta I is cached; every x-update is two
    triangular solves.
    """
    if lam <= 0:
        raise BadParameter("lam must be positive")
    opts = opts or AdmmOptions()
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    n = A.shape[1]
    eta = opts.eta
    Atb = A.T @ b
    factor = sla.cho_factor(A.T @ A + eta * np.eye(n), lower=True,
                            check_finite=False)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    z = x.copy()
    y = np.zeros(n)
    trace = AdmmTrace()
    for it in range(opts.max_outer):
        x = sla.cho_solve(factor, Atb + eta * (z + y), check_finite=False)
        z_old = z
        z = soft_threshold(x - y, lam / eta)
        y = y + (z - x)

        r_norm = float(np.linalg.norm(x - z))
        s_norm = float(np.linalg.norm(eta * (z - z_old)))
        trace.primal_residuals.append(r_norm)
        trace.dual_residuals.append(s_norm)
        trace.iterations = it + 1
        eps_pri = np.sqrt(n) * opts.abs_tol + opts.rel_tol * max(
            np.linalg.norm(x), np.linalg.norm(z))
        eps_dual = np.sqrt(n) * opts.abs_tol + opts.rel_tol * np.linalg.norm(eta * y)
        if _stop(r_norm, s_norm, eps_pri, eps_dual):
            break
    trace.objective = lasso_objective(A, b, lam, z)
    return z, trace


def admm_svm(A, labels, lam, opts: AdmmOptions | None = None):
    """min 1/2 ||w||^2 + lam sum (1 - d_i (a_i^T w - gamma))_+ split on the
    hinge argument v = 1 - D(Aw - gamma 1); the hinge prox is closed form."""
    opts = opts or AdmmOptions()
    A = np.asarray(A, dtype=float)
    d = np.asarray(labels, dtype=float).reshape(-1)
    if not np.all(np.isin(d, (-1.0, 1.0))):
        raise BadParameter("labels must be +-1")
    mrows, k = A.shape
    eta = opts.eta
    E = d[:, None] * np.hstack([A, -np.ones((mrows, 1))])   # v = 1 - E theta
    reg = np.diag(np.concatenate([np.ones(k), [0.0]]))
    factor = sla.cho_factor(reg + eta * E.T @ E, lower=True, check_finite=False)

    theta = np.zeros(k + 1)
    v = np.ones(mrows)
    y = np.zeros(mrows)
    trace = AdmmTrace()
    for it in range(opts.max_outer):
        theta = sla.cho_solve(factor, eta * E.T @ (1.0 - v - y),
                              check_finite=False)
        p = 1.0 - E @ theta - y
        v_old = v
        # prox of (lam/eta) * (.)_+
        v = np.where(p > lam / eta, p - lam / eta, np.where(p < 0.0, p, 0.0))
        y = y + (v - 1.0 + E @ theta)

        r_norm = float(np.linalg.norm(v - 1.0 + E @ theta))
        s_norm = float(np.linalg.norm(eta * E.T @ (v - v_old)))
        trace.primal_residuals.append(r_norm)
        trace.dual_residuals.append(s_norm)
        trace.iterations = it + 1
        eps_pri = np.sqrt(mrows) * opts.abs_tol + opts.rel_tol * max(
            np.linalg.norm(v), np.linalg.norm(E @ theta), 1.0)
        eps_dual = np.sqrt(k + 1) * opts.abs_tol + \
            opts.rel_tol * np.linalg.norm(eta * E.T @ y)
        if _stop(r_norm, s_norm, eps_pri, eps_dual):
            break
    w, gamma = theta[:k], theta[k]
    trace.objective = svm_objective(A, d, lam, w, gamma)
    return w, float(gamma), trace


def admm_robust_lasso(A, b, lam, loss: str = "huber",
                      variant: str = "split_residual",
                      opts: AdmmOptions | None = None, kappa: float = 1.0):
    """min rho(Ax - b) + lam ||x||_1 with rho the 1-norm or Huber.

    split_residual splits on z = Ax - b; the x-update is itself a Lasso,
    solved by a nested capped ADMM.  smooth_x (Huber only) splits x = z and
    solves the smooth x-update with L-BFGS.
    """
    if loss not in ("l1", "huber"):
        raise BadParameter(f"loss must be l1 or huber, got {loss!r}")
    if variant not in ("split_residual", "smooth_x"):
        raise BadParameter(f"unknown variant {variant!r}")
    if variant == "smooth_x" and loss != "huber":
        raise BadParameter("smooth_x requires the Huber loss")
    opts = opts or AdmmOptions()
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    mrows, n = A.shape
    eta = opts.eta

    if variant == "split_residual":
        x = np.zeros(n)
        z = -b.copy()
        y = np.zeros(mrows)
        trace = AdmmTrace()
        inner_opts = AdmmOptions(eta=opts.eta, max_outer=opts.inner_cap,
                                 abs_tol=opts.abs_tol, rel_tol=opts.rel_tol)
        for it in range(opts.max_outer):
            v = z + b + y
            # x-update: min lam|x|_1 + eta/2 |Ax - v|^2, a Lasso in disguise
            x, _ = admm_lasso(A, v, lam / eta, inner_opts, x0=x)
            r = A @ x - b
            z_old = z
            p = r - y
            if loss == "l1":
                z = soft_threshold(p, 1.0 / eta)
            else:
                # prox of huber/eta at p
                z = np.where(np.abs(p) <= kappa * (eta + 1.0) / eta,
                             eta * p / (eta + 1.0),
                             p - np.sign(p) * kappa / eta)
            y = y + (z - r)

            r_norm = float(np.linalg.norm(z - r))
            s_norm = float(np.linalg.norm(eta * A.T @ (z - z_old)))
            trace.primal_residuals.append(r_norm)
            trace.dual_residuals.append(s_norm)
            trace.iterations = it + 1
            eps_pri = np.sqrt(mrows) * opts.abs_tol + opts.rel_tol * max(
                np.linalg.norm(z), np.linalg.norm(r))
            eps_dual = np.sqrt(n) * opts.abs_tol + \
                opts.rel_tol * np.linalg.norm(eta * A.T @ y)
            if _stop(r_norm, s_norm, eps_pri, eps_dual):
                break
        trace.objective = robust_lasso_objective(A, b, lam, x, loss, kappa)
        return x, trace

    # smooth_x: x-update by L-BFGS on the Huber-regularized least squares
    x = np.zeros(n)
    z = np.zeros(n)
    y = np.zeros(n)
    trace = AdmmTrace()
    for it in range(opts.max_outer):
        target = z + y

        def fg(v, target=target):
            r = A @ v - b
            val = huber_value(r, kappa) + 0.5 * eta * np.sum((v - target) ** 2)
            grad = A.T @ _huber_grad(r, kappa) + eta * (v - target)
            return val, grad

        x = lbfgs_minimize(fg, x, gtol=1e-8, max_iter=400)
        z_old = z
        z = soft_threshold(x - y, lam / eta)
        y = y + (z - x)

        r_norm = float(np.linalg.norm(x - z))
        s_norm = float(np.linalg.norm(eta * (z - z_old)))
        trace.primal_residuals.append(r_norm)
        trace.dual_residuals.append(s_norm)
        trace.iterations = it + 1
        eps_pri = np.sqrt(n) * opts.abs_tol + opts.rel_tol * max(
            np.linalg.norm(x), np.linalg.norm(z))
        eps_dual = np.sqrt(n) * opts.abs_tol + \
            opts.rel_tol * np.linalg.norm(eta * y)
        if _stop(r_norm, s_norm, eps_pri, eps_dual):
            break
    trace.objective = robust_lasso_objective(A, b, lam, x, loss, kappa)
    return x, trace


def lbfgs_minimize(fg, x0, memory: int = 10, gtol: float = 1e-8,
                   max_iter: int = 500):
    """Limited-memory BFGS with an interpolating Armijo line search.

    fg(x) must return (value, gradient).  Stops when the gradient inf-norm
    drops below gtol or the iteration cap is reached.
    """
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    for _ in range(max_iter):
        if np.linalg.norm(g, np.inf) <= gtol:
            return x
        # two-loop recursion
        d = -g
        alphas = []
        for s, yv, rho in zip(reversed(s_hist), reversed(y_hist),
                              reversed(rho_hist)):
            a = rho * (s @ d)
            alphas.append(a)
            d = d - a * yv
        if y_hist:
            yy = y_hist[-1]
            d = d * (s_hist[-1] @ yy) / (yy @ yy)
        for s, yv, rho, a in zip(s_hist, y_hist, rho_hist, reversed(alphas)):
            beta = rho * (yv @ d)
            d = d + (a - beta) * s

        slope = g @ d
        if slope >= 0:   # not a descent direction; restart from steepest descent
            d = -g
            slope = g @ d
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()

        step = 1.0
        f_new, g_new = fg(x + step * d)
        ls_ok = False
        for _ in range(40):
            if f_new <= f + 1e-4 * step * slope:
                ls_ok = True
                break
            # quadratic interpolation on phi(t) = f(x + t d); exact for quadratics
            denom = 2.0 * (f_new - f - step * slope)
            t = -slope * step * step / denom if denom > 0 else 0.5 * step
            step = min(max(t, 0.1 * step), 0.9 * step)
            f_new, g_new = fg(x + step * d)
        if not ls_ok:
            raise LineSearchFailed("no Armijo step after 40 backtracks")

        s = step * d
        yv = g_new - g
        x = x + s
        f, g = f_new, g_new
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            s_hist.append(s)
            y_hist.append(yv)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
    if np.linalg.norm(g, np.inf) <= 10 * gtol:
        return x
    raise InnerSolveFailed(
        f"L-BFGS: gradient norm {np.linalg.norm(g, np.inf):.2e} after {max_iter} iterations")
