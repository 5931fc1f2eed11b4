"""Quadratic-support penalties: dual representation, catalogue, calculus.

A penalty is stored through its dual data (U, M, b, B),

    rho(y) = sup_{u in U} { <u, b + B y> - 1/2 <u, M u> },

with U an interval product (one inequality row per finite bound), M
symmetric PSD, and B injective.  Catalogue penalties additionally carry an
exact closed-form evaluator; the generic evaluator maximizes the dual with
the interior-point kernel, giving an independent route for testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ipcore
from .errors import (
    BadParameter,
    DimensionMismatch,
    EmptyU,
    NonInjectiveB,
    NonInjectiveComposite,
    NonPsdM,
    SingularM,
    UnsupportedU,
)
from .linalg import rank_check

__all__ = [
    "IntervalProduct",
    "Polyhedron",
    "QsPenalty",
    "CoercivityCertificate",
    "make_penalty",
    "make_catalogue",
    "sum_penalties",
    "scale_penalty",
    "precompose_affine",
    "evaluate",
    "evaluate_primal",
    "project_box",
    "is_coercive",
    "domain_check",
    "check_ip_condition",
    "penalty_from_dict",
    "CATALOGUE_KINDS",
]

PSD_TOL = 1e-10
INJECTIVITY_TOL = 1e-12
COERCIVITY_TOL = 1e-8

CATALOGUE_KINDS = (
    "l2", "l1", "huber", "vapnik", "hinge", "elastic_net", "soft_hinge", "silf",
)


@dataclass(frozen=True)
class IntervalProduct:
    """Product of intervals [lower_i, upper_i], infinities allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionMismatch("lower/upper length mismatch")
        if np.any(lo > hi):
            raise EmptyU("some lower bound exceeds its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, u: np.ndarray, margin: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower + margin) and np.all(u <= self.upper - margin))

    def strictly_contains(self, u: np.ndarray, rel: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        width = np.where(np.isfinite(self.upper - self.lower),
                         self.upper - self.lower, 1.0)
        pad = rel * np.maximum(width, 1.0)
        lo_ok = np.where(np.isfinite(self.lower), u > self.lower + pad, True)
        hi_ok = np.where(np.isfinite(self.upper), u < self.upper - pad, True)
        return bool(np.all(lo_ok) and np.all(hi_ok))

    def midpoint(self) -> np.ndarray:
        """Interior anchor: midpoint of finite bounds, unit offset otherwise."""
        lo, hi = self.lower, self.upper
        both = np.isfinite(lo) & np.isfinite(hi)
        only_lo = np.isfinite(lo) & ~np.isfinite(hi)
        only_hi = ~np.isfinite(lo) & np.isfinite(hi)
        mid = np.zeros(self.dim)
        mid[both] = 0.5 * (lo[both] + hi[both])
        mid[only_lo] = lo[only_lo] + 1.0
        mid[only_hi] = hi[only_hi] - 1.0
        return mid

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def cones(self) -> list[str]:
        """Per-coordinate cone(U_i) from bound signs: R, R+, R-, or 0."""
        out = []
        for lo, hi in zip(self.lower, self.upper):
            pos = hi > 0
            neg = lo < 0
            if pos and neg:
                out.append("R")
            elif pos:
                out.append("R+")
            elif neg:
                out.append("R-")
            else:
                out.append("0")
        return out

    def cross(self, other: "IntervalProduct") -> "IntervalProduct":
        return IntervalProduct(np.concatenate([self.lower, other.lower]),
                               np.concatenate([self.upper, other.upper]))


@dataclass(frozen=True)
class Polyhedron:
    """Rows of U = {u : A^T u <= a}, one per finite bound of the interval
    product.  up_row[i]/dn_row[i] give the row index of the upper/lower
    bound of coordinate i, or -1 when that bound is infinite.
    """

    A: np.ndarray          # m x ell, columns are +-e_i
    a: np.ndarray          # ell
    up_row: np.ndarray     # m, int
    dn_row: np.ndarray     # m, int

    @property
    def ell(self) -> int:
        return self.a.shape[0]

    @staticmethod
    def from_interval(U: IntervalProduct) -> "Polyhedron":
        m = U.dim
        cols, rhs = [], []
        up = -np.ones(m, dtype=int)
        dn = -np.ones(m, dtype=int)
        for i in range(m):
            if np.isfinite(U.upper[i]):
                e = np.zeros(m)
                e[i] = 1.0
                up[i] = len(rhs)
                cols.append(e)
                rhs.append(U.upper[i])
            if np.isfinite(U.lower[i]):
                e = np.zeros(m)
                e[i] = -1.0
                dn[i] = len(rhs)
                cols.append(e)
                rhs.append(-U.lower[i])
        A = np.array(cols).T if cols else np.zeros((m, 0))
        return Polyhedron(A, np.array(rhs, dtype=float), up, dn)


@dataclass(frozen=True)
class QsPenalty:
    """Dual representation (U, M, b, B) of a quadratic-support penalty."""

    U: IntervalProduct
    M: np.ndarray
    b: np.ndarray
    B: np.ndarray
    kind: str | None = None                       # catalogue tag, if any
    params: dict = field(default_factory=dict)
    closed_eval: Callable[[np.ndarray], float] | None = None
    rows: Polyhedron = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "M", np.asarray(self.M, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "rows", Polyhedron.from_interval(self.U))

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @property
    def ell(self) -> int:
        return self.rows.ell

    @property
    def is_penalty(self) -> bool:
        """True when 0 in U, hence rho >= 0."""
        return self.U.contains(np.zeros(self.U.dim))

    def __add__(self, other: "QsPenalty") -> "QsPenalty":
        return sum_penalties(self, other)


@dataclass(frozen=True)
class CoercivityCertificate:
    coercive: bool
    witness: str | np.ndarray   # "interior", "cone_system_trivial", or a direction


def _validate(U: IntervalProduct, M: np.ndarray, b: np.ndarray, B: np.ndarray) -> None:
    m = B.shape[0]
    if U.dim != m or M.shape != (m, m) or b.shape[0] != m:
        raise DimensionMismatch(
            f"inconsistent dims: B {B.shape}, M {M.shape}, b {b.shape}, U dim {U.dim}")
    if not np.allclose(M, M.T, atol=1e-12, rtol=1e-12):
        raise NonPsdM("M is not symmetric")
    if m > 0:
        eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
        scale = max(np.abs(eigs).max(), 1.0)
        if eigs.min() < -PSD_TOL * scale:
            raise NonPsdM(f"min eigenvalue {eigs.min():.3e} below tolerance")
    sv = np.linalg.svd(B, compute_uv=False)
    if B.shape[1] > 0 and (B.shape[0] < B.shape[1]
                           or sv.min() <= INJECTIVITY_TOL * max(sv.max(), 1e-300)):
        raise NonInjectiveB(f"smallest singular value {sv.min():.3e}")


def make_penalty(U: IntervalProduct, M, b, B,
                 kind: str | None = None,
                 params: dict | None = None,
                 closed_eval: Callable | None = None) -> QsPenalty:
    """Validated construction of a QS penalty from its dual data."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    _validate(U, M, b, B)
    return QsPenalty(U, M, b, B, kind=kind, params=params or {},
                     closed_eval=closed_eval)


# -- catalogue ----------------------------------------------------------------

def _scalar_atom(kind: str, kappa: float, eps: float, lam: float):
    """Dual data and closed form of one scalar catalogue penalty."""
    inf = np.inf
    if kind == "l2":
        data = ([-inf], [inf], [[1.0]], [0.0], [[1.0]])
        f = lambda t: 0.5 * t * t
    elif kind == "l1":
        data = ([-1.0], [1.0], [[0.0]], [0.0], [[1.0]])
        f = abs
    elif kind == "huber":
        if kappa <= 0:
            raise BadParameter("huber requires kappa > 0")
        k = kappa
        data = ([-k], [k], [[1.0]], [0.0], [[1.0]])
        f = lambda t: 0.5 * t * t if abs(t) <= k else k * abs(t) - 0.5 * k * k
    elif kind == "vapnik":
        if eps < 0:
            raise BadParameter("vapnik requires eps >= 0")
        e = eps
        data = ([0.0, 0.0], [1.0, 1.0], np.zeros((2, 2)), [-e, -e], [[1.0], [-1.0]])
        f = lambda t: max(t - e, 0.0) + max(-t - e, 0.0)
    elif kind == "hinge":
        if eps < 0:
            raise BadParameter("hinge requires eps >= 0")
        e = eps
        data = ([0.0], [1.0], [[0.0]], [-e], [[1.0]])
        f = lambda t: max(t - e, 0.0)
    elif kind == "elastic_net":
        if lam < 0:
            raise BadParameter("elastic_net requires lam >= 0")
        w = lam
        data = ([-inf, -w], [inf, w], np.diag([1.0, 0.0]), [0.0, 0.0], [[1.0], [1.0]])
        f = lambda t: 0.5 * t * t + w * abs(t)
    elif kind == "soft_hinge":
        if kappa <= 0 or eps < 0:
            raise BadParameter("soft_hinge requires kappa > 0, eps >= 0")
        k, e = kappa, eps
        data = ([0.0], [k], [[1.0]], [-e], [[1.0]])

        def f(t, k=k, e=e):
            if t <= e:
                return 0.0
            if t <= e + k:
                return 0.5 * (t - e) ** 2
            return k * (t - e) - 0.5 * k * k
    elif kind == "silf":
        if kappa <= 0 or eps < 0:
            raise BadParameter("silf requires kappa > 0, eps >= 0")
        k, e = kappa, eps
        data = ([0.0, 0.0], [k, k], np.eye(2), [-e, -e], [[1.0], [-1.0]])

        def f(t, k=k, e=e):
            a = abs(t) - e
            if a <= 0:
                return 0.0
            if a <= k:
                return 0.5 * a * a
            return k * a - 0.5 * k * k
    else:
        raise BadParameter(f"unknown catalogue kind {kind!r}")
    return data, f


def make_catalogue(kind: str, dim: int = 1, *,
                   kappa: float = 1.0, eps: float = 0.1, lam: float = 1.0) -> QsPenalty:
    """Separable catalogue penalty on R^dim, built per coordinate."""
    if dim < 1:
        raise BadParameter(f"dim must be >= 1, got {dim}")
    (lo, hi, M1, b1, B1), f = _scalar_atom(kind, kappa, eps, lam)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    M1, b1, B1 = np.asarray(M1, float), np.asarray(b1, float), np.asarray(B1, float)
    d = M1.shape[0]
    M = np.kron(np.eye(dim), M1)
    B = np.kron(np.eye(dim), B1)
    b = np.tile(b1, dim)
    U = IntervalProduct(np.tile(lo, dim), np.tile(hi, dim))

    def closed(y, f=f, dim=dim):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape[0] != dim:
            raise DimensionMismatch(f"expected {dim}-vector, got {y.shape}")
        return float(sum(f(t) for t in y))

    params = {"kappa": kappa, "eps": eps, "lam": lam}
    return QsPenalty(U, M, b, B, kind=kind, params=params, closed_eval=closed)


def sum_penalties(p1: QsPenalty, p2: QsPenalty) -> QsPenalty:
    """rho1 + rho2 via block concatenation of the dual data."""
    if p1.n != p2.n:
        raise DimensionMismatch(f"input dims differ: {p1.n} vs {p2.n}")
    U = p1.U.cross(p2.U)
    m1, m2 = p1.m, p2.m
    M = np.zeros((m1 + m2, m1 + m2))
    M[:m1, :m1] = p1.M
    M[m1:, m1:] = p2.M
    b = np.concatenate([p1.b, p2.b])
    B = np.vstack([p1.B, p2.B])
    closed = None
    if p1.closed_eval is not None and p2.closed_eval is not None:
        f1, f2 = p1.closed_eval, p2.closed_eval
        closed = lambda y: f1(y) + f2(y)
    return QsPenalty(U, M, b, B, kind=None, params={}, closed_eval=closed)


def scale_penalty(p: QsPenalty, w: float) -> QsPenalty:
    """w * rho for w > 0:  U -> w U,  M -> M / w."""
    if w <= 0:
        raise BadParameter(f"scale must be positive, got {w}")
    U = IntervalProduct(w * p.U.lower, w * p.U.upper)
    closed = None
    if p.closed_eval is not None:
        f = p.closed_eval
        closed = lambda y: w * f(y)
    return QsPenalty(U, p.M / w, p.b, p.B, kind=p.kind,
                     params=dict(p.params, weight=w), closed_eval=closed)


def precompose_affine(p: QsPenalty, S: np.ndarray, t: np.ndarray | None = None) -> QsPenalty:
    """Penalty y -> rho(S y + t):  B -> B S,  b -> b + B t."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != p.n:
        raise DimensionMismatch(f"S has {S.shape[0]} rows, penalty input dim {p.n}")
    t = np.zeros(p.n) if t is None else np.asarray(t, dtype=float).reshape(-1)
    BS = p.B @ S
    sv = np.linalg.svd(BS, compute_uv=False)
    if BS.shape[1] > 0 and (BS.shape[0] < BS.shape[1]
                            or sv.min() <= INJECTIVITY_TOL * max(sv.max(), 1e-300)):
        raise NonInjectiveComposite("null(B S) != {0}")
    b = p.b + p.B @ t
    closed = None
    if p.closed_eval is not None:
        f = p.closed_eval
        closed = lambda y: f(S @ np.atleast_1d(np.asarray(y, dtype=float)) + t)
    return QsPenalty(p.U, p.M, b, BS, kind=p.kind, params=dict(p.params),
                     closed_eval=closed)


# -- evaluation ---------------------------------------------------------------

def evaluate(p: QsPenalty, y, method: str = "auto", tol: float = 1e-9) -> float:
    """Value of rho at y.

    method="auto" prefers the exact closed form when the penalty carries
    one; "dual" always runs the interior-point maximization over U (the
    independent route); "closed" requires a closed form.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape[0] != p.n:
        raise DimensionMismatch(f"expected {p.n}-vector, got shape {y.shape}")
    if method == "closed" or (method == "auto" and p.closed_eval is not None):
        if p.closed_eval is None:
            raise BadParameter("penalty has no closed form")
        return float(p.closed_eval(y))
    if method not in ("auto", "dual"):
        raise BadParameter(f"unknown method {method!r}")
    c = p.b + p.B @ y
    res = ipcore.maximize_qp(c, p.M, p.rows.A, p.rows.a,
                             u0=p.U.clip(p.U.midpoint()),
                             gap_tol=tol * 1e-2, res_tol=tol * 1e-1)
    if res.unbounded:
        return np.inf
    return res.value


def evaluate_primal(p: QsPenalty, y, ball_radius: float | None = None) -> float:
    """Value via the primal projection route (requires M > 0, B = I, b = 0).

    With the default box U and diagonal M the projection is a clamp:

        rho(y) = 1/2 y^T M^{-1} y - inf_{u in U} 1/2 |u - M^{-1} y|_M^2 .

    With ball_radius=r, U is instead taken to be the r-ball of |.|_M and
    the value is the two-branch multivariate Huber form in the M^{-1} norm.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.allclose(p.B, np.eye(p.m), atol=1e-12):
        raise UnsupportedU("primal route requires B = I")
    if np.linalg.norm(p.b, np.inf) > 1e-12:
        raise UnsupportedU("primal route requires b = 0")
    eigs = np.linalg.eigvalsh(p.M)
    if eigs.min() <= 0:
        raise SingularM("M must be positive definite")
    if ball_radius is not None:
        r = float(ball_radius)
        nrm = float(np.sqrt(y @ np.linalg.solve(p.M, y)))
        if nrm <= r:
            return 0.5 * nrm * nrm
        return r * nrm - 0.5 * r * r
    d = np.diag(p.M)
    if not np.allclose(p.M, np.diag(d), atol=1e-12):
        raise UnsupportedU("box projection requires diagonal M")
    v = y / d
    proj = np.clip(v, p.U.lower, p.U.upper)
    return float(0.5 * y @ v - 0.5 * ((proj - v) ** 2 * d).sum())


def project_box(y, U: IntervalProduct, W=None) -> np.ndarray:
    """Projection onto the interval product in a diagonal positive metric.

    The diagonal metric makes the problem separable, so the projection is a
    coordinate-wise clamp regardless of W; W is validated for contract's sake.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape[0] != U.dim:
        raise DimensionMismatch(f"y has dim {y.shape[0]}, U has dim {U.dim}")
    if W is not None:
        W = np.asarray(W, dtype=float)
        d = np.diag(W) if W.ndim == 2 else W
        if W.ndim == 2 and not np.allclose(W, np.diag(d), atol=1e-12):
            raise BadParameter("metric W must be diagonal")
        if np.any(d <= 0):
            raise BadParameter("metric W must be positive")
    return np.clip(y, U.lower, U.upper)


# -- structural checks --------------------------------------------------------

def is_coercive(p: QsPenalty) -> CoercivityCertificate:
    """Decide coercivity: polar[B^T cone(U)] = {0}.

    Fast path: all per-coordinate cones equal R (equivalently 0 interior to
    U), which forces the cone-membership system down to null(B) = {0}.
    Otherwise the cone K = {y : (B y)_i in polar(cone(U_i))} is probed with
    2n bounded LPs max +-e_j^T y over K intersected with the unit box; the
    penalty is coercive iff every optimum is zero.
    """
    if p.U.lower is None or p.U.upper is None:
        raise UnsupportedU("coercivity analysis needs an interval-product U")
    cones = p.U.cones()
    n = p.n
    if all(c == "R" for c in cones):
        return CoercivityCertificate(True, "interior")

    rows = []
    for i, c in enumerate(cones):
        if c == "R":
            rows.append(p.B[i])
            rows.append(-p.B[i])
        elif c == "R+":
            rows.append(p.B[i])       # (By)_i <= 0
        elif c == "R-":
            rows.append(-p.B[i])      # (By)_i >= 0
        # cone {0}: polar is R, no restriction
    G = np.vstack(rows) if rows else np.zeros((0, n))
    G = np.vstack([G, np.eye(n), -np.eye(n)])
    h = np.concatenate([np.zeros(len(rows)), np.ones(2 * n)])

    for j in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[j] = sign
            res = ipcore.maximize_qp(c, None, G.T, h, u0=np.zeros(n))
            if res.value > COERCIVITY_TOL:
                return CoercivityCertificate(False, np.asarray(res.u))
    return CoercivityCertificate(True, "cone_system_trivial")


def domain_check(p: QsPenalty) -> str:
    """Report "finite_everywhere" or "restricted".

    Per coordinate, bar(U_i) + Ran(M_ii) is one of R, (-inf,0], [0,inf),
    {0}; the domain is all of R^n iff every coordinate's set is R or the
    corresponding row of B vanishes with b_i inside the set.  Requires M
    diagonal so the coordinate blocks decouple.
    """
    d = np.diag(p.M)
    if not np.allclose(p.M, np.diag(d), atol=1e-12):
        raise UnsupportedU("domain analysis requires coordinate-aligned (diagonal) M")
    for i in range(p.m):
        lo, hi = p.U.lower[i], p.U.upper[i]
        if np.isfinite(lo) and np.isfinite(hi):
            continue  # bar of a bounded interval is R
        if d[i] > PSD_TOL:
            continue  # Ran(M) fills the coordinate
        if np.isfinite(lo):          # [lo, inf): bar = (-inf, 0]
            sset = "neg"
        elif np.isfinite(hi):        # (-inf, hi]: bar = [0, inf)
            sset = "pos"
        else:                        # R: bar = {0}
            sset = "zero"
        if np.linalg.norm(p.B[i], np.inf) > 0:
            return "restricted"
        bi = p.b[i]
        ok = {"neg": bi <= 0, "pos": bi >= 0, "zero": bi == 0}[sset]
        if not ok:
            return "restricted"
    return "finite_everywhere"


def check_ip_condition(p: QsPenalty) -> bool:
    """True iff null(M) & null(A^T) = {0} (rank of the stacked [M; A^T])."""
    stacked = np.vstack([p.M, p.rows.A.T]) if p.ell else p.M
    return rank_check(stacked, rel_tol=1e-10) == p.m


# -- JSON interface -----------------------------------------------------------

def penalty_from_dict(spec: dict) -> QsPenalty:
    """Build a penalty from its JSON form.

    Either {"kind": "huber", "kappa": 1.0, "dim": 3, "weight": 2.0} or the
    explicit {"U": {"lower": [...], "upper": [...]}, "M": [[...]],
    "b": [...], "B": [[...]]}.
    """
    if "kind" in spec:
        kind = spec["kind"]
        if kind not in CATALOGUE_KINDS:
            raise BadParameter(f"unknown kind {kind!r}")
        pen = make_catalogue(
            kind,
            dim=int(spec.get("dim", 1)),
            kappa=float(spec.get("kappa", 1.0)),
            eps=float(spec.get("eps", 0.1)),
            lam=float(spec.get("lam", 1.0)),
        )
        w = spec.get("weight")
        return pen if w is None else scale_penalty(pen, float(w))
    try:
        U = IntervalProduct(np.asarray(spec["U"]["lower"], dtype=float),
                            np.asarray(spec["U"]["upper"], dtype=float))
        return make_penalty(U, spec["M"], spec["b"], spec["B"])
    except KeyError as exc:
        raise BadParameter(f"penalty spec missing field {exc}") from exc
