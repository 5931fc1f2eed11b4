"""Normalized densities built from coercive penalties.

A coercive symmetric scalar penalty rho yields the standardized density
p(y) = exp(-rho(c2 y)) / c1 with unit mass and unit variance, where

    c2 = sqrt(m2 / m0),   c1 = m0 / c2,
    m0 = int exp(-rho),   m2 = int y^2 exp(-rho).

Multivariate densities with mean mu and covariance Q are obtained from
independent standardized scalar blocks via y_tilde = Q^{1/2} y + mu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc

from .errors import BadFraction, BadKind, NonSpdQ, NotCoercive, NotSymmetric
from .linalg import sym_inv_sqrt, sym_sqrt
from .penalties import QsPenalty, evaluate, is_coercive, make_catalogue

__all__ = [
    "NormalizationConstants",
    "StandardBlock",
    "PlqDensity",
    "std_normal_cdf",
    "huber_constants",
    "vapnik_constants",
    "generic_constants",
    "standard_block",
    "make_density",
    "log_density",
    "sample_gaussian_mixture",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class NormalizationConstants:
    c1: float
    c2: float
    kind: str
    m0: float = 0.0
    m2: float = 0.0

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise BadKind(f"constants must be positive: c1={self.c1}, c2={self.c2}")


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-x / math.sqrt(2.0))


def _from_moments(m0: float, m2: float, kind: str) -> NormalizationConstants:
    c2 = math.sqrt(m2 / m0)
    return NormalizationConstants(c1=m0 / c2, c2=c2, kind=kind, m0=m0, m2=m2)


def huber_constants(kappa: float) -> NormalizationConstants:
    """Closed-form moments of exp(-rho_huber):

        m0 = 2 e^{-k^2/2}/k + sqrt(2 pi) (2 Phi(k) - 1)
        m2 = 4 e^{-k^2/2}(1 + k^2)/k^3 + sqrt(2 pi) (2 Phi(k) - 1)
    """
    if kappa <= 0:
        raise BadKind("kappa must be positive")
    k = kappa
    ek = math.exp(-0.5 * k * k)
    gauss_mass = SQRT_2PI * (2.0 * std_normal_cdf(k) - 1.0)
    m0 = 2.0 * ek / k + gauss_mass
    m2 = 4.0 * ek * (1.0 + k * k) / k ** 3 + gauss_mass
    return _from_moments(m0, m2, "huber")


def vapnik_constants(eps: float) -> NormalizationConstants:
    """Closed-form moments of exp(-rho_vapnik).

    m0 = 2(eps + 1).  The second moment splits into the flat core plus two
    shifted-exponential tails:

        m2 = (2/3) eps^3 + 2 (2 + 2 eps + eps^2),

    since int_0^inf (t + eps)^2 e^{-t} dt = 2 + 2 eps + eps^2.
    """
    if eps < 0:
        raise BadKind("eps must be nonnegative")
    m0 = 2.0 * (eps + 1.0)
    m2 = (2.0 / 3.0) * eps ** 3 + 2.0 * (2.0 + 2.0 * eps + eps * eps)
    return _from_moments(m0, m2, "vapnik")


def _growth_radius(pen: QsPenalty, level: float = 60.0) -> float:
    """Truncation radius: rho grows at least linearly past its level set,
    so rho(+-T) >= level bounds the quadrature tail below 1e-12."""
    t = 1.0
    for _ in range(60):
        if evaluate(pen, t) >= level and evaluate(pen, -t) >= level:
            return t
        t *= 2.0
    raise NotCoercive("penalty does not reach the truncation level")


def _kink_points(pen: QsPenalty, radius: float) -> list[float]:
    pts = set()
    for key in ("kappa", "eps"):
        v = pen.params.get(key)
        if v is not None and 0.0 < v < radius:
            pts.update((-v, v))
    return sorted(pts)


def generic_constants(pen: QsPenalty,
                      rel_tol: float = 1e-10) -> NormalizationConstants:
    """Moments by adaptive quadrature for any coercive symmetric scalar penalty."""
    if pen.n != 1:
        raise BadKind("generic constants are defined for scalar penalties")
    if not is_coercive(pen).coercive:
        raise NotCoercive("exp(-rho) is not integrable")
    for t in (0.3, 0.7, 1.3, 2.9, 5.1):
        if abs(evaluate(pen, t) - evaluate(pen, -t)) > 1e-9 * (1.0 + evaluate(pen, t)):
            raise NotSymmetric(f"rho({t}) != rho({-t})")
    radius = _growth_radius(pen)
    pts = _kink_points(pen, radius)
    f0 = lambda t: math.exp(-evaluate(pen, t))
    f2 = lambda t: t * t * math.exp(-evaluate(pen, t))
    kwargs = dict(limit=400, epsabs=1e-13, epsrel=rel_tol, points=pts or None)
    m0 = quad(f0, -radius, radius, **kwargs)[0]
    m2 = quad(f2, -radius, radius, **kwargs)[0]
    return _from_moments(m0, m2, pen.kind or "generic")


@dataclass(frozen=True)
class StandardBlock:
    """A scalar penalty together with its normalization constants."""

    penalty: QsPenalty
    constants: NormalizationConstants


def standard_block(kind: str, *, kappa: float = 1.0, eps: float = 0.1,
                   lam: float = 1.0) -> StandardBlock:
    """Standardized scalar building block for a catalogue kind."""
    pen = make_catalogue(kind, dim=1, kappa=kappa, eps=eps, lam=lam)
    if kind == "l2":
        consts = NormalizationConstants(SQRT_2PI, 1.0, "l2", SQRT_2PI, SQRT_2PI)
    elif kind == "huber":
        consts = huber_constants(kappa)
    elif kind == "vapnik":
        consts = vapnik_constants(eps)
    else:
        consts = generic_constants(pen)
    return StandardBlock(pen, consts)


class PlqDensity:
    """Density of Q^{1/2} y + mu with independent standardized coordinates."""

    def __init__(self, blocks: list[StandardBlock], mean: np.ndarray, cov: np.ndarray):
        self.blocks = list(blocks)
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        cov = np.asarray(cov, dtype=float)
        n = len(self.blocks)
        if self.mean.shape[0] != n or cov.shape != (n, n):
            raise NonSpdQ(f"need {n}-dim mean and {n}x{n} covariance")
        try:
            self.cov_sqrt = sym_sqrt(cov)
            self.cov_inv_sqrt = sym_inv_sqrt(cov)
        except Exception as exc:
            raise NonSpdQ(str(exc)) from exc
        self.cov = cov
        sign, logdet = np.linalg.slogdet(cov)
        self.log_partition = float(
            sum(math.log(b.constants.c1) for b in self.blocks) + 0.5 * logdet)

    @property
    def n(self) -> int:
        return len(self.blocks)

    def log_density(self, y: np.ndarray) -> float:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        t = self.cov_inv_sqrt @ (y - self.mean)
        total = 0.0
        for bi, ti in zip(self.blocks, t):
            total += evaluate(bi.penalty, bi.constants.c2 * ti)
        return -total - self.log_partition

    def density(self, y: np.ndarray) -> float:
        return math.exp(self.log_density(y))


def make_density(blocks: list[StandardBlock], mean, cov) -> PlqDensity:
    return PlqDensity(blocks, mean, cov)


def log_density(d: PlqDensity, y) -> float:
    return d.log_density(y)


def sample_gaussian_mixture(p: float, sigma1: float, sigma2: float,
                            count: int, seed: int) -> np.ndarray:
    """Draw count samples of (1-p) N(0, sigma1^2) + p N(0, sigma2^2).

    Deterministic given seed; uses numpy's default_rng (PCG64).
    """
    if not 0.0 <= p <= 1.0:
        raise BadFraction(f"p must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    outlier = rng.random(count) < p
    draws = rng.standard_normal(count)
    return np.where(outlier, sigma2 * draws, sigma1 * draws)
