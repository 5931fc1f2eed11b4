"""Exception hierarchy for plqkit."""


class PlqError(Exception):
    """Base class for all plqkit errors."""


# -- penalty construction / evaluation --------------------------------------

class NonPsdM(PlqError):
    """Curvature matrix M has an eigenvalue below tolerance."""


class NonInjectiveB(PlqError):
    """B has a nontrivial null space."""


class NonInjectiveComposite(PlqError):
    """B @ S has a nontrivial null space after affine precomposition."""


class EmptyU(PlqError):
    """The dual constraint set U is empty."""


class BadParameter(PlqError):
    """Invalid catalogue parameter (kappa, eps, lam, dim)."""


class DimensionMismatch(PlqError):
    """Operands have incompatible shapes."""


class EvaluationDidNotConverge(PlqError):
    """Dual maximization hit its iteration cap without converging."""


class SingularM(PlqError):
    """M is singular where a positive definite M is required."""


class UnsupportedU(PlqError):
    """Operation requires an interval-product U."""


# -- densities ---------------------------------------------------------------

class NotCoercive(PlqError):
    """Penalty is not coercive; exp(-rho) is not integrable."""


class NotSymmetric(PlqError):
    """Penalty is not symmetric about the origin."""


class NonSpdQ(PlqError):
    """Covariance is not symmetric positive definite."""


class BadFraction(PlqError):
    """Mixture fraction outside [0, 1]."""


# -- linear algebra ----------------------------------------------------------

class NotPositiveDefinite(PlqError):
    """Cholesky factorization failed."""


# -- interior point ----------------------------------------------------------

class SingularG(PlqError):
    """Process matrix G is numerically singular."""


class SingularT(PlqError):
    """Reduced Newton matrix T is singular (degeneracy condition violated)."""


class NoInteriorFound(PlqError):
    """No strictly feasible starting point could be constructed."""


class IterationLimit(PlqError):
    """Solver hit its iteration cap before reaching tolerance."""


class NumericalBreakdown(PlqError):
    """Solver state became unusable (non-finite values or singular system)."""


class ConditionViolated(PlqError):
    """A per-block finiteness/nondegeneracy condition failed."""


# -- smoothing ---------------------------------------------------------------

class NotEpsilonLoss(PlqError):
    """Support vectors require an epsilon-insensitive measurement loss."""


class BadKind(PlqError):
    """Unknown penalty kind."""


# -- ADMM --------------------------------------------------------------------

class InnerSolveFailed(PlqError):
    """Inner subproblem solver failed to reach its tolerance."""


class LineSearchFailed(PlqError):
    """Line search could not find an acceptable step."""
