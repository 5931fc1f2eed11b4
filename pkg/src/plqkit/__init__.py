"""plqkit: quadratic-support penalties, densities, interior-point solvers,
and linear-time robust Kalman smoothing."""

from . import admm, bench, densities, errors, ipsolve, kalman, linalg, penalties
from .densities import (
    NormalizationConstants,
    PlqDensity,
    generic_constants,
    huber_constants,
    log_density,
    make_density,
    sample_gaussian_mixture,
    standard_block,
    std_normal_cdf,
    vapnik_constants,
)
from .ipsolve import (
    KktState,
    PlqProblem,
    SolveOptions,
    SolveStats,
    assemble_problem,
    init_strictly_feasible,
    kkt_residual,
    newton_step,
    objective_value,
    solve,
)
from .kalman import (
    SmootherSpec,
    SmoothResult,
    StateSpaceModel,
    build_spline_model,
    smooth_plq,
    smooth_quadratic,
    stack_problem,
    statistical_weight,
    support_vectors,
)
from .linalg import BlockTridiagonal, DenseSpd, block_tridiag_solve, chol_solve, rank_check
from .penalties import (
    CoercivityCertificate,
    IntervalProduct,
    QsPenalty,
    check_ip_condition,
    domain_check,
    evaluate,
    evaluate_primal,
    is_coercive,
    make_catalogue,
    make_penalty,
    precompose_affine,
    project_box,
    scale_penalty,
    sum_penalties,
)

__version__ = "0.1.0"
