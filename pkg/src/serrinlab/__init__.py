"""Periodic Serrin domains, their Cheeger calibration, and CMC graphs over them."""

from .errors import (
    BadSlab,
    CEpsNonPositive,
    ConfigError,
    NewtonStagnation,
    NoBifurcationInRange,
    NonConvergence,
    NonPositiveProfile,
    NotSerrin,
    SerrinLabError,
    SingularGrid,
    SolverDivergence,
    UnboundedSuspected,
    UnsupportedDimension,
)
from .geometry import (
    MappedGrid,
    ParallelProfile,
    ProfileDomain,
    build_profile,
    generate_grid,
    lateral_perimeter_in_slab,
    phi_derivative,
    phi_eval,
    volume_in_slab,
)
from .torsion import (
    TorsionSolution,
    gradient_bound_margin,
    normal_derivative_profile,
    serrin_residual,
    solve_torsion,
)
from .serrin_finder import (
    BranchPoint,
    continue_branch,
    detect_bifurcation_period,
    newton_solve_profile,
)
from .cheeger import (
    CheegerCalibrationReport,
    Slab,
    cheeger_quotient,
    one_laplacian_check,
    subset_oracle,
    tv_relaxed_minimize,
    verify_calibration,
)
from .cmc import (
    CMCSolution,
    curvature_residual_field,
    shift_periodicity_check,
    solve_cmc_eps,
    solve_cmc_limit,
)

__version__ = "0.1.0"
