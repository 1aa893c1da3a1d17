"""Moment-hierarchy simulator for a quantum oscillator coupled to a classical one."""

from .dynamics import (
    HybridState,
    IntegrationError,
    IntegratorConfig,
    InvalidStateError,
    Trajectory,
    detect_zero_crossing,
    integrate,
    mean_energy,
    mean_rhs,
    moment_rhs,
)
from .expansions import (
    CorrelatedInitialData,
    ExpansionCoefficients,
    closed_form_expansion,
    expansion_example1,
    expansion_example2,
    expansion_example2_correlated,
    expansion_general_linear,
    expansion_single_dof,
    max_relative_error,
    numeric_taylor,
    t_star_bound_general,
    t_star_bound_quadratic,
)
from .koopman import (
    KoopmanCoupling,
    KoopmanState,
    KoopmanTrajectory,
    backreaction_deviation,
    constrained_coupling,
    growth_exponent,
    koopman_integrate,
    koopman_rhs_constrained,
    koopman_rhs_general,
)
from .oracle import (
    Ensemble,
    MomentEstimate,
    OracleComparison,
    compare_with_hierarchy,
    estimate_f,
    estimate_moment,
    estimate_moments,
    evolve_ensemble,
    oracle_supported,
    sample_gaussian,
)
from .potentials import (
    PolynomialPotential,
    ScenarioParams,
    partial_derivative,
    preset,
    preset_example1,
    preset_example2,
    preset_quadratic,
)
from .states import (
    CovarianceMatrix,
    GaussianStateSpec,
    MeanVector,
    MomentTable,
    build_moment_table,
    cup_check,
    hur_from_covariance,
    hur_value,
    positive_definite,
    symplectic_check,
    symplectic_eigenvalues,
    wick_moment,
    wigner_density,
)

__version__ = "0.1.0"
