"""Simulator and verification toolkit for rescaled selection-mutation models
of trait-structured sexual populations.

The package integrates the mutation-free, generalized mutation-free,
asymmetric-fecundity and asymmetric-trait-heredity model families on a 1-D
trait lattice and numerically certifies the quantitative statements they
satisfy: total-mass bounds, non-extinction floors, variation budgets with
decay envelopes, concentration-order sweeps, replicator/Lyapunov stability,
stationary point-mass systems with evolutionary-stability audits, and the
log-density (Hopf-Cole) estimates behind the constrained Hamilton-Jacobi
limit.
"""

from .grid import (
    DensityState,
    Grid,
    ProbabilityState,
    grid_delta,
    moments,
    normalize,
    quadrature,
)
from .kernels import (
    Fecundity,
    MutationKernel,
    OffspringDistribution,
    SaturationTerm,
    SymmetricKernel,
    TwoArgKernel,
    birth_term,
    check_alpha_assumption,
    check_ge_convergence,
    convolve,
    default_probe_family,
    eta_estimate,
    kappa_bounds,
)
from .models import (
    BoundCertificate,
    ModelSpec,
    double_bump,
    gaussian_bump,
    hopf_cole_initial,
    rhs,
    rho_rhs,
    uniform_density,
    validate,
)
from .integrator import IntegratorConfig, Trajectory, integrate, step
from .diagnostics import (
    RunTrace,
    build_run_trace,
    bv_budget,
    concentration_functional,
    ddrho_identity_residual,
    fit_loglog_slope,
    general_R_diagnostics,
    time_integrated_concentration,
)
from .replicator import (
    LyapunovTrace,
    ReplicatorRunConfig,
    ReplicatorSpec,
    convexity_certificate,
    integrate_replicator,
    lyapunov_J,
    lyapunov_derivative,
    lyapunov_mutational,
    replicator_rhs,
    run_to_stability,
)
from .dirac import DiracSystem, esd_check, monomorphism_witness, solve_dirac_system, verify_kdd
from .hopfcole import (
    Hamiltonian,
    HopfColeField,
    appendix_bound_suite,
    eps_level_hj_residual,
    hopf_cole,
    laplace_transform,
    limit_hj_step,
    minimize_m,
    support_identification,
)

__version__ = "0.1.0"
