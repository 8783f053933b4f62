"""Stationary point-mass systems and evolutionary stability checks.

A stationary combination of point masses at x_1 < ... < x_N must equalize
the convolved kernel on its support: with matrix entries K0(x_i - x_j), the
weight vector P solves K P = 1, the total mass is rho = 1/(nu 1^T P) and the
atom masses are rho_i = nu P_i rho^2.  Feasibility (P > 0) is not guaranteed
and is reported as a verdict, not an exception.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import CapabilityError, PreconditionError
from .grid import DensityState
from .kernels import SymmetricKernel, convolve

_SINGULAR_THRESHOLD = 1e-12


@dataclass
class DiracSystem:
    """Support points, kernel matrix, solved weights and atom masses."""

    points: np.ndarray
    matrix: np.ndarray
    nu: float
    verdict: str                      # feasible | sign-infeasible | singular
    P: np.ndarray | None = None
    rho: float | None = None
    masses: np.ndarray | None = None
    residual: float | None = None

    @property
    def feasible(self) -> bool:
        return self.verdict == "feasible"


def solve_dirac_system(k0: SymmetricKernel, points, nu) -> DiracSystem:
    """Assemble and solve the stationarity system for point supports.

    Dense LU with partial pivoting; verdicts: feasible (P > 0 componentwise),
    sign-infeasible (some P_i <= 0), singular (determinant below threshold
    relative to the matrix scale).
    """
    points = np.sort(np.asarray(points, dtype=float))
    if points.size < 1:
        raise PreconditionError("need at least one support point")
    if points.size > 1 and np.min(np.diff(points)) == 0.0:
        raise PreconditionError("support points must be distinct")
    nu = float(nu)
    if nu <= 0.0:
        raise PreconditionError("nu must be positive")

    mat = k0(points[:, None] - points[None, :])
    norm = np.linalg.norm(mat, 2)
    n = points.size
    sign, logdet = np.linalg.slogdet(mat)
    if norm == 0.0 or sign == 0.0 or \
            logdet - n * np.log(norm) < np.log(_SINGULAR_THRESHOLD):
        return DiracSystem(points=points, matrix=mat, nu=nu, verdict="singular")

    lu, piv = lu_factor(mat)
    P = lu_solve((lu, piv), np.ones(n))
    residual = float(np.max(np.abs(mat @ P - 1.0)))
    if np.any(P <= 0.0):
        return DiracSystem(points=points, matrix=mat, nu=nu,
                           verdict="sign-infeasible", P=P, residual=residual)
    rho = 1.0 / (nu * float(np.sum(P)))
    masses = nu * P * rho**2
    return DiracSystem(points=points, matrix=mat, nu=nu, verdict="feasible",
                       P=P, rho=rho, masses=masses, residual=residual)


def verify_kdd(system: DiracSystem) -> float:
    """Max defect of the equal-fitness condition sum_j (rho_j/rho) K0(x_i-x_j) = nu rho."""
    if not system.feasible:
        raise PreconditionError(f"system verdict is {system.verdict!r}, not feasible")
    lhs = system.matrix @ (system.masses / system.rho)
    return float(np.max(np.abs(lhs - system.nu * system.rho)))


@dataclass
class ESDVerdict:
    is_esd: bool
    target: float                     # nu rho_bar^2
    support_residual: float           # worst |K_bar - target| on the support
    worst_point: float | None         # worst violator of the global inequality
    worst_excess: float               # max(K_bar - target) off support


def esd_check(k0: SymmetricKernel, candidate, nu, audit_grid) -> ESDVerdict:
    """Evolutionary stability audit of a stationary candidate.

    Equality of the convolved kernel with nu rho^2 on the support, and the
    inequality K0 * n <= nu rho^2 everywhere on the audit grid, both within
    1e-8 relative to nu rho^2.
    """
    nu = float(nu)
    if isinstance(candidate, DiracSystem):
        if not candidate.feasible:
            raise PreconditionError("ESD audit needs a feasible system")
        rho_bar = candidate.rho
        support_pts = candidate.points

        def kbar(x):
            x = np.asarray(x, dtype=float)
            return (candidate.masses[None, :]
                    * k0(x[:, None] - candidate.points[None, :])).sum(axis=1)
    else:
        n = candidate
        if not n.mass > 0.0:
            raise PreconditionError("ESD audit needs positive mass")
        rho_bar = n.mass
        peak = float(np.max(n.values))
        support_pts = n.grid.nodes[n.values > 1e-10 * peak]
        conv = convolve(k0, n)
        grid_nodes = n.grid.nodes

        def kbar(x):
            return np.interp(np.asarray(x, dtype=float), grid_nodes, conv)

    target = nu * rho_bar**2
    tol = 1e-8 * target
    support_residual = float(np.max(np.abs(kbar(support_pts) - target)))
    audit = np.asarray(audit_grid, dtype=float)
    excess = kbar(audit) - target
    i_worst = int(np.argmax(excess))
    worst_excess = float(excess[i_worst])
    ok = support_residual <= tol and worst_excess <= tol
    return ESDVerdict(
        is_esd=bool(ok), target=target, support_residual=support_residual,
        worst_point=None if ok else float(audit[i_worst]),
        worst_excess=worst_excess,
    )


def monomorphism_witness(k0: SymmetricKernel, system: DiracSystem) -> float:
    """Slope of the convolved kernel at the leftmost support point.

    For a strictly radial-decreasing differentiable kernel and N >= 2 the
    slope is positive, certifying that the multi-point configuration cannot
    satisfy the global stability inequality.
    """
    if not system.feasible:
        raise PreconditionError("witness needs a feasible system")
    if system.points.size < 2:
        raise PreconditionError("witness is defined for N >= 2 support points")
    if not k0.is_radial_decreasing():
        raise CapabilityError("witness needs a strictly radial-decreasing kernel")
    x1 = system.points[0]
    value = float(np.sum(system.masses * k0.derivative(x1 - system.points)))
    return value
