"""Trace functionals, the mass-variation budget, and exact identities.

Everything here consumes trajectories produced by the integrator: the
concentration functional and its time integral, the BV budget with its
negative-part decay envelopes, the second-derivative identity for the mass
balance (exact at the semi-discrete level), and the general-saturation
quantities zeta, Q and C_f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import CapabilityError
from .grid import normalize, moments, quadrature
from .integrator import Trajectory
from .models import BoundCertificate, ModelSpec, rhs


@dataclass
class RunTrace:
    """Verification record of one run at one eps.

    Per-step arrays share the length of t; per-snapshot arrays share the
    length of t_snap.  Envelope constants are filled in by bv_budget.
    """

    eps: float
    t: np.ndarray
    rho: np.ndarray
    rho_dot: np.ndarray
    rho_dot_neg: np.ndarray
    bv_cum: np.ndarray
    b_drive: np.ndarray
    conc_steps: np.ndarray
    t_snap: np.ndarray
    conc: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    support_width: np.ndarray
    max_u: np.ndarray
    fitted_rate: float | None = None
    certified_rate: float | None = None


def concentration_functional(spec: ModelSpec, n) -> float:
    """Instantaneous weighted square of the fitness residual.

    weight n for the mutation-free model, weight G_eps*n for the
    trait-heredity model; defined for linear saturation.
    """
    if spec.family not in ("nM", "ATH") or not spec.linear_saturation or spec.k0 is None:
        raise CapabilityError(
            "concentration functional needs family nM or ATH with linear saturation")
    grid = spec.grid
    values = np.asarray(n.values, dtype=float)
    rho = n.mass
    ck = K.convolve(spec.k0, values, grid=grid)
    resid = ck / rho - spec.nu * rho
    weight = values if spec.family == "nM" else K.convolve(spec.mutation, values, grid=grid)
    return float((grid.weights * weight) @ resid**2)


def build_run_trace(traj: Trajectory) -> RunTrace:
    """Assemble the per-step and per-snapshot verification arrays."""
    spec = traj.spec
    grid = spec.grid
    eps = spec.eps
    t = traj.t_steps
    rho_dot_neg = np.maximum(-traj.rho_dot, 0.0)
    bv_cum = np.concatenate([[0.0], np.cumsum(
        0.5 * (np.abs(traj.rho_dot[1:]) + np.abs(traj.rho_dot[:-1])) * np.diff(t))])

    t_snap = np.asarray(traj.times)
    conc, mean, var, width, max_u = [], [], [], [], []
    supported = spec.family in ("nM", "ATH") and spec.linear_saturation and spec.k0 is not None
    for state in traj.states:
        q = normalize(state)
        m, v = moments(q)
        mean.append(m)
        var.append(v)
        peak = float(np.max(state.values))
        support = state.values > 1e-10 * peak
        width.append(float(np.count_nonzero(support)) * grid.spacing)
        max_u.append(eps * math.log(peak) if peak > 0.0 else -math.inf)
        conc.append(concentration_functional(spec, state) if supported else math.nan)

    return RunTrace(
        eps=eps, t=t, rho=traj.rho, rho_dot=traj.rho_dot,
        rho_dot_neg=rho_dot_neg, bv_cum=bv_cum, b_drive=traj.b_drive,
        conc_steps=traj.conc, t_snap=t_snap,
        conc=np.asarray(conc), mean=np.asarray(mean), var=np.asarray(var),
        support_width=np.asarray(width), max_u=np.asarray(max_u),
    )


def time_integrated_concentration(trace: RunTrace) -> float:
    """Trapezoid-in-time integral of the per-step concentration functional."""
    c = trace.conc_steps
    if np.any(~np.isfinite(c)):
        raise CapabilityError("per-step concentration was not tracked for this run")
    return float(np.trapz(c, trace.t))


def fit_loglog_slope(eps_values, quantities) -> float:
    """Least-squares slope of log(quantity) against log(eps)."""
    eps_values = np.asarray(eps_values, dtype=float)
    quantities = np.asarray(quantities, dtype=float)
    if eps_values.size < 2 or np.any(quantities <= 0.0):
        raise ValueError("slope fit needs >= 2 positive samples")
    return float(np.polyfit(np.log(eps_values), np.log(quantities), 1)[0])


def ddrho_identity_residual(spec: ModelSpec, n) -> float:
    """Relative defect of the exact second-derivative identity for the mass.

    Left side: (eps/2) d(rho_dot)/dt by directional differentiation of the
    mass balance along the semi-discrete flow.  Right side: the drive term
    -(rho_dot / 2 rho^2) int n K0*n plus the concentration integrand over
    eps.  The identity is exact up to round-off for the mutation-free model
    with linear saturation.
    """
    if spec.family != "nM" or not spec.linear_saturation:
        raise CapabilityError("the identity is implemented for nM with linear saturation")
    grid = spec.grid
    w = grid.weights
    nu, eps = spec.nu, spec.eps
    values = np.asarray(n.values, dtype=float)
    rho = n.mass

    c = K.convolve(spec.k0, values, grid=grid)
    i1 = float((w * values) @ c)
    rho_dot = (i1 / rho - nu * rho**2) / eps
    ndot = (c / rho - nu * rho) * values / eps
    ndot_mass = float(w @ ndot)
    # directional derivative of Q(n) = i1/rho - nu rho^2 along ndot;
    # the kernel table is even, so <m, K*n> = <n, K*m> exactly
    dq = (2.0 * float((w * ndot) @ c) / rho
          - i1 * ndot_mass / rho**2
          - 2.0 * nu * rho * ndot_mass)
    lhs = 0.5 * dq  # = (eps/2) * rho_ddot
    resid = c / rho - nu * rho
    rhs_val = -(rho_dot / (2.0 * rho**2)) * i1 + float((w * values) @ resid**2) / eps
    scale = max(abs(lhs), abs(rhs_val))
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs_val) / scale


@dataclass
class BVReport:
    """Budget check for the cumulative variation of the total mass."""

    family: str
    eps: float
    bound: float
    observed: float
    passed: bool
    certified_rate: float
    envelope_ok: bool
    fitted_rate: float | None
    rate_ok: bool | None
    drive_consistent: bool | None
    verdict: str
    notes: list = field(default_factory=list)


def _fit_decay_rate(t, rdn):
    floor = max(1e-12, 1e-10 * float(np.max(rdn, initial=0.0)))
    mask = rdn > floor
    if np.count_nonzero(mask) < 3 or rdn[0] <= floor:
        return None
    # fit only the leading decay segment
    last = np.argmax(~mask) if np.any(~mask) else rdn.size
    sel = slice(0, max(last, 3))
    coef = np.polyfit(t[sel], np.log(rdn[sel]), 1)
    return float(-coef[0])


def bv_budget(trace: RunTrace, cert: BoundCertificate, tol=1e-6,
              rate_slack=0.1) -> BVReport:
    """Evaluate the model-appropriate variation budget and decay envelope.

    The envelope check applies the slack to the certified decay rate.  When
    the budget or envelope fails, the verdict distinguishes a genuine
    violation from a certificate constant that the trajectory itself
    contradicts (drive below the certified rate constant).
    """
    eps = trace.eps
    t = trace.t
    rdn0 = float(trace.rho_dot_neg[0])
    T = float(t[-1])
    family = cert.family
    notes = []

    if family == "nM":
        if cert.kappa2_m is None or cert.kappa2_m <= 0.0:
            raise CapabilityError("budget needs a positive quadratic-form floor")
        rate = cert.kappa2_m / eps
        bound = cert.rho_M + (2.0 * eps / cert.kappa2_m) * rdn0
        envelope = rdn0 * np.exp(-(1.0 - rate_slack) * rate * t)
        drive_floor = cert.kappa2_m
    elif family == "AF":
        cert.require("rho_m")
        c_const = cert.C if cert.C is not None else 0.0
        nr = cert.C1
        if nr is None:
            raise CapabilityError("AF budget needs the decay constant C1 = nu rho_m")
        rate = nr / eps
        bound = (cert.rho_M + (2.0 * eps / nr) * rdn0
                 + (2.0 * c_const / nr) * (T + (eps / nr) * (math.exp(-nr * T / eps) - 1.0)))
        envelope = (rdn0 * np.exp(-(1.0 - rate_slack) * rate * t)
                    + (c_const / nr) * (1.0 - np.exp(-(1.0 - rate_slack) * rate * t)))
        drive_floor = None
    elif family == "ATH":
        cert.require("C1", "C2")
        c1, c2 = cert.C1, cert.C2
        rate = c1 / eps
        bound = (cert.rho_M + 2.0 * rdn0 * (eps / c1) * (1.0 - math.exp(-c1 * T / eps))
                 + 2.0 * (eps * c2 / c1**2) * (math.exp(-c1 * T / eps) - 1.0)
                 + 2.0 * (c2 / c1) * T)
        envelope = (rdn0 * np.exp(-(1.0 - rate_slack) * rate * t)
                    + (c2 / c1) * (1.0 - np.exp(-(1.0 - rate_slack) * rate * t)))
        drive_floor = cert.eta0
    else:
        raise CapabilityError(f"no budget is defined for family {family!r}")

    observed = float(trace.bv_cum[-1])
    passed = observed <= bound + tol
    env_floor = max(1e-12, 1e-12 * max(1.0, rdn0))
    envelope_ok = bool(np.all(trace.rho_dot_neg <= envelope + env_floor))

    fitted = _fit_decay_rate(t, trace.rho_dot_neg)
    rate_ok = None if fitted is None else fitted >= 0.7 * rate

    drive_consistent = None
    if drive_floor is not None and np.all(np.isfinite(trace.b_drive)):
        drive_consistent = bool(np.min(trace.b_drive) >= drive_floor - 1e-10)

    if passed and envelope_ok:
        verdict = "pass"
    elif drive_consistent is False:
        verdict = "certificate-constant-too-small"
        notes.append("trajectory drive dips below the certified rate constant")
    else:
        verdict = "bound-violated"

    trace.fitted_rate = fitted
    trace.certified_rate = rate
    return BVReport(
        family=family, eps=eps, bound=bound, observed=observed, passed=passed,
        certified_rate=rate, envelope_ok=envelope_ok, fitted_rate=fitted,
        rate_ok=rate_ok, drive_consistent=drive_consistent, verdict=verdict,
        notes=notes,
    )


@dataclass
class GeneralRDiagnostics:
    zeta: np.ndarray | None
    Q: float
    C_f: float | None
    predicate_applicable: bool
    predicate_lhs: float | None
    predicate_pass: bool | None
    r1_condition: bool | None


def general_R_diagnostics(spec: ModelSpec, n) -> GeneralRDiagnostics:
    """Trait-resolved fitness zeta, competition pressure Q, and net-fitness sup.

    Also evaluates the sign predicate behind the general-saturation variation
    bound: whenever int q (zeta - R) <= 0, the second moment combination
    int q (zeta - R)(zeta - (R+Q)/2 - int q zeta) must be >= 0.
    """
    if spec.family not in ("ATH", "AF", "nM"):
        raise CapabilityError("general-saturation diagnostics cover the ATH/AF modes")
    grid = spec.grid
    w = grid.weights
    values = np.asarray(n.values, dtype=float)
    rho = n.mass
    rvals = spec.saturation(grid.nodes, rho)
    q = values / rho

    Q = float((w * values) @ spec.saturation.d_rho(grid.nodes, rho))

    zeta = None
    if spec.k0 is not None:
        zeta = K.convolve(spec.k0, values, grid=grid) / rho

    C_f = None
    if spec.fecundity is not None:
        C_f = float(np.max(np.abs(spec.fecundity(grid.nodes) - rvals)))

    applicable = zeta is not None
    lhs = pred = None
    if applicable:
        lhs = float((w * q) @ (zeta - rvals))
        if lhs <= 0.0:
            mean_zeta = float((w * q) @ zeta)
            val = float((w * q) @ ((zeta - rvals) * (zeta - 0.5 * (rvals + Q) - mean_zeta)))
            pred = val >= -1e-12
        else:
            pred = True  # predicate only binds on the decaying side

    r1_cond = None
    if spec.saturation.kind == "separable" and spec.saturation.dr1 is not None:
        ladder = np.linspace(0.1, max(2.0 * rho, 1.0), 7)
        r1_cond = bool(np.all([r * spec.saturation.dr1(r) >= spec.saturation.r1(r) - 1e-12
                               for r in ladder]))

    return GeneralRDiagnostics(
        zeta=zeta, Q=Q, C_f=C_f, predicate_applicable=applicable,
        predicate_lhs=lhs, predicate_pass=pred, r1_condition=r1_cond,
    )
