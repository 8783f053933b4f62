"""Closed dynamics of the normalized profile and its Lyapunov structure.

The generalized mutation-free model reduces to a replicator flow for
q = n/rho with fitness G(x) = (K_S q)(x) - R0(x).  The functional
J(q) = (1/2) double_int K_S q q - int R0 q increases along orbits, its
derivative is the fitness variance, and it is strictly convex whenever the
pair kernel has a positive quadratic form on differences, which pushes local
maxima onto single-point profiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import CapabilityError, ConfigurationError, PreconditionError
from .grid import Grid, ProbabilityState, moments, quadrature
from .models import ModelSpec


@dataclass
class ReplicatorSpec:
    """Pair kernel, trait-dependent death rate, and the designated optimum."""

    k_s: K.TwoArgKernel
    r0: object            # callable death rate of the trait
    grid: Grid
    x_m: float
    x_m_certified: bool = field(init=False)
    x_m_gap: float = field(init=False)

    def __post_init__(self):
        # certify that K_S(x_m, .) - R0 peaks at the node nearest x_m, uniquely
        nodes = self.grid.nodes
        i_m = self.grid.nearest_index(self.x_m)
        landscape = np.asarray(self.k_s(np.full_like(nodes, nodes[i_m]), nodes)) \
            - np.asarray(self.r0(nodes), dtype=float)
        i_best = int(np.argmax(landscape))
        rest = np.delete(landscape, i_best)
        gap = float(landscape[i_best] - np.max(rest))
        scale = max(1.0, float(np.max(np.abs(landscape))))
        self.x_m_gap = gap
        self.x_m_certified = bool(i_best == i_m and gap > 1e-12 * scale)

    def fitness(self, q: ProbabilityState) -> np.ndarray:
        return self.k_s.apply(q.values, grid=self.grid) - np.asarray(
            self.r0(self.grid.nodes), dtype=float)


@dataclass
class LyapunovTrace:
    times: np.ndarray
    J: np.ndarray
    dJdt: np.ndarray
    flatness_residual: np.ndarray
    mean: np.ndarray
    var: np.ndarray


def replicator_rhs(spec: ReplicatorSpec, q: ProbabilityState) -> np.ndarray:
    """q * (fitness - population-average fitness); conserves mass."""
    g = spec.fitness(q)
    avg = quadrature(q.values * g, spec.grid)
    return q.values * (g - avg)


def lyapunov_J(spec: ReplicatorSpec, q: ProbabilityState) -> float:
    half_bilinear = 0.5 * spec.k_s.quadratic_form(q.values, grid=spec.grid)
    return half_bilinear - quadrature(np.asarray(spec.r0(spec.grid.nodes), dtype=float)
                                      * q.values, spec.grid)


def lyapunov_derivative(spec: ReplicatorSpec, q: ProbabilityState) -> float:
    """Variance of the fitness under q; the exact orbital derivative of J."""
    g = spec.fitness(q)
    m1 = quadrature(q.values * g, spec.grid)
    m2 = quadrature(q.values * g**2, spec.grid)
    return max(m2 - m1**2, 0.0)


def lyapunov_chain_rule(spec: ReplicatorSpec, q: ProbabilityState) -> float:
    """dJ/dt evaluated as <dJ/dq, q_dot>; must match the variance formula."""
    g = spec.fitness(q)
    return quadrature(g * replicator_rhs(spec, q), spec.grid)


def flatness_residual(spec: ReplicatorSpec, q: ProbabilityState,
                      support_floor=1e-10) -> float:
    """Max minus min of the fitness on the numerical support of q."""
    g = spec.fitness(q)
    support = q.values > support_floor * float(np.max(q.values))
    if not np.any(support):
        return 0.0
    return float(np.max(g[support]) - np.min(g[support]))


@dataclass
class ConvexityReport:
    segment_identity_max_error: float
    quadratic_forms: list
    violations: list
    passed: bool


def convexity_certificate(spec: ReplicatorSpec, pairs, thetas=(0.25, 0.5, 0.75)) -> ConvexityReport:
    """Check the exact segment identity for J and the positivity of the
    quadratic form on profile differences.

    J(th q1 + (1-th) q2) = th J(q1) + (1-th) J(q2)
                           - th (1-th) double_int K_S (q1-q2)(q1-q2).
    Nonpositive forms are listed as violations of the positivity assumption.
    """
    worst = 0.0
    forms = []
    violations = []
    for idx, (q1, q2) in enumerate(pairs):
        diff = q1.values - q2.values
        form = spec.k_s.quadratic_form(diff, grid=spec.grid)
        forms.append(form)
        same = bool(np.array_equal(q1.values, q2.values))
        if form <= 0.0 and not same:
            violations.append((idx, form))
        j1, j2 = lyapunov_J(spec, q1), lyapunov_J(spec, q2)
        for th in thetas:
            mix = ProbabilityState(spec.grid, th * q1.values + (1.0 - th) * q2.values)
            lhs = lyapunov_J(spec, mix)
            rhs = th * j1 + (1.0 - th) * j2 - th * (1.0 - th) * form
            worst = max(worst, abs(lhs - rhs))
    scale = max(1.0, max((abs(f) for f in forms), default=1.0))
    return ConvexityReport(
        segment_identity_max_error=worst, quadratic_forms=forms,
        violations=violations, passed=(worst <= 1e-10 * scale and not violations),
    )


@dataclass
class ReplicatorRunConfig:
    t_end: float = 50.0
    dt_init: float = 0.05
    dt_max: float = 0.5
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    locality_radius: float | None = None   # default: 10% of the domain width
    locality_mass: float = 0.9
    record_every: int = 1


def integrate_replicator(spec: ReplicatorSpec, q0: ProbabilityState,
                         config: ReplicatorRunConfig):
    """Adaptive RK4 on the replicator flow with per-step renormalization.

    Returns (trace, final_q).  Renormalization removes the O(round-off) mass
    drift; clipping below zero is tracked the same way as in the density
    integrator.
    """
    grid = spec.grid

    def f(v):
        g = spec.k_s.apply(v, grid=grid) - np.asarray(spec.r0(grid.nodes), dtype=float)
        avg = quadrature(v * g, grid)
        return v * (g - avg)

    def substep(v, dt):
        k1 = f(v)
        k2 = f(v + 0.5 * dt * k1)
        k3 = f(v + 0.5 * dt * k2)
        k4 = f(v + dt * k3)
        return v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    v = np.asarray(q0.values, dtype=float)
    t = 0.0
    dt = config.dt_init
    rows = []

    def record(tv, vv):
        q = ProbabilityState(grid, vv)
        m, var = moments(q)
        rows.append((tv, lyapunov_J(spec, q), lyapunov_derivative(spec, q),
                     flatness_residual(spec, q), m, var))

    record(t, v)
    k = 0
    while t < config.t_end - 1e-12 * config.t_end:
        dt = min(dt, config.t_end - t)
        while True:
            big = substep(v, dt)
            half = substep(v, 0.5 * dt)
            small = substep(half, 0.5 * dt)
            scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(big), np.abs(small))
            err = float(np.max(np.abs(small - big) / scale)) / 15.0
            if math.isfinite(err) and err <= 1.0:
                break
            dt *= min(max(0.9 * err ** (-0.2), 0.2), 0.9) if math.isfinite(err) else 0.5
            if dt < 1e-13 * config.t_end:
                raise ConfigurationError("replicator step size underflow")
        v = np.clip(small, 0.0, None)
        v /= quadrature(v, grid)
        t += dt
        dt = min(dt * min(max(0.9 * err ** (-0.2), 0.2), 5.0), config.dt_max)
        k += 1
        if k % config.record_every == 0:
            record(t, v)
    if rows[-1][0] != t:
        record(t, v)
    arr = np.asarray(rows)
    trace = LyapunovTrace(times=arr[:, 0], J=arr[:, 1], dJdt=arr[:, 2],
                          flatness_residual=arr[:, 3], mean=arr[:, 4], var=arr[:, 5])
    return trace, ProbabilityState(grid, v)


@dataclass
class StabilityVerdict:
    verdict: str            # converged | degenerate | not-converged
    trace: LyapunovTrace
    final_mean: float
    final_var: float
    J_monotone: bool
    max_J_drop: float


def run_to_stability(spec: ReplicatorSpec, q0: ProbabilityState,
                     config: ReplicatorRunConfig | None = None) -> StabilityVerdict:
    """Integrate near the designated optimum and classify the outcome.

    The stability statement is local: q0 must carry at least the configured
    mass fraction within the locality radius of x_m.
    """
    config = config or ReplicatorRunConfig()
    grid = spec.grid
    radius = config.locality_radius
    if radius is None:
        radius = 0.1 * (grid.x_max - grid.x_min)
    near = np.abs(grid.nodes - spec.x_m) <= radius
    local_mass = quadrature(np.where(near, q0.values, 0.0), grid)
    if local_mass < config.locality_mass:
        raise PreconditionError(
            f"initial profile carries {local_mass:.3f} mass within radius "
            f"{radius:.3g} of the optimum; need >= {config.locality_mass}")

    trace, q_end = integrate_replicator(spec, q0, config)
    drops = np.diff(trace.J)
    max_drop = float(max(-np.min(drops, initial=0.0), 0.0))
    j_scale = max(1.0, float(np.max(np.abs(trace.J))))
    monotone = max_drop <= 10.0 * config.rel_tol * j_scale

    mean, var = moments(q_end)
    h = grid.spacing
    if float(np.max(trace.J) - np.min(trace.J)) <= 1e-12 * j_scale:
        verdict = "degenerate"
    elif var < (2.0 * h) ** 2 and abs(mean - spec.x_m) < 2.0 * h and monotone:
        verdict = "converged"
    else:
        verdict = "not-converged"
    return StabilityVerdict(verdict=verdict, trace=trace, final_mean=mean,
                            final_var=var, J_monotone=monotone, max_J_drop=max_drop)


@dataclass
class MutationalLyapunovReport:
    J_eps: float
    lyap1: list            # (lhs, rhs, margin) per probe
    lyap2: list | None
    af_decomposition: dict | None


def lyapunov_mutational(spec: ModelSpec, r0, q: ProbabilityState,
                        xi_probes) -> MutationalLyapunovReport:
    """Mutation-aware Lyapunov candidate J_eps and its sufficient hypotheses.

    Evaluates J_eps(q) with the symmetrized triple kernel, the
    fecundity-increase inequality and (for offspring-structured families) the
    death-decrease inequality on each probe, reporting margins only; the
    hypotheses are sufficient conditions and are never asserted.  For the
    asymmetric-fecundity family with constant fecundity the orbital
    derivative display is decomposed into its variance and fecundity-weighted
    parts.
    """
    grid = spec.grid
    if grid.n_points > K._MAX_DENSE_TENSOR_POINTS:
        raise ConfigurationError("mutational Lyapunov evaluation needs a small grid")
    tensor = K._dense_triple_tensor(spec, grid)   # raises CapabilityError for nM/gnM
    ks = 0.5 * (tensor + np.transpose(tensor, (0, 2, 1)))
    w = grid.weights
    r0v = np.asarray(r0(grid.nodes), dtype=float)

    def j_eps(values):
        wq = w * values
        return 0.5 * float(w @ (ks @ wq @ wq)) - float((w * r0v) @ values)

    def triple_form(values):
        wq = w * values
        return float(w @ (ks @ wq @ wq))

    lyap1 = []
    lyap2 = []
    for xi in xi_probes:
        wxi = w * xi.values
        inner = np.tensordot(np.tensordot(ks, wxi, axes=(2, 0)), wxi, axes=(1, 0))
        lhs5 = float(w @ (np.tensordot(ks, w * inner, axes=(1, 0)) @ wxi))
        rhs5 = triple_form(xi.values) ** 2
        lyap1.append((lhs5, rhs5, lhs5 - rhs5))
        if spec.family == "AF":
            atab = tensor / np.maximum(spec.fecundity(grid.nodes)[None, :, None], 1e-300)
            rhs2 = float((w * r0v) @ (atab @ wxi @ wxi))
            lhs2 = float((w * r0v) @ xi.values)
            lyap2.append((lhs2, rhs2, lhs2 - rhs2))

    af_dec = None
    if spec.family == "AF" and spec.fecundity.is_constant:
        b = spec.fecundity.constant_value
        wq = w * q.values
        m1 = float((w * r0v) @ q.values)
        m2 = float((w * r0v**2) @ q.values)
        atab = tensor / b
        mixed = float((w * r0v) @ (atab @ wq @ wq))
        af_dec = {
            "variance_term": m2 - m1**2,
            "b_weighted_term": b * (m1 - mixed),
            "total": (m2 - m1**2) + b * (m1 - mixed),
        }

    return MutationalLyapunovReport(
        J_eps=j_eps(q.values), lyap1=lyap1,
        lyap2=lyap2 if lyap2 else None, af_decomposition=af_dec,
    )
