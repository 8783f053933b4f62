"""Stiff time advancement with positivity preservation and step control.

Two schemes.  `explicit-rk4` is the classical method with a step-doubling
error estimate.  `exponential-split` is a Strang splitting that treats the
local death term exactly, n <- n * exp(-dt R(x, rho)/eps), around an explicit
midpoint stage for the birth term; since the birth operator maps nonnegative
states to nonnegative states, the split scheme preserves positivity for any
step size, and only accuracy limits dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import ExtinctionError, IntegrationError, StiffnessError
from .grid import DensityState, quadrature
from .models import ModelSpec, _RawState, _rhs_values

_SCHEMES = ("explicit-rk4", "exponential-split")


@dataclass
class IntegratorConfig:
    scheme: str = "exponential-split"
    dt_init: float = 1e-3
    dt_max: float = 0.1
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    t_end: float = 1.0
    positivity_clamp_threshold: float = 1e-12
    snapshot_budget: int = 400
    track_diagnostics: bool = True

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_init <= dt_max")
        if self.rel_tol <= 0.0 or self.abs_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")


@dataclass
class StepMonitor:
    """Per-run accounting of clamping and bound violations."""

    clamped_mass: float = 0.0
    min_before_clamp: float = 0.0
    boundary_leak_steps: int = 0
    upper_bound_violations: int = 0     # rho > rho_M with rho_dot >= 0
    lower_bound_violations: int = 0     # rho < rho_m with rho_dot <= 0


@dataclass
class Trajectory:
    """Snapshots plus full-resolution scalar records of one integration."""

    spec: ModelSpec
    config: IntegratorConfig
    times: list = field(default_factory=list)          # snapshot times
    states: list = field(default_factory=list)         # DensityState snapshots
    t_steps: np.ndarray | None = None                  # every accepted step
    rho: np.ndarray | None = None
    rho_dot: np.ndarray | None = None
    b_drive: np.ndarray | None = None                  # birth quadratic form / rho^2
    conc: np.ndarray | None = None                     # concentration integrand
    monitor: StepMonitor = field(default_factory=StepMonitor)
    completed: bool = False

    def final_state(self) -> DensityState:
        return self.states[-1]


def _birth_values(spec, values, mass):
    return K.birth_term(spec, _RawState(spec.grid, values, mass))


def _death_half(spec, values, s):
    """Exponential death flow over s with a midpoint total mass.

    R depends on the decaying mass, so the coefficient is evaluated at the
    substep midpoint (second order) before the exact exponential is applied.
    """
    grid = spec.grid
    eps = spec.eps
    mass = quadrature(values, grid)
    if not mass > 0.0:
        raise ExtinctionError("mass vanished during splitting")
    v_half = values * np.exp(-(0.5 * s / eps) * spec.saturation(grid.nodes, mass))
    m_mid = quadrature(v_half, grid)
    return values * np.exp(-(s / eps) * spec.saturation(grid.nodes, m_mid))


def _split_substep(spec, values, dt):
    """One Strang step: death half, explicit midpoint birth, death half.

    Every stage maps nonnegative states to nonnegative states.
    """
    eps = spec.eps
    v = _death_half(spec, values, 0.5 * dt)

    m1 = quadrature(v, spec.grid)
    if not m1 > 0.0:
        raise ExtinctionError("mass vanished during splitting")
    b1 = _birth_values(spec, v, m1)
    vm = v + (0.5 * dt / eps) * b1
    mm = quadrature(vm, spec.grid)
    bm = _birth_values(spec, vm, mm)
    v = v + (dt / eps) * bm

    return _death_half(spec, v, 0.5 * dt)


def _rk4_substep(spec, values, dt):
    grid = spec.grid

    def f(v):
        return _rhs_values(spec, v, quadrature(v, grid))

    k1 = f(values)
    k2 = f(values + 0.5 * dt * k1)
    k3 = f(values + 0.5 * dt * k2)
    k4 = f(values + dt * k3)
    return values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_ORDERS = {"explicit-rk4": 4, "exponential-split": 2}
_SUBSTEPS = {"explicit-rk4": _rk4_substep, "exponential-split": _split_substep}


def _clamp(values, threshold_rel, monitor, grid):
    neg = values < 0.0
    if not np.any(neg):
        return values
    floor = -threshold_rel * float(np.max(values, initial=0.0))
    worst = float(np.min(values))
    monitor.min_before_clamp = min(monitor.min_before_clamp, worst)
    if worst < floor:
        return None  # too negative to clamp silently; caller retries smaller
    clamped = np.where(neg, 0.0, values)
    monitor.clamped_mass += abs(quadrature(np.where(neg, values, 0.0), grid))
    return clamped


def step(spec: ModelSpec, n: DensityState, dt: float, config: IntegratorConfig,
         monitor: StepMonitor | None = None):
    """Advance one accepted step from n.

    Returns (n_next, dt_used, error_estimate, dt_next).  Step-doubling gives
    the error estimate; dt halves until the scaled error passes, and the
    controller proposes the next size.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not n.mass > 0.0:
        raise ExtinctionError(f"cannot step a state with mass {n.mass!r}")
    monitor = monitor if monitor is not None else StepMonitor()
    substep = _SUBSTEPS[config.scheme]
    order = _ORDERS[config.scheme]
    values = np.asarray(n.values, dtype=float)
    grid = spec.grid

    while True:
        if dt < 1e-14 * config.t_end:
            raise StiffnessError(
                f"step size underflow (dt={dt:.3e}); the problem looks "
                "misconfigured for this scheme/tolerance")
        try:
            big = substep(spec, values, dt)
            half = substep(spec, values, 0.5 * dt)
            small = substep(spec, half, 0.5 * dt)
        except (ExtinctionError, StiffnessError):
            dt *= 0.5
            continue
        if not (np.all(np.isfinite(big)) and np.all(np.isfinite(small))):
            dt *= 0.5
            continue

        small_c = _clamp(small, config.positivity_clamp_threshold, monitor, grid)
        if small_c is None:
            dt *= 0.5
            continue

        scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(big), np.abs(small))
        err = float(np.max(np.abs(small - big) / scale)) / (2.0**order - 1.0)
        if not math.isfinite(err):
            dt *= 0.5
            continue
        if err <= 1.0:
            factor = 0.9 * err ** (-1.0 / (order + 1.0)) if err > 0.0 else 5.0
            dt_next = min(dt * min(max(factor, 0.2), 5.0), config.dt_max)
            return DensityState(grid, small_c), dt, err, dt_next
        dt *= min(max(0.9 * err ** (-1.0 / (order + 1.0)), 0.2), 0.9)


def _record_step(spec, state, cert, cfg, monitor, recs):
    rho = state.mass
    rdot = quadrature(_rhs_values(spec, state.values, rho), spec.grid)
    b = math.nan
    conc = math.nan
    if cfg.track_diagnostics and spec.family in ("nM", "ATH") and spec.k0 is not None:
        ck = K.convolve(spec.k0, state.values, grid=spec.grid)
        w = spec.grid.weights
        if spec.family == "nM":
            b = float((w * state.values) @ ck) / rho**2
            if spec.linear_saturation:
                resid = ck / rho - spec.nu * rho
                conc = float((w * state.values) @ resid**2)
        else:
            cg = K.convolve(spec.mutation, state.values, grid=spec.grid)
            b = float(w @ (ck * cg)) / rho**2
            if spec.linear_saturation:
                resid = ck / rho - spec.nu * rho
                conc = float((w * cg) @ resid**2)
    if cert is not None:
        if rho > cert.rho_M + 1e-9 and rdot >= 0.0:
            monitor.upper_bound_violations += 1
        if cert.rho_m is not None and rho < cert.rho_m - 1e-9 and rdot <= 0.0:
            monitor.lower_bound_violations += 1
    vmax = float(np.max(state.values))
    if vmax > 0.0 and max(state.values[0], state.values[-1]) > 1e-12 * vmax:
        monitor.boundary_leak_steps += 1
    recs.append((rho, rdot, b, conc))


def integrate(spec: ModelSpec, n0: DensityState, config: IntegratorConfig,
              certificate=None) -> Trajectory:
    """Advance n0 to t_end, recording scalars at every accepted step.

    Snapshots are decimated to the configured budget by stride doubling.
    Deterministic for a fixed config.  On failure the partial trajectory is
    attached to the raised IntegrationError.
    """
    traj = Trajectory(spec=spec, config=config)
    monitor = traj.monitor
    t = 0.0
    state = n0
    dt = config.dt_init

    times = [0.0]
    snaps = [state]
    stride = 1
    step_index = 0
    t_list = [0.0]
    recs = []
    _record_step(spec, state, certificate, config, monitor, recs)

    def finalize(completed):
        traj.times = times
        traj.states = snaps
        traj.t_steps = np.asarray(t_list)
        arr = np.asarray(recs, dtype=float)
        traj.rho = arr[:, 0]
        traj.rho_dot = arr[:, 1]
        traj.b_drive = arr[:, 2]
        traj.conc = arr[:, 3]
        traj.completed = completed
        return traj

    while t < config.t_end - 1e-14 * config.t_end:
        dt = min(dt, config.t_end - t)
        try:
            state, dt_used, _, dt = step(spec, state, dt, config, monitor)
        except (StiffnessError, ExtinctionError) as exc:
            finalize(False)
            raise IntegrationError(str(exc), partial=traj) from exc
        t += dt_used
        step_index += 1
        t_list.append(t)
        _record_step(spec, state, certificate, config, monitor, recs)
        if step_index % stride == 0:
            times.append(t)
            snaps.append(state)
            if len(snaps) > config.snapshot_budget:
                times[:] = times[::2]
                snaps[:] = snaps[::2]
                stride *= 2
    if times[-1] != t:
        times.append(t)
        snaps.append(state)
    return finalize(True)
