"""Model assembly: right-hand sides, the mass balance, and validation.

A ModelSpec fixes one of the five equations (nM, gnM, AF, ATH, general) on a
grid with its kernels, saturation term and eps.  `rhs` is the un-rescaled
semi-discrete time derivative; `validate` runs every applicable structural
and certificate check and returns a BoundCertificate with the mass bounds
rho_M (upper) and rho_m (lower, when a non-extinction route certifies one).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels as K
from .errors import ConfigurationError, ExtinctionError, StiffnessError
from .grid import DensityState, Grid, normalize, quadrature

_FAMILIES = ("nM", "gnM", "AF", "ATH", "general")


@dataclass
class ModelSpec:
    """Family tag plus everything the right-hand side needs."""

    family: str
    grid: Grid
    eps: float
    saturation: K.SaturationTerm
    k0: K.SymmetricKernel | None = None
    mutation: K.MutationKernel | None = None
    fecundity: K.Fecundity | None = None
    offspring: K.OffspringDistribution | None = None
    k1: K.TwoArgKernel | None = None
    k_s: K.TwoArgKernel | None = None
    k_triple: object = None
    rhs_ceiling: float = 1e12

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigurationError(f"unknown model family {self.family!r}")
        if not 0.0 < self.eps <= 1.0:
            raise ConfigurationError(f"eps must lie in (0, 1], got {self.eps}")
        need = {
            "nM": ("k0",),
            "gnM": ("k_s",),
            "AF": ("fecundity", "offspring"),
            "ATH": ("mutation",),
            "general": ("k_triple",),
        }[self.family]
        for name in need:
            if getattr(self, name) is None:
                raise ConfigurationError(f"family {self.family!r} requires {name}")
        if self.family == "ATH" and self.k0 is None and self.k1 is None:
            raise ConfigurationError("ATH requires k0 or k1")
        # keep a single source of truth for eps in the rescaled kernels
        if self.mutation is not None and self.mutation.eps != self.eps:
            self.mutation = self.mutation.with_eps(self.eps)
        if self.offspring is not None and self.offspring.eps != self.eps:
            self.offspring = self.offspring.with_eps(self.eps)

    def with_eps(self, eps) -> "ModelSpec":
        return ModelSpec(
            family=self.family, grid=self.grid, eps=float(eps),
            saturation=self.saturation, k0=self.k0, mutation=self.mutation,
            fecundity=self.fecundity, offspring=self.offspring,
            k1=self.k1, k_s=self.k_s, k_triple=self.k_triple,
            rhs_ceiling=self.rhs_ceiling,
        )

    @property
    def linear_saturation(self) -> bool:
        return self.saturation.kind == "linear"

    @property
    def nu(self) -> float:
        if not self.linear_saturation:
            raise ConfigurationError("nu is only defined for linear saturation")
        return self.saturation.nu


def _rhs_values(spec: ModelSpec, values: np.ndarray, mass: float) -> np.ndarray:
    if not mass > 0.0:
        raise ExtinctionError(f"right-hand side needs positive mass, got {mass!r}")
    birth = K.birth_term(spec, _RawState(spec.grid, values, mass))
    r = spec.saturation(spec.grid.nodes, mass)
    out = (birth - r * values) / spec.eps
    peak = float(np.max(np.abs(out)))
    if not np.isfinite(peak) or peak > spec.rhs_ceiling:
        raise StiffnessError(
            f"right-hand side magnitude {peak:.3e} exceeds ceiling {spec.rhs_ceiling:.3e}")
    return out


class _RawState:
    """Lightweight stand-in for DensityState inside hot loops."""

    __slots__ = ("grid", "values", "mass")

    def __init__(self, grid, values, mass):
        self.grid = grid
        self.values = values
        self.mass = mass


def rhs(spec: ModelSpec, n: DensityState) -> np.ndarray:
    """Un-rescaled time derivative (birth integrand - R n) / eps at each node."""
    return _rhs_values(spec, np.asarray(n.values, dtype=float), n.mass)


def rho_rhs(spec: ModelSpec, n: DensityState) -> float:
    """Time derivative of the total mass, the quadrature of rhs."""
    return quadrature(rhs(spec, n), spec.grid)


@dataclass
class BoundCertificate:
    """Constants certifying the mass bounds and the regularity estimates.

    rho_M always exists under the structural assumptions; rho_m is present
    only when one of the three non-extinction routes fires (recorded in
    nonext_route).  The remaining constants feed the BV budgets and the
    Hopf-Cole bound suite and are None until configured or fitted.
    """

    family: str
    eps: float
    K_M: float
    rho_M: float
    kappa2_m: float | None = None
    rho_m: float | None = None
    nonext_route: str | None = None
    eta0: float | None = None
    C1: float | None = None
    C2: float | None = None
    C: float | None = None
    C_fbar: float | None = None
    C0: float | None = None
    L_r: float | None = None
    L0: float | None = None
    lam: float | None = None
    C_lam: float | None = None
    K_bar: float | None = None
    A: float | None = None
    u0_offset: float | None = None
    sup_u0: float | None = None
    u0_at_origin: float | None = None

    def __post_init__(self):
        if not self.rho_M > 0.0:
            raise ConfigurationError(f"rho_M must be positive, got {self.rho_M}")
        if self.rho_m is not None and self.rho_m > self.rho_M + 1e-12:
            raise ConfigurationError(
                f"rho_m={self.rho_m} exceeds rho_M={self.rho_M}")

    def require(self, *names):
        missing = [nm for nm in names if getattr(self, nm) is None]
        if missing:
            from .errors import CapabilityError
            raise CapabilityError(f"certificate is missing constants: {missing}")


@dataclass
class ValidationReport:
    certificate: BoundCertificate
    warnings: list = field(default_factory=list)
    checks: list = field(default_factory=list)   # (claim_id, value, passed)

    def warn(self, message):
        self.warnings.append(message)

    def record(self, claim_id, value, passed):
        self.checks.append({"claim_id": claim_id, "observed_value": value,
                            "pass": bool(passed)})
        if not passed:
            self.warnings.append(f"{claim_id}: failed ({value!r})")

    @property
    def ok(self) -> bool:
        return all(c["pass"] for c in self.checks)


def _find_root_increasing_decay(fn, hi_start) -> float | None:
    """Root of a decreasing function fn on (0, inf), or None."""
    lo = 1e-12
    if fn(lo) <= 0.0:
        return None
    hi = hi_start
    tries = 0
    while fn(hi) > 0.0:
        hi *= 2.0
        tries += 1
        if tries > 60:
            return None
    return float(brentq(fn, lo, hi, xtol=1e-14, rtol=1e-14))


def validate(spec: ModelSpec, probes=None, n0: DensityState | None = None,
             hj=False, hj_config=None) -> ValidationReport:
    """Run every applicable structural check and assemble the certificate.

    All failures except missing kernels are warnings: several of the standing
    hypotheses are sufficient conditions only, and a run may legitimately
    explore what happens without them.
    """
    grid = spec.grid
    nodes = grid.nodes
    if probes is None:
        probes = K.default_probe_family(grid)
    if n0 is not None:
        probes = list(probes) + [normalize(n0)]

    rep_checks = []
    warnings = []

    # saturation structure
    rho_ladder = np.array([0.1, 0.5, 1.0, 2.0, 5.0])
    dmin = min(float(np.min(spec.saturation.d_rho(nodes, r))) for r in rho_ladder)
    increasing = dmin > 0.0
    env_ok = True
    for r in rho_ladder:
        rv = spec.saturation(nodes, r)
        env_ok &= (spec.saturation.r_m(r, nodes) <= float(np.min(rv)) + 1e-10)
        env_ok &= (float(np.max(rv)) <= spec.saturation.r_M(r, nodes) + 1e-10)
    if spec.saturation.kind == "separable":
        r1_vals = [spec.saturation.r1(r) for r in rho_ladder]
        proper = all(b > a for a, b in zip(r1_vals, r1_vals[1:]))
    else:
        proper = True

    # kernel structure
    g_mass = None
    if spec.mutation is not None:
        g_mass = spec.mutation.grid_mass(grid)
    alpha_mass = None
    if spec.offspring is not None and not spec.offspring.y_dependent:
        alpha_mass = spec.offspring.grid_mass(grid)
    ks_sym = None
    ks_pos = None
    if spec.k_s is not None:
        ks_sym = spec.k_s.symmetry_residual(grid)
        ks_pos = True
        # fixed probe family: nonnegative spikes and zero-mass spike differences
        picks = np.linspace(0, grid.n_points - 1, 7).astype(int)
        probes_xi = []
        for i in picks:
            xi = np.zeros(grid.n_points)
            xi[i] = 1.0 / grid.weights[i]
            probes_xi.append(xi)
        for i, j in zip(picks[:-1], picks[1:]):
            xi = np.zeros(grid.n_points)
            xi[i] = 1.0 / grid.weights[i]
            xi[j] = -1.0 / grid.weights[j]
            probes_xi.append(xi)
        probes_xi.append(np.full(grid.n_points, 1.0 / (grid.x_max - grid.x_min)))
        for xi in probes_xi:
            if spec.k_s.quadratic_form(xi, grid=grid) <= 0.0:
                ks_pos = False

    # mass-bound certificate
    kb = K.kappa_bounds(spec, probes)
    rho_M = spec.saturation.r_m_inverse(kb.K_M, nodes)

    rho_m = None
    route = None
    root = _find_root_increasing_decay(lambda r: kb.kappa_m(r), max(rho_M, 1.0))
    if root is not None and root > 0.0:
        rho_m, route = root, "pointwise-kernel-floor"
    else:
        root = _find_root_increasing_decay(lambda r: kb.kappa1_m(r), max(rho_M, 1.0))
        if root is not None and root > 0.0:
            rho_m, route = root, "probe-averaged-floor"
        elif kb.kappa2_m > spec.saturation.r_M(0.0, nodes):
            rho_m, route = spec.saturation.r_M_inverse(kb.kappa2_m, nodes), "quadratic-form-floor"
    if rho_m is not None and rho_m > rho_M:
        warnings.append(
            f"certified rho_m={rho_m:.6g} exceeds rho_M={rho_M:.6g}; dropping rho_m")
        rho_m, route = None, None

    eta0 = None
    if spec.family == "ATH" and spec.k0 is not None:
        eta0 = K.eta_estimate(spec.k0, spec.mutation, probes).value

    cert = BoundCertificate(
        family=spec.family, eps=spec.eps, K_M=kb.K_M, rho_M=rho_M,
        kappa2_m=kb.kappa2_m, rho_m=rho_m, nonext_route=route, eta0=eta0,
    )
    if rho_m is not None and abs(rho_m - rho_M) <= 1e-12 * max(1.0, rho_M):
        warnings.append("rho_m equals rho_M (tangent logistic case)")

    # BV-budget constants
    if spec.family == "AF" and spec.linear_saturation and rho_m is not None:
        cert.C1 = spec.nu * rho_m
        if spec.fecundity.is_constant:
            cert.C = 0.0
    if spec.family == "ATH" and spec.linear_saturation and rho_m is not None \
            and eta0 is not None and spec.k0 is not None:
        cert.C1 = eta0 + 2.0 * spec.nu * rho_m
        sup_k0 = spec.k0.sup()
        if spec.k0.family == "gaussian":
            a, w = spec.k0.params["amplitude"], spec.k0.params["width"]
            sup_k0pp = a / w**2
        else:
            z = np.linspace(-spec.k0.probe_range, spec.k0.probe_range, 4001)
            sup_k0pp = float(np.max(np.abs(np.gradient(np.gradient(spec.k0(z), z), z))))
        if spec.mutation.family != "gaussian":
            warnings.append("ATH commutator constant certified for gaussian mutation only")
        cert.C2 = spec.eps * sup_k0 * sup_k0pp * rho_M

    report = ValidationReport(certificate=cert, warnings=warnings)
    report.record("saturation-increasing-in-rho", dmin, increasing)
    report.record("saturation-envelopes", env_ok, env_ok)
    if spec.saturation.kind == "separable":
        report.record("saturation-r1-proper", proper, proper)
    if g_mass is not None:
        report.record("mutation-kernel-unit-mass", g_mass, abs(g_mass - 1.0) <= 1e-8)
    if alpha_mass is not None:
        report.record("offspring-unit-mass", alpha_mass, abs(alpha_mass - 1.0) <= 1e-8)
    if ks_sym is not None:
        report.record("pair-kernel-symmetry", ks_sym, ks_sym <= 1e-10)
        report.record("pair-kernel-positive-form", ks_pos, ks_pos)

    if n0 is not None:
        # initial decay of the mass balance, recorded for the sweep-level
        # uniform-boundedness check
        rdot0 = rho_rhs(spec, n0)
        cert_val = spec.eps * max(-rdot0, 0.0)
        report.record("initial-mass-decay-scale", cert_val, np.isfinite(cert_val))

    if hj or hj_config is not None:
        _hj_constants(spec, cert, report, n0, hj_config or {})

    return report


def _hj_constants(spec, cert, report, n0, cfg):
    """Fit/check the constants used by the Hopf-Cole bound suite."""
    grid = spec.grid
    nodes = grid.nodes
    rho_ladder = np.linspace(max(cert.rho_m or 0.0, 1e-3), cert.rho_M, 9)

    rvals = np.stack([spec.saturation(nodes, r) for r in rho_ladder])
    cert.C0 = float(np.max(rvals / (1.0 + np.abs(nodes))[None, :]))
    dx = np.gradient(rvals, grid.spacing, axis=1)
    cert.L_r = float(np.max(np.abs(dx)))
    report.record("saturation-sublinear-growth", cert.C0, np.isfinite(cert.C0))
    report.record("saturation-trait-lipschitz", cert.L_r, np.isfinite(cert.L_r))

    if spec.family == "ATH":
        kern = spec.k1 if spec.k1 is not None else K.TwoArgKernel(radial=spec.k0)
        cert.K_bar = kern.sup(grid)
        lam = float(cfg.get("lam", 1.0))
        cert.lam = lam
        c_lam = 0.0
        probe_qs = cfg.get("coefficient_probes")
        if probe_qs is None and n0 is not None:
            probe_qs = [normalize(n0)]
        for q in probe_qs or []:
            k_eps = kern.apply(q.values, grid=grid)
            dk = np.gradient(k_eps, grid.spacing)
            pos = k_eps > 1e-14 * np.max(k_eps)
            val = np.exp(np.abs(dk[pos]) / (lam * k_eps[pos])) * lam * k_eps[pos]
            c_lam = max(c_lam, float(np.max(val)))
        cert.C_lam = c_lam if c_lam > 0.0 else None
        report.record("coefficient-log-derivative-bound",
                      c_lam, cert.C_lam is not None and np.isfinite(c_lam))
    if spec.family == "AF":
        cert.K_bar = spec.fecundity.b_max(nodes)
        cf = [float(np.max(np.abs(spec.fecundity(nodes)
                                  - spec.saturation(nodes, r))))
              for r in rho_ladder]
        cert.C_fbar = float(np.max(cf))

    if n0 is not None and "A" in cfg:
        eps = spec.eps
        floor = np.finfo(float).tiny
        u0 = eps * np.log(np.maximum(n0.values, floor))
        cert.A = float(cfg["A"])
        cert.u0_offset = float(np.max(u0 + cert.A * np.abs(nodes)))
        cert.L0 = float(np.max(np.abs(np.gradient(u0, grid.spacing))))
        cert.sup_u0 = float(np.max(np.abs(u0)))
        cert.u0_at_origin = float(np.interp(0.0, nodes, u0))
        ok = np.all(u0 <= -cert.A * np.abs(nodes) + cert.u0_offset + 1e-9)
        report.record("initial-log-density-cone", cert.u0_offset, bool(ok))


# ---------------------------------------------------------------------------
# Initial data library

def gaussian_bump(grid: Grid, center=0.0, sigma=0.2, mass=1.0) -> DensityState:
    x = grid.nodes
    v = np.exp(-((x - center) ** 2) / (2.0 * sigma**2))
    return DensityState(grid, mass * v / quadrature(v, grid))


def double_bump(grid: Grid, centers=(-0.5, 0.5), sigma=0.15,
                mass=1.0, weights=(0.5, 0.5)) -> DensityState:
    x = grid.nodes
    v = sum(wt * np.exp(-((x - c) ** 2) / (2.0 * sigma**2))
            for c, wt in zip(centers, weights))
    return DensityState(grid, mass * v / quadrature(v, grid))


def uniform_density(grid: Grid, mass=1.0) -> DensityState:
    v = np.full(grid.n_points, mass / (grid.x_max - grid.x_min))
    return DensityState(grid, v)


def hopf_cole_initial(grid: Grid, eps, slope=1.0, center=0.0,
                      mass=None, offset=0.0) -> DensityState:
    """n0 = exp(u0/eps) with concave piecewise-linear u0 = -slope|x-center|+offset.

    With mass given, the offset is adjusted so the quadrature hits it; the
    realized offset is eps*log(mass/raw_mass) + offset.
    """
    x = grid.nodes
    u0 = -slope * np.abs(x - center) + offset
    v = np.exp(u0 / eps)
    if mass is not None:
        v = mass * v / quadrature(v, grid)
    return DensityState(grid, v)
