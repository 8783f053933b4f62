"""Reproduction and mutation kernels, saturation terms, and convolution.

The catalog covers every structural object the model families need: an even
interaction kernel K0(z), a rescaled mutation kernel G_eps(z) = G(z/eps)/eps,
a fecundity B(y), an offspring distribution alpha_eps(x, y, z) with a
female- or male-centered structure, a saturation term R(x, rho), and generic
two-argument kernels K_S / K1.  Convolutions are tabulated on the grid's
difference lattice once and evaluated either by FFT (hot path) or by a dense
O(N^2) route kept as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz
from scipy.optimize import brentq
from scipy.signal import fftconvolve

from .errors import (
    CapabilityError,
    ConfigurationError,
    DimensionError,
    ExtinctionError,
)
from .grid import DensityState, Grid, ProbabilityState, quadrature

_SQRT2PI = np.sqrt(2.0 * np.pi)

# Tensors of triple kernels are only materialized on small grids.
_MAX_DENSE_TENSOR_POINTS = 160


def _unpack(n, grid=None):
    """Accept any state object carrying .values/.grid, or a raw array plus grid."""
    if hasattr(n, "values") and hasattr(n, "grid"):
        return np.asarray(n.values, dtype=float), n.grid
    if grid is None:
        raise ConfigurationError("raw arrays need an explicit grid")
    values = np.asarray(n, dtype=float)
    if values.shape != (grid.n_points,):
        raise DimensionError(f"array shape {values.shape} != grid {grid.n_points}")
    return values, grid


def _difference_lattice(grid: Grid) -> np.ndarray:
    n = grid.n_points
    return grid.spacing * np.arange(-(n - 1), n)


def _apply_table(table: np.ndarray, weighted: np.ndarray, method: str) -> np.ndarray:
    """out_i = sum_j table[i-j+N-1] * weighted_j  (linear convolution slice)."""
    n = weighted.size
    if table.size != 2 * n - 1:
        raise DimensionError("kernel table does not match the difference lattice")
    if method == "direct":
        mat = toeplitz(table[n - 1:], table[n - 1::-1])
        return mat @ weighted
    if method == "fft":
        return fftconvolve(weighted, table, mode="full")[n - 1: 2 * n - 1]
    raise ConfigurationError(f"unknown convolution method {method!r}")


class SymmetricKernel:
    """Even, nonnegative, bounded interaction kernel K0(z).

    Families: gaussian, cauchy, compact-bump, constant, plus custom callables
    and two-column tables.  Evenness is verified on a symmetric probe set at
    construction.
    """

    def __init__(self, profile, family="custom", params=None,
                 mass=None, sup=None, derivative=None, probe_range=10.0):
        self.profile = profile
        self.family = family
        self.params = dict(params or {})
        self._mass = mass
        self._sup = sup
        self._derivative = derivative
        self._tables: dict[Grid, np.ndarray] = {}
        z = np.linspace(0.0, probe_range, 257)
        left, right = self(-z), self(z)
        if np.max(np.abs(left - right)) > 1e-12 * max(1.0, float(np.max(np.abs(right)))):
            raise ValueError("kernel profile is not even on the probe set")
        if np.min(right) < -1e-14:
            raise ValueError("kernel profile takes negative values")
        self.probe_range = probe_range

    def __call__(self, z):
        return np.asarray(self.profile(np.asarray(z, dtype=float)), dtype=float)

    @classmethod
    def gaussian(cls, amplitude=1.0, width=1.0):
        a, w = float(amplitude), float(width)
        return cls(
            lambda z: a * np.exp(-(z**2) / (2.0 * w**2)),
            family="gaussian", params={"amplitude": a, "width": w},
            mass=a * w * _SQRT2PI, sup=a,
            derivative=lambda z: -a * z / w**2 * np.exp(-(z**2) / (2.0 * w**2)),
            probe_range=10.0 * w,
        )

    @classmethod
    def cauchy(cls, amplitude=1.0, width=1.0):
        a, w = float(amplitude), float(width)
        return cls(
            lambda z: a / (1.0 + (z / w) ** 2),
            family="cauchy", params={"amplitude": a, "width": w},
            mass=a * w * np.pi, sup=a,
            derivative=lambda z: -2.0 * a * z / w**2 / (1.0 + (z / w) ** 2) ** 2,
            probe_range=20.0 * w,
        )

    @classmethod
    def compact_bump(cls, amplitude=1.0, radius=1.0):
        a, r = float(amplitude), float(radius)

        def profile(z):
            z = np.asarray(z, dtype=float)
            s = np.clip(np.abs(z) / r, 0.0, None)
            out = np.zeros_like(s)
            inside = s < 1.0
            # exp(1) normalization makes the peak value equal the amplitude.
            out[inside] = a * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
            return out

        def deriv(z):
            z = np.asarray(z, dtype=float)
            s = z / r
            out = np.zeros_like(s)
            inside = np.abs(s) < 1.0
            si = s[inside]
            out[inside] = (a * np.exp(1.0 - 1.0 / (1.0 - si**2))
                           * (-2.0 * si / (1.0 - si**2) ** 2) / r)
            return out

        return cls(profile, family="compact-bump",
                   params={"amplitude": a, "radius": r},
                   sup=a, derivative=deriv, probe_range=2.0 * r)

    @classmethod
    def constant(cls, value):
        c = float(value)
        return cls(lambda z: np.full_like(np.asarray(z, dtype=float), c),
                   family="constant", params={"value": c},
                   sup=c, derivative=lambda z: np.zeros_like(np.asarray(z, dtype=float)))

    @classmethod
    def from_table(cls, source):
        """Load (z, K(z)) rows from a two-column text table.

        Rows must be strictly increasing in z; values are linearly
        interpolated between samples and zero outside the tabulated range.
        """
        data = np.loadtxt(source, ndmin=2, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2:
            raise ConfigurationError("kernel table must have exactly two columns")
        z, k = data[:, 0], data[:, 1]
        if np.any(np.diff(z) <= 0.0):
            raise ConfigurationError("kernel table rows must be strictly increasing in z")
        profile = lambda x: np.interp(np.asarray(x, dtype=float), z, k, left=0.0, right=0.0)
        return cls(profile, family="custom-table",
                   params={"n_rows": len(z)},
                   probe_range=float(np.max(np.abs(z))))

    def mass(self) -> float:
        """Integral of the profile over the whole line."""
        if self._mass is None:
            z = np.linspace(-self.probe_range, self.probe_range, 20001)
            self._mass = float(np.trapz(self(z), z))
        return self._mass

    def sup(self) -> float:
        if self._sup is None:
            z = np.linspace(-self.probe_range, self.probe_range, 20001)
            self._sup = float(np.max(self(z)))
        return self._sup

    def derivative(self, z):
        if self._derivative is None:
            raise CapabilityError(
                f"kernel family {self.family!r} has no analytic derivative")
        return np.asarray(self._derivative(np.asarray(z, dtype=float)), dtype=float)

    def is_radial_decreasing(self, probe_range=None) -> bool:
        """Strictly decreasing in |z| on a sampled probe set."""
        r = probe_range or self.probe_range
        z = np.linspace(0.0, r, 513)
        v = self(z)
        return bool(np.all(np.diff(v) < 0.0))

    def table(self, grid: Grid) -> np.ndarray:
        tab = self._tables.get(grid)
        if tab is None:
            tab = self(_difference_lattice(grid))
            tab.setflags(write=False)
            self._tables[grid] = tab
        return tab


class MutationKernel:
    """Rescaled mutation kernel G_eps(z) = G(z/eps)/eps with unit-mass base G."""

    def __init__(self, eps, family="gaussian", base=None):
        if not eps > 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.eps = float(eps)
        self.family = family
        if family == "gaussian":
            self.base = lambda z: np.exp(-(np.asarray(z, dtype=float) ** 2) / 2.0) / _SQRT2PI
        elif base is not None:
            self.base = base
            self.family = "custom"
        else:
            raise ConfigurationError(f"unknown mutation family {family!r}")
        self._tables: dict[Grid, np.ndarray] = {}

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.base(z / self.eps) / self.eps

    def with_eps(self, eps) -> "MutationKernel":
        if self.family == "gaussian":
            return MutationKernel(eps, family="gaussian")
        return MutationKernel(eps, family="custom", base=self.base)

    def table(self, grid: Grid) -> np.ndarray:
        tab = self._tables.get(grid)
        if tab is None:
            tab = self(_difference_lattice(grid))
            tab.setflags(write=False)
            self._tables[grid] = tab
        return tab

    def grid_mass(self, grid: Grid) -> float:
        """Trapezoid mass of G_eps on the difference lattice.

        Should be 1 within 1e-8; a short value means the grid is too coarse
        or the domain truncation too tight for this eps.
        """
        d = _difference_lattice(grid)
        return float(np.trapz(self.table(grid), d))

    def laplace(self, p) -> np.ndarray:
        """Two-sided Laplace transform of the base profile (gaussian only)."""
        if self.family != "gaussian":
            raise CapabilityError("analytic Laplace transform only for the gaussian base")
        p = np.asarray(p, dtype=float)
        return np.exp(p**2 / 2.0)


class Fecundity:
    """Nonnegative bounded crossing fecundity B(y) of the female trait."""

    def __init__(self, fn, b_max=None, is_constant=False, constant_value=None):
        self.fn = fn
        self._b_max = b_max
        self.is_constant = is_constant
        self.constant_value = constant_value

    def __call__(self, y):
        return np.asarray(self.fn(np.asarray(y, dtype=float)), dtype=float)

    @classmethod
    def constant(cls, b):
        b = float(b)
        if b < 0.0:
            raise ValueError("fecundity must be nonnegative")
        return cls(lambda y: np.full_like(np.asarray(y, dtype=float), b),
                   b_max=b, is_constant=True, constant_value=b)

    @classmethod
    def gaussian_peak(cls, b0=1.0, center=0.0, width=1.0, floor=0.0):
        b0, c, w, f = float(b0), float(center), float(width), float(floor)
        return cls(lambda y: f + b0 * np.exp(-((np.asarray(y, dtype=float) - c) ** 2)
                                             / (2.0 * w**2)),
                   b_max=f + b0)

    def b_max(self, sample=None) -> float:
        if self._b_max is not None:
            return self._b_max
        if sample is None:
            raise ConfigurationError("need a trait sample to bound a custom fecundity")
        return float(np.max(self(sample)))


class OffspringDistribution:
    """Offspring trait distribution alpha_eps(x, y, z).

    Structural forms: female-centered alpha_eps = alpha((x-y)/eps, y)/eps or
    male-centered alpha((x-z)/eps, y)/eps.  The base may depend on the female
    trait y; the y-independent case is the convolution hot path.
    """

    def __init__(self, eps, centering="female", base="gaussian",
                 base_fn=None, y_dependent=False):
        if centering not in ("female", "male"):
            raise ConfigurationError(f"unknown centering {centering!r}")
        if not eps > 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.eps = float(eps)
        self.centering = centering
        self.y_dependent = bool(y_dependent)
        self.base_family = base if base_fn is None else "custom"
        if base_fn is not None:
            self.base_fn = base_fn
        elif base == "gaussian":
            self.base_fn = lambda w: np.exp(-(np.asarray(w, dtype=float) ** 2) / 2.0) / _SQRT2PI
        else:
            raise ConfigurationError(f"unknown offspring base {base!r}")
        self._tables: dict[Grid, np.ndarray] = {}

    def with_eps(self, eps) -> "OffspringDistribution":
        out = OffspringDistribution.__new__(OffspringDistribution)
        out.eps = float(eps)
        out.centering = self.centering
        out.y_dependent = self.y_dependent
        out.base_family = self.base_family
        out.base_fn = self.base_fn
        out._tables = {}
        return out

    def _base(self, w, y=None):
        if self.y_dependent:
            return np.asarray(self.base_fn(np.asarray(w, dtype=float), y), dtype=float)
        return np.asarray(self.base_fn(np.asarray(w, dtype=float)), dtype=float)

    def density(self, x, y, z):
        """Pointwise alpha_eps(x, y, z)."""
        x = np.asarray(x, dtype=float)
        center = y if self.centering == "female" else z
        return self._base((x - center) / self.eps, y) / self.eps

    def table(self, grid: Grid) -> np.ndarray:
        """alpha_eps on the difference lattice (y-independent bases only)."""
        if self.y_dependent:
            raise CapabilityError("no difference table for a y-dependent offspring base")
        tab = self._tables.get(grid)
        if tab is None:
            tab = self._base(_difference_lattice(grid) / self.eps) / self.eps
            tab.setflags(write=False)
            self._tables[grid] = tab
        return tab

    def grid_mass(self, grid: Grid, y=0.0) -> float:
        d = _difference_lattice(grid)
        return float(np.trapz(self._base(d / self.eps, y) / self.eps, d))


class SaturationTerm:
    """Death-plus-competition rate R(x, rho), increasing in rho.

    Forms: linear R = nu*rho, separable R = R0(x) + R1(rho), or a general
    callable.  Lower/upper envelopes R_m <= R <= R_M (increasing functions of
    rho) back the mass bounds; they are analytic for the structured forms and
    sampled over a trait set otherwise.
    """

    def __init__(self, kind, nu=None, r0=None, r1=None, dr1=None,
                 r1_inverse=None, fn=None, d_rho_fn=None):
        self.kind = kind
        self.nu = nu
        self.r0 = r0
        self.r1 = r1
        self.dr1 = dr1
        self.r1_inverse = r1_inverse
        self.fn = fn
        self.d_rho_fn = d_rho_fn

    @classmethod
    def linear(cls, nu):
        nu = float(nu)
        if nu <= 0.0:
            raise ValueError("nu must be positive")
        return cls("linear", nu=nu)

    @classmethod
    def separable(cls, r0, r1, dr1=None, r1_inverse=None):
        return cls("separable", r0=r0, r1=r1, dr1=dr1, r1_inverse=r1_inverse)

    @classmethod
    def power_law(cls, nu, gamma):
        """R = nu * rho**gamma, the separable form with R0 = 0."""
        nu, gamma = float(nu), float(gamma)
        return cls.separable(
            r0=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            r1=lambda rho: nu * rho**gamma,
            dr1=lambda rho: nu * gamma * rho ** (gamma - 1.0),
            r1_inverse=lambda v: (v / nu) ** (1.0 / gamma),
        )

    @classmethod
    def general(cls, fn, d_rho_fn=None):
        return cls("general", fn=fn, d_rho_fn=d_rho_fn)

    def __call__(self, x, rho):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return np.full_like(x, self.nu * rho)
        if self.kind == "separable":
            return np.asarray(self.r0(x), dtype=float) + float(self.r1(rho))
        return np.asarray(self.fn(x, rho), dtype=float)

    def d_rho(self, x, rho):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return np.full_like(x, self.nu)
        if self.kind == "separable" and self.dr1 is not None:
            return np.full_like(x, float(self.dr1(rho)))
        h = max(1e-6, 1e-6 * abs(rho))
        return (self(x, rho + h) - self(x, max(rho - h, 0.0))) / (h + min(h, rho))

    def r_m(self, rho, x_sample=None) -> float:
        if self.kind == "linear":
            return self.nu * rho
        if self.kind == "separable":
            lo = float(np.min(self.r0(x_sample))) if x_sample is not None else 0.0
            return float(self.r1(rho)) + lo
        if x_sample is None:
            raise ConfigurationError("general saturation needs a trait sample for envelopes")
        return float(np.min(self(x_sample, rho)))

    def r_M(self, rho, x_sample=None) -> float:
        if self.kind == "linear":
            return self.nu * rho
        if self.kind == "separable":
            hi = float(np.max(self.r0(x_sample))) if x_sample is not None else 0.0
            return float(self.r1(rho)) + hi
        if x_sample is None:
            raise ConfigurationError("general saturation needs a trait sample for envelopes")
        return float(np.max(self(x_sample, rho)))

    def _invert(self, envelope, value, x_sample) -> float:
        if self.kind == "linear":
            return value / self.nu
        if (self.kind == "separable" and self.r1_inverse is not None
                and (x_sample is None or envelope == "m")):
            offset = 0.0
            if x_sample is not None:
                r0v = self.r0(x_sample)
                offset = float(np.min(r0v) if envelope == "m" else np.max(r0v))
            return float(self.r1_inverse(value - offset))
        fn = (lambda r: self.r_m(r, x_sample)) if envelope == "m" else \
             (lambda r: self.r_M(r, x_sample))
        hi = 1.0
        while fn(hi) < value:
            hi *= 2.0
            if hi > 1e12:
                raise ConfigurationError("saturation envelope never reaches the target value")
        return float(brentq(lambda r: fn(r) - value, 0.0, hi, xtol=1e-14, rtol=1e-14))

    def r_m_inverse(self, value, x_sample=None) -> float:
        return self._invert("m", value, x_sample)

    def r_M_inverse(self, value, x_sample=None) -> float:
        return self._invert("M", value, x_sample)


class TwoArgKernel:
    """Generic kernel K(x, y), optionally backed by a translation-invariant profile."""

    def __init__(self, fn=None, radial: SymmetricKernel | None = None):
        if (fn is None) == (radial is None):
            raise ConfigurationError("give exactly one of fn or radial")
        self.fn = fn
        self.radial = radial
        self._matrices: dict[Grid, np.ndarray] = {}

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.radial is not None:
            return self.radial(x - y)
        return np.asarray(self.fn(x, y), dtype=float)

    @property
    def translation_invariant(self) -> bool:
        return self.radial is not None

    def matrix(self, grid: Grid) -> np.ndarray:
        mat = self._matrices.get(grid)
        if mat is None:
            x = grid.nodes
            mat = self(x[:, None], x[None, :])
            mat.setflags(write=False)
            self._matrices[grid] = mat
        return mat

    def apply(self, n, grid=None, method="fft") -> np.ndarray:
        """(K n)(x) = integral of K(x, y) n(y) dy."""
        values, grid = _unpack(n, grid)
        if self.radial is not None:
            return convolve(self.radial, values, method=method, grid=grid)
        return self.matrix(grid) @ (grid.weights * values)

    def sup(self, grid: Grid) -> float:
        if self.radial is not None:
            return self.radial.sup()
        return float(np.max(self.matrix(grid)))

    def symmetry_residual(self, grid: Grid) -> float:
        mat = self.matrix(grid)
        return float(np.max(np.abs(mat - mat.T)))

    def quadratic_form(self, xi, grid=None) -> float:
        """Double integral of K(x,y) xi(x) xi(y)."""
        values, grid = _unpack(xi, grid)
        wxi = grid.weights * values
        if self.radial is not None:
            conv = convolve(self.radial, values, grid=grid)
            return float(wxi @ conv)
        return float(wxi @ (self.matrix(grid) @ wxi))


def convolve(kernel, n, method="fft", grid=None) -> np.ndarray:
    """(K * n)(x_i) = trapezoid_z K(x_i - z) n(z) for a tabulated kernel.

    `method="direct"` is the dense O(N^2) oracle; both routes evaluate the
    same weighted sum and agree to round-off.
    """
    values, grid = _unpack(n, grid)
    table = kernel.table(grid)
    return _apply_table(table, grid.weights * values, method)


def _flip(table: np.ndarray) -> np.ndarray:
    return table[::-1]


def _dense_triple_tensor(spec, grid: Grid) -> np.ndarray:
    """K_eps(x_i, y_j, z_k) materialized; guarded to small grids."""
    n = grid.n_points
    if n > _MAX_DENSE_TENSOR_POINTS:
        raise ConfigurationError(
            f"dense triple-kernel evaluation capped at {_MAX_DENSE_TENSOR_POINTS} nodes "
            f"(grid has {n}); use a coarser audit grid")
    x = grid.nodes
    return triple_kernel(spec)(x[:, None, None], x[None, :, None], x[None, None, :])


def triple_kernel(spec):
    """Pointwise K_eps(x, y, z) for families that admit one.

    nM and gnM carry a Dirac factor and raise CapabilityError.
    """
    family = spec.family
    if family == "AF":
        B, alpha = spec.fecundity, spec.offspring
        return lambda x, y, z: B(y) * alpha.density(x, y, z)
    if family == "ATH":
        g = spec.mutation
        if spec.k1 is not None:
            k1 = spec.k1
            return lambda x, y, z: g(x - z) * k1(x, y)
        k0 = spec.k0
        return lambda x, y, z: k0(x - z) * g(x - y)
    if family == "general":
        return spec.k_triple
    raise CapabilityError(
        f"family {family!r} has a singular reproduction kernel; "
        "no pointwise triple evaluation")


def birth_term(spec, n, method="fft") -> np.ndarray:
    """Birth integrand of the model at each grid node.

    Structural specializations (all 1-homogeneous in n):
      nM   -> (K0*n)(x) n(x) / rho
      ATH  -> (K0*n)(x) (G_eps*n)(x) / rho   (K1-weighted variant for generic ATH)
      AF   -> offspring-kernel convolution of the fecundity-weighted density
      gnM  -> n(x) (K_S n)(x) / rho
      general -> dense triple quadrature (small grids only)
    """
    values, grid = _unpack(n)
    mass = getattr(n, "mass", None)
    if mass is None:
        mass = quadrature(values, grid)
    if not mass > 0.0:
        raise ExtinctionError(f"birth term needs positive mass, got {mass!r}")
    family = spec.family

    if family == "nM":
        return convolve(spec.k0, values, method=method, grid=grid) * values / mass

    if family == "ATH":
        cg = convolve(spec.mutation, values, method=method, grid=grid)
        if spec.k1 is not None:
            ck = spec.k1.apply(values, grid=grid, method=method)
        else:
            ck = convolve(spec.k0, values, method=method, grid=grid)
        return ck * cg / mass

    if family == "gnM":
        s = spec.k_s.apply(values, grid=grid, method=method)
        return values * s / mass

    if family == "AF":
        B = spec.fecundity(grid.nodes)
        alpha = spec.offspring
        w = grid.weights
        if alpha.centering == "female":
            if not alpha.y_dependent:
                # male integral collapses: birth = alpha_eps * (B n)
                return _apply_table(alpha.table(grid), w * B * values, method)
            x = grid.nodes
            amat = alpha.density(x[:, None], x[None, :], None)
            return amat @ (w * B * values)
        # male-centered
        if not alpha.y_dependent:
            bbar = float((w * B) @ values) / mass
            return bbar * _apply_table(alpha.table(grid), w * values, method)
        n_pts = grid.n_points
        if n_pts > _MAX_DENSE_TENSOR_POINTS:
            raise ConfigurationError(
                "y-dependent male-centered offspring needs a small grid")
        x = grid.nodes
        tensor = alpha.density(x[:, None, None], x[None, :, None], x[None, None, :])
        return np.einsum("ijk,j,k->i", tensor, w * B * values, w * values) / mass

    if family == "general":
        tensor = _dense_triple_tensor(spec, grid)
        w = grid.weights
        return np.einsum("ijk,j,k->i", tensor, w * values, w * values) / mass

    raise ConfigurationError(f"unknown model family {family!r}")


def default_probe_family(grid: Grid, extra=()) -> list[ProbabilityState]:
    """Grid deltas at every node, the uniform measure, and user extras."""
    probes = []
    for i in range(grid.n_points):
        values = np.zeros(grid.n_points)
        values[i] = 1.0 / grid.weights[i]
        probes.append(ProbabilityState(grid, values))
    width = grid.x_max - grid.x_min
    probes.append(ProbabilityState(grid, np.full(grid.n_points, 1.0 / width)))
    probes.extend(extra)
    return probes


def _smoothed_kernel_table(k0: SymmetricKernel, g: MutationKernel, grid: Grid) -> np.ndarray:
    """(K0 conv G_eps)(d) on the difference lattice, by fine quadrature in s."""
    d = _difference_lattice(grid)
    half = 8.0 * g.eps
    m = max(129, int(np.ceil(2 * half / min(grid.spacing, g.eps / 4.0))) | 1)
    s = np.linspace(-half, half, m)
    gs = g(s)
    return np.trapz(k0(d[:, None] - s[None, :]) * gs[None, :], s, axis=1)


@dataclass
class KappaReport:
    """Mass-bound certificate quantities estimated over a probe family.

    K_M is exact for the structured families; the kappa quantities are probe
    minima, hence upper estimates of the true infima.
    """

    K_M: float
    K_M_exact: bool
    kappa2_m: float
    kappa2_minimizer: int
    kappa2_per_probe: np.ndarray
    _mu: np.ndarray = field(repr=False)            # mu[p, y]
    _probe_values: list = field(repr=False)
    _grid: Grid = field(repr=False)
    _saturation: SaturationTerm = field(repr=False)

    def kappa_m(self, rho: float) -> float:
        r = self._saturation(self._grid.nodes, rho)
        return float(np.min(self._mu - r[None, :]))

    def kappa1_m(self, rho: float) -> float:
        w = self._grid.weights
        r = self._saturation(self._grid.nodes, rho)
        best = np.inf
        for p, phi in enumerate(self._probe_values):
            best = min(best, float((w * phi) @ (self._mu[p] - r)))
        return best


def kappa_bounds(spec, probe_measures) -> KappaReport:
    """Upper-bound constant K_M and the non-extinction kappa quantities.

    The probe family should include grid deltas at every node and the uniform
    measure; minima over it are upper estimates of the infima over all
    probability measures, reported with the minimizing probe.
    """
    if not probe_measures:
        raise ConfigurationError("kappa bounds need a nonempty probe family")
    grid = spec.grid
    w = grid.weights
    family = spec.family
    probes = [np.asarray(p.values, dtype=float) for p in probe_measures]

    # mu[p, y] = double integral of K_eps(x, y, z) dx phi_p(z) dz
    if family == "nM":
        mu = np.stack([convolve(spec.k0, phi, grid=grid) for phi in probes])
        k_m, exact = spec.k0.sup(), True
    elif family == "ATH":
        if spec.k1 is None:
            stab = _smoothed_kernel_table(spec.k0, spec.mutation, grid)
            mu = np.stack([_apply_table(stab, w * phi, "fft") for phi in probes])
            k_m, exact = spec.k0.sup(), True
        else:
            k1m = spec.k1.matrix(grid)
            gt = spec.mutation.table(grid)
            n_pts = grid.n_points
            # smoothed column: integral of K1(x, y) G_eps(x - z) dx
            gmat = np.empty((n_pts, n_pts))
            for z in range(n_pts):
                gmat[z] = w * gt[n_pts - 1 - z: 2 * n_pts - 1 - z]
            ksm = gmat @ k1m  # [z, y]
            mu = np.stack([(w * phi) @ ksm for phi in probes])
            k_m, exact = spec.k1.sup(grid), False
    elif family == "AF":
        b = spec.fecundity(grid.nodes)
        mu = np.tile(b, (len(probes), 1))
        k_m, exact = spec.fecundity.b_max(grid.nodes), True
    elif family == "gnM":
        ksmat = spec.k_s.matrix(grid)
        mu = np.stack([(w * phi) @ ksmat for phi in probes])  # K_S(z, y) phi(z) dz
        k_m, exact = spec.k_s.sup(grid), True
    elif family == "general":
        tensor = _dense_triple_tensor(spec, grid)
        xint = np.einsum("i,ijk->jk", w, tensor)  # [y, z]
        mu = np.stack([xint @ (w * phi) for phi in probes])
        k_m, exact = float(np.max(mu)), False
    else:
        raise ConfigurationError(f"unknown model family {family!r}")

    if not exact:
        k_m = max(k_m, float(np.max(mu)))

    # kappa''_m: triple integral of K_eps phi phi per probe
    if family == "nM":
        k2 = np.array([float((w * phi) @ convolve(spec.k0, phi, grid=grid))
                       for phi in probes])
    elif family == "ATH":
        if spec.k1 is None:
            k2 = np.array([
                float(w @ (convolve(spec.k0, phi, grid=grid)
                           * convolve(spec.mutation, phi, grid=grid)))
                for phi in probes])
        else:
            k1m = spec.k1.matrix(grid)
            k2 = np.array([
                float(w @ (convolve(spec.mutation, phi, grid=grid)
                           * (k1m @ (w * phi))))
                for phi in probes])
    elif family == "AF":
        b = spec.fecundity(grid.nodes)
        k2 = np.array([float((w * b) @ phi) for phi in probes])
    elif family == "gnM":
        ksmat = spec.k_s.matrix(grid)
        k2 = np.array([float((w * phi) @ (ksmat @ (w * phi))) for phi in probes])
    else:
        k2 = np.array([float((w * phi) @ (xint @ (w * phi))) for phi in probes])

    imin = int(np.argmin(k2))
    return KappaReport(
        K_M=float(k_m), K_M_exact=exact,
        kappa2_m=float(k2[imin]), kappa2_minimizer=imin, kappa2_per_probe=k2,
        _mu=mu, _probe_values=probes, _grid=grid, _saturation=spec.saturation,
    )


@dataclass
class EtaEstimate:
    value: float
    minimizer: int
    per_probe: np.ndarray


def eta_estimate(k0: SymmetricKernel, g: MutationKernel, probe_measures) -> EtaEstimate:
    """Probe minimum of integral (K0*phi)(G_eps*phi) dx, an upper estimate of eta_eps."""
    if not probe_measures:
        raise ConfigurationError("eta estimate needs a nonempty probe family")
    vals = []
    for p in probe_measures:
        grid = p.grid
        ck = convolve(k0, p.values, grid=grid)
        cg = convolve(g, p.values, grid=grid)
        vals.append(float(grid.weights @ (ck * cg)))
    vals = np.asarray(vals)
    imin = int(np.argmin(vals))
    return EtaEstimate(value=float(vals[imin]), minimizer=imin, per_probe=vals)


@dataclass
class AlphaAssumptionReport:
    """Offspring-fecundity inequality evaluated on probe measures.

    L(eps, phi) is the triple-integral fecundity variation; the fitted
    constant C_hat is max(0, max over probes of -L/eps).  "Holds on probes"
    means every L >= -C_hat*eps with C_hat stable across the eps ladder.
    """

    eps_list: list
    L: np.ndarray              # [eps, probe]
    C_hat_per_eps: np.ndarray
    C_hat: float
    stable: bool
    holds_on_probes: bool


def check_alpha_assumption(B: Fecundity, alpha: OffspringDistribution,
                           eps_list, probe_measures, grid: Grid) -> AlphaAssumptionReport:
    """Evaluate L(eps, phi) = triple_int alpha_eps B(x)B(y) phi phi - (int B phi)^2."""
    if not probe_measures:
        raise ConfigurationError("need a nonempty probe family")
    w = grid.weights
    bvals = B(grid.nodes)
    n_pts = grid.n_points
    L = np.empty((len(eps_list), len(probe_measures)))
    for ie, eps in enumerate(eps_list):
        a_e = alpha.with_eps(eps)
        if a_e.y_dependent:
            if a_e.centering != "female":
                raise CapabilityError(
                    "y-dependent male-centered offspring bases are not collapsible here")
            x = grid.nodes
            if n_pts > _MAX_DENSE_TENSOR_POINTS:
                raise ConfigurationError("y-dependent offspring base needs a small grid")
            amat = a_e.density(x[:, None], x[None, :], None)
            conv_ab = (w * bvals) @ amat  # integral over x of alpha_eps(x, y, .) B(x)
        else:
            # integral over x of alpha_eps(x - c) B(x), as a function of the center c
            conv_ab = _apply_table(_flip(a_e.table(grid)), w * bvals, "fft")
        for ip, p in enumerate(probe_measures):
            phi = p.values
            bphi = float((w * bvals) @ phi)
            if alpha.centering == "female":
                triple = float((w * phi) @ (conv_ab * bvals))
            else:
                triple = bphi * float((w * phi) @ conv_ab)
            L[ie, ip] = triple - bphi**2
    c_per_eps = np.maximum(0.0, np.max(-L / np.asarray(eps_list)[:, None], axis=1))
    c_hat = float(np.max(c_per_eps))
    if c_hat <= 1e-10:
        stable = True
    else:
        positive = c_per_eps[c_per_eps > 1e-10]
        stable = bool(positive.size and np.max(positive) / np.min(positive) <= 3.0)
    return AlphaAssumptionReport(
        eps_list=list(eps_list), L=L, C_hat_per_eps=c_per_eps, C_hat=c_hat,
        stable=stable, holds_on_probes=bool(np.all(L >= -c_hat * np.asarray(eps_list)[:, None] - 1e-12) and stable),
    )


@dataclass
class GeConvergenceReport:
    eps_list: list
    discrepancy: np.ndarray
    bound: np.ndarray
    passed: np.ndarray
    phi_prime_l1: float


def check_ge_convergence(mutation: MutationKernel, eps_list, test_phi, test_psi,
                         grid: Grid, phi_prime=None, quad_tol=1e-8) -> GeConvergenceReport:
    """Check |int psi (G_eps*phi - phi)| <= 2 ||phi'||_1 eps / sqrt(2 pi).

    The bound is specific to the gaussian mutation family.
    """
    if mutation.family != "gaussian":
        raise CapabilityError("the convergence bound is certified for the gaussian family")
    x = grid.nodes
    phi = np.asarray(test_phi(x) if callable(test_phi) else test_phi, dtype=float)
    psi = np.asarray(test_psi(x) if callable(test_psi) else test_psi, dtype=float)
    if phi_prime is not None:
        dphi = np.asarray(phi_prime(x) if callable(phi_prime) else phi_prime, dtype=float)
    else:
        dphi = np.gradient(phi, grid.spacing)
    l1 = quadrature(np.abs(dphi), grid)
    disc = np.empty(len(eps_list))
    for ie, eps in enumerate(eps_list):
        g_e = mutation.with_eps(eps)
        conv = convolve(g_e, phi, grid=grid)
        disc[ie] = abs(quadrature(psi * (conv - phi), grid))
    bound = 2.0 * l1 * np.asarray(eps_list, dtype=float) / _SQRT2PI + quad_tol
    return GeConvergenceReport(
        eps_list=list(eps_list), discrepancy=disc, bound=bound,
        passed=disc <= bound, phi_prime_l1=float(l1),
    )
