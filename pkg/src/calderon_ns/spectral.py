"""Periodic-box spectral representation of vector fields.

Fields live on the torus [0, L)^3 sampled at n points per axis. Real fields
are stored through their half spectrum (``numpy.fft.rfftn`` layout), so the
conjugate symmetry coeff(-k) = conj(coeff(k)) holds by construction. The
coefficients use the forward normalization ``coeffs = fft(f) / n**3``, which
makes a unit cosine show up as a pair of coefficients of size 1/2 and gives
the Parseval identity ``||f||_2^2 = V * sum |c_k|^2`` over the full spectrum.

All operators here are exact Fourier multipliers apart from the quadratic
nonlinearity, which is computed pseudospectrally with a dealiasing mask.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft


class GridError(ValueError):
    """Raised when fields or grids do not fit together."""


class DivergenceError(ValueError):
    """Raised when an operator that needs a solenoidal field gets another."""


@dataclass(frozen=True)
class Grid3:
    """Uniform periodic grid with ``n`` points per axis and period ``box_len``."""

    n: int
    box_len: float = 2.0 * np.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        n = int(self.n)
        if n < 8 or n & (n - 1):
            raise GridError(f"n must be a power of two >= 8, got {self.n}")
        if not self.box_len > 0:
            raise GridError(f"box_len must be positive, got {self.box_len}")
        if not 0 < self.dealias_fraction <= 1:
            raise GridError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "box_len", float(self.box_len))
        object.__setattr__(self, "dealias_fraction", float(self.dealias_fraction))

    # -- geometry -----------------------------------------------------------
    @property
    def dx(self) -> float:
        return self.box_len / self.n

    @property
    def volume(self) -> float:
        return self.box_len ** 3

    @property
    def cell_volume(self) -> float:
        return self.dx ** 3

    @property
    def spectral_shape(self) -> tuple:
        return (self.n, self.n, self.n // 2 + 1)

    @property
    def physical_shape(self) -> tuple:
        return (self.n, self.n, self.n)

    @property
    def k0(self) -> float:
        """Fundamental wavenumber 2*pi/L."""
        return 2.0 * np.pi / self.box_len

    @cached_property
    def integer_wavenumbers(self):
        """Integer wavevector components broadcastable to the half spectrum."""
        n = self.n
        full = np.fft.fftfreq(n, 1.0 / n)
        half = np.arange(n // 2 + 1, dtype=float)
        return (full[:, None, None], full[None, :, None], half[None, None, :])

    @cached_property
    def wavevectors(self):
        """Physical wavevector components xi = 2*pi*k/L (broadcast shapes)."""
        return tuple(self.k0 * k for k in self.integer_wavenumbers)

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.wavevectors
        return kx ** 2 + ky ** 2 + kz ** 2

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def hermitian_weight(self) -> np.ndarray:
        """Multiplicity of each stored half-spectrum mode in the full spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean mask keeping |k_i| <= dealias_fraction * n/2 on every axis."""
        cut = self.dealias_fraction * self.n / 2.0
        kx, ky, kz = self.integer_wavenumbers
        if self.dealias_fraction >= 1.0:
            return np.ones(self.spectral_shape, dtype=bool)
        return (np.abs(kx) <= cut) & (np.abs(ky) <= cut) & (np.abs(kz) <= cut)

    @cached_property
    def coordinates(self):
        """Collocation coordinates as three broadcastable 1-D arrays."""
        x = np.arange(self.n) * self.dx
        return (x[:, None, None], x[None, :, None], x[None, None, :])

    def mesh(self):
        """Full 3-D coordinate arrays (x, y, z)."""
        return np.meshgrid(*(np.arange(self.n) * self.dx,) * 3, indexing="ij")

    def describe(self) -> dict:
        return {"n": self.n, "box_len": self.box_len,
                "dealias_fraction": self.dealias_fraction}

    def grid_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Half-spectrum Fourier coefficients of a real field.

    ``coeffs`` has shape ``(components,) + grid.spectral_shape``.
    """

    grid: Grid3
    coeffs: np.ndarray
    divergence_free: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim == 3:
            c = c[None]
        if c.shape[1:] != self.grid.spectral_shape:
            raise GridError(
                f"coefficient shape {c.shape[1:]} does not match grid {self.grid.spectral_shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, grid: Grid3, components: int = 3) -> "SpectralField":
        return cls(grid, np.zeros((components,) + grid.spectral_shape, complex),
                   divergence_free=components == 3)

    def replace(self, coeffs, divergence_free=None) -> "SpectralField":
        if divergence_free is None:
            divergence_free = self.divergence_free
        return SpectralField(self.grid, coeffs, divergence_free)

    def _check(self, other: "SpectralField"):
        if self.grid != other.grid or self.components != other.components:
            raise GridError("fields live on different grids or have different shapes")

    def __add__(self, other):
        self._check(other)
        return self.replace(self.coeffs + other.coeffs,
                            self.divergence_free and other.divergence_free)

    def __sub__(self, other):
        self._check(other)
        return self.replace(self.coeffs - other.coeffs,
                            self.divergence_free and other.divergence_free)

    def __mul__(self, scalar):
        return self.replace(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.replace(-self.coeffs)

    def mean(self) -> np.ndarray:
        """Zero-mode coefficient per component (the spatial average)."""
        return self.coeffs[:, 0, 0, 0].real.copy()

    def full_coeffs(self) -> np.ndarray:
        """Expand to the full ``(components, n, n, n)`` coefficient array."""
        return sfft.fftn(to_physical(self).values, axes=(1, 2, 3)) / self.grid.n ** 3

    def energy(self) -> float:
        """Squared L^2 norm computed on the coefficients (Parseval)."""
        g = self.grid
        return float(g.volume * np.sum(g.hermitian_weight * np.abs(self.coeffs) ** 2))


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Real samples on the collocation lattice, shape ``(components, n, n, n)``."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 3:
            v = v[None]
        if v.shape[1:] != self.grid.physical_shape:
            raise GridError(
                f"value shape {v.shape[1:]} does not match grid {self.grid.physical_shape}")
        object.__setattr__(self, "values", v)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean norm over components."""
        if self.components == 1:
            return np.abs(self.values[0])
        return np.sqrt(np.sum(self.values ** 2, axis=0))


_AXES = (1, 2, 3)


def to_spectral(f: PhysicalField, divergence_free: bool = False) -> SpectralField:
    """Forward transform with ``1/n^3`` normalization."""
    c = sfft.rfftn(f.values, axes=_AXES, norm="forward")
    return SpectralField(f.grid, c, divergence_free)


def to_physical(g: SpectralField) -> PhysicalField:
    """Inverse of :func:`to_spectral`."""
    n = g.grid.n
    v = sfft.irfftn(g.coeffs, s=(n, n, n), axes=_AXES, norm="forward")
    return PhysicalField(g.grid, v)


def heat_semigroup(g: SpectralField, t: float) -> SpectralField:
    """Apply the heat multiplier ``exp(-|xi|^2 t)``."""
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return g.replace(g.coeffs.copy())
    return g.replace(g.coeffs * np.exp(-g.grid.k2 * t))


def _require_vector(g: SpectralField, what: str):
    if g.components != 3:
        raise GridError(f"{what} needs a 3-component field, got {g.components}")


def leray_project(g: SpectralField) -> SpectralField:
    """Apply ``I - xi xi^T / |xi|^2``; the zero mode is passed through."""
    _require_vector(g, "leray_project")
    kx, ky, kz = g.grid.wavevectors
    k2 = g.grid.k2.copy()
    k2[0, 0, 0] = 1.0
    c = g.coeffs
    kdotc = (kx * c[0] + ky * c[1] + kz * c[2]) / k2
    out = np.stack([c[0] - kx * kdotc, c[1] - ky * kdotc, c[2] - kz * kdotc])
    return SpectralField(g.grid, out, divergence_free=True)


def divergence(g: SpectralField) -> SpectralField:
    _require_vector(g, "divergence")
    kx, ky, kz = g.grid.wavevectors
    c = g.coeffs
    return SpectralField(g.grid, 1j * (kx * c[0] + ky * c[1] + kz * c[2]))


def gradient(g: SpectralField) -> SpectralField:
    """Gradient of a scalar field."""
    if g.components != 1:
        raise GridError("gradient needs a scalar field")
    kx, ky, kz = g.grid.wavevectors
    c = g.coeffs[0]
    return SpectralField(g.grid, np.stack([1j * kx * c, 1j * ky * c, 1j * kz * c]))


def divergence_defect(g: SpectralField) -> float:
    """Largest ``|xi . c(xi)| / |c(xi)|`` over modes with nonzero coefficient."""
    _require_vector(g, "divergence_defect")
    kx, ky, kz = g.grid.wavevectors
    c = g.coeffs
    kdotc = np.abs(kx * c[0] + ky * c[1] + kz * c[2])
    cnorm = np.sqrt(np.sum(np.abs(c) ** 2, axis=0)) * np.maximum(g.grid.kmag, 1e-300)
    scale = cnorm.max()
    if scale == 0:
        return 0.0
    keep = cnorm > 1e-14 * scale
    return float(np.max(kdotc[keep] / cnorm[keep])) if keep.any() else 0.0


def dealias(g: SpectralField) -> SpectralField:
    mask = g.grid.dealias_mask
    return g.replace(g.coeffs * mask)


def _check_solenoidal(u: SpectralField, tol: float):
    if divergence_defect(u) > tol:
        raise DivergenceError("input field is not divergence-free within tolerance")


def stress_tensor(a: SpectralField, b: SpectralField | None = None) -> np.ndarray:
    """Dealiased symmetric products ``(a_i b_j + b_i a_j)/2`` in spectral space.

    Returns the six independent entries in the order xx, yy, zz, xy, xz, yz.
    """
    mask = a.grid.dealias_mask
    pa = to_physical(a.replace(a.coeffs * mask)).values
    pb = pa if b is None else to_physical(b.replace(b.coeffs * mask)).values
    pairs = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
    prod = np.empty((6,) + a.grid.physical_shape)
    for idx, (i, j) in enumerate(pairs):
        if b is None:
            prod[idx] = pa[i] * pa[j]
        else:
            prod[idx] = 0.5 * (pa[i] * pb[j] + pb[i] * pa[j])
    return sfft.rfftn(prod, axes=_AXES, norm="forward") * mask


def tensor_divergence(t6: np.ndarray, grid: Grid3) -> np.ndarray:
    """Row divergence of a symmetric tensor stored as six entries."""
    kx, ky, kz = grid.wavevectors
    xx, yy, zz, xy, xz, yz = t6
    return 1j * np.stack([kx * xx + ky * xy + kz * xz,
                          kx * xy + ky * yy + kz * yz,
                          kx * xz + ky * yz + kz * zz])


def tensor_double_divergence(t6: np.ndarray, grid: Grid3) -> np.ndarray:
    """Spectral symbol of ``d_i d_j T_ij`` for a symmetric tensor."""
    kx, ky, kz = grid.wavevectors
    xx, yy, zz, xy, xz, yz = t6
    return -(kx * kx * xx + ky * ky * yy + kz * kz * zz
             + 2.0 * (kx * ky * xy + kx * kz * xz + ky * kz * yz))


def nonlinear_term(u: SpectralField, check_tol: float = 1e-10) -> SpectralField:
    """``(u . grad) u`` written as ``div(u (x) u)``, dealiased, unprojected."""
    _require_vector(u, "nonlinear_term")
    _check_solenoidal(u, check_tol)
    t6 = stress_tensor(u)
    return SpectralField(u.grid, tensor_divergence(t6, u.grid) * u.grid.dealias_mask)


def _poisson_from_double_divergence(rhs: np.ndarray, grid: Grid3) -> np.ndarray:
    """Solve ``-Lap pi = rhs`` with zero mean."""
    k2 = grid.k2.copy()
    k2[0, 0, 0] = 1.0
    out = rhs / k2
    out[0, 0, 0] = 0.0
    return out


def pressure_from(u: SpectralField, check_tol: float = 1e-10) -> SpectralField:
    """Pressure with ``-Lap pi = d_i d_j (u_i u_j)`` and zero mean."""
    _require_vector(u, "pressure_from")
    _check_solenoidal(u, check_tol)
    rhs = tensor_double_divergence(stress_tensor(u), u.grid)
    return SpectralField(u.grid, _poisson_from_double_divergence(rhs, u.grid)[None])


def perturbed_pressure(w: SpectralField, m: SpectralField, check_tol: float = 1e-10):
    """Return ``(pi1, pi2)`` with ``-Lap pi1 = d_i d_j(w_i w_j)`` and
    ``-Lap pi2 = 2 d_i d_j(m_i w_j)``, both mean-free."""
    if w.grid != m.grid:
        raise GridError("w and m live on different grids")
    _require_vector(w, "perturbed_pressure")
    _require_vector(m, "perturbed_pressure")
    _check_solenoidal(w, check_tol)
    _check_solenoidal(m, check_tol)
    g = w.grid
    rhs1 = tensor_double_divergence(stress_tensor(w), g)
    # symmetric mixed product: d_i d_j (m_i w_j) equals d_i d_j of its symmetrization
    rhs2 = 2.0 * tensor_double_divergence(stress_tensor(m, w), g)
    pi1 = SpectralField(g, _poisson_from_double_divergence(rhs1, g)[None])
    pi2 = SpectralField(g, _poisson_from_double_divergence(rhs2, g)[None])
    return pi1, pi2


def lp_norm(f: PhysicalField, p: float) -> float:
    """Lattice quadrature ``(sum |f|^p dx^3)^(1/p)``; ``p = inf`` gives the max."""
    if not p >= 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    mag = f.magnitude()
    if np.isinf(p):
        return float(mag.max())
    if p == 2:
        return float(np.sqrt(np.sum(mag * mag) * f.grid.cell_volume))
    return float((np.sum(mag ** p) * f.grid.cell_volume) ** (1.0 / p))


def inner_product(a: SpectralField, b: SpectralField) -> float:
    """Discrete L^2 pairing ``int a . b dx`` evaluated on coefficients."""
    a._check(b)
    g = a.grid
    s = np.sum(g.hermitian_weight * (a.coeffs.conj() * b.coeffs).real)
    return float(g.volume * s)


def gradient_energy(g: SpectralField) -> float:
    """``||grad g||_2^2`` evaluated on coefficients."""
    grid = g.grid
    return float(grid.volume * np.sum(grid.hermitian_weight * grid.k2
                                      * np.abs(g.coeffs) ** 2))


# -- field constructors used by tests, examples and the CLI -----------------

def from_function(grid: Grid3, func, divergence_free: bool = False) -> SpectralField:
    """Sample ``func(x, y, z) -> array (c, n, n, n)`` and transform."""
    x, y, z = grid.mesh()
    vals = np.asarray(func(x, y, z), dtype=float)
    return to_spectral(PhysicalField(grid, vals), divergence_free)


def random_solenoidal(grid: Grid3, rng: np.random.Generator, kmax: float | None = None,
                      slope: float = 0.0, amplitude: float = 1.0) -> SpectralField:
    """Random mean-free solenoidal field band-limited to ``|k| <= kmax``.

    ``kmax`` is in integer wavenumber units and defaults to the dealiasing
    cutoff. Coefficients are scaled by ``|k|^slope`` and the result is
    normalized so that its RMS value equals ``amplitude``.
    """
    noise = rng.standard_normal((3,) + grid.physical_shape)
    c = sfft.rfftn(noise, axes=_AXES, norm="forward")
    kint = grid.kmag / grid.k0
    if kmax is None:
        kmax = grid.dealias_fraction * grid.n / 2.0
    keep = (kint <= kmax) & (kint > 0) & grid.dealias_mask
    scale = np.where(keep, np.maximum(kint, 1.0) ** slope, 0.0)
    u = leray_project(SpectralField(grid, c * scale))
    rms = np.sqrt(u.energy() / grid.volume)
    if rms == 0:
        return u
    return u * (amplitude / rms)


def taylor_green(grid: Grid3, amplitude: float = 1.0) -> SpectralField:
    """2-D Taylor-Green vortex ``(sin x cos y, -cos x sin y, 0)`` scaled to the box."""
    k = grid.k0

    def func(x, y, z):
        return amplitude * np.stack([np.sin(k * x) * np.cos(k * y),
                                     -np.cos(k * x) * np.sin(k * y),
                                     np.zeros_like(z)])

    return from_function(grid, func, divergence_free=True)


def single_mode(grid: Grid3, kvec=(1, 0, 0), direction=(0, 1, 0),
                amplitude: float = 1.0) -> SpectralField:
    """``amplitude * direction * cos(2 pi k.x / L)``; direction must be orthogonal to k."""
    kv = np.asarray(kvec, dtype=float) * grid.k0
    d = np.asarray(direction, dtype=float)

    def func(x, y, z):
        phase = np.cos(kv[0] * x + kv[1] * y + kv[2] * z)
        return amplitude * d[:, None, None, None] * phase[None]

    div_free = abs(float(np.dot(kv, d))) < 1e-14
    return from_function(grid, func, divergence_free=div_free)
