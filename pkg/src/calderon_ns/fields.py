"""Synthetic divergence-free fields used for experiments, tests and the CLI."""

from __future__ import annotations

import numpy as np

from .spectral import Grid3, SpectralField, leray_project


def _gaussian_bump_coeffs(grid: Grid3, center, width: float) -> np.ndarray:
    """Half-spectrum coefficients of the periodized Gaussian ``exp(-|x-c|^2/(2 w^2))``."""
    kx, ky, kz = grid.wavevectors
    k2 = grid.k2
    amp = (2 * np.pi * width ** 2) ** 1.5 / grid.volume
    phase = np.exp(-1j * (kx * center[0] + ky * center[1] + kz * center[2]))
    return amp * np.exp(-0.5 * width ** 2 * k2) * phase


def curl_coeffs(grid: Grid3, psi: np.ndarray) -> np.ndarray:
    kx, ky, kz = grid.wavevectors
    return 1j * np.stack([ky * psi[2] - kz * psi[1],
                          kz * psi[0] - kx * psi[2],
                          kx * psi[1] - ky * psi[0]])


def vortex_bump(grid: Grid3, center, width: float, axis, amplitude: float = 1.0) -> SpectralField:
    """Solenoidal bump ``curl(width * g * axis)`` with ``g`` a Gaussian of the given width.

    The peak speed is ``amplitude * exp(-1/2)``, attained on the ring of radius
    ``width`` around the axis.
    """
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    g = _gaussian_bump_coeffs(grid, center, width)
    psi = amplitude * width * axis[:, None, None, None] * g[None]
    return SpectralField(grid, curl_coeffs(grid, psi), divergence_free=True)


def multiscale_bump_field(grid: Grid3, q: float, s: float, rng: np.random.Generator,
                          scales=None, bumps_per_scale: int = 2,
                          cutoff_fraction: float | None = None) -> SpectralField:
    """Sum of vortex bumps at dyadic widths with heights ``2^{j(3/q - s)}``.

    Each scale contributes a block whose L^q norm is of order ``2^{-js}``, so
    the result saturates the ``B^s_{q,inf}`` norm across shells. Widths are
    ``2^-j`` times the box length over ``2 pi``; the finest default scale keeps
    the bump resolved by about three grid points.
    """
    ell = grid.box_len / (2 * np.pi)
    if scales is None:
        j_hi = int(np.floor(np.log2(grid.n / (2 * np.pi * 3.0))))
        scales = range(0, max(j_hi, 0) + 1)
    coeffs = np.zeros((3,) + grid.spectral_shape, complex)
    for j in scales:
        width = ell * 2.0 ** (-j)
        height = 2.0 ** (j * (3.0 / q - s))
        for _ in range(bumps_per_scale):
            center = rng.uniform(0, grid.box_len, 3)
            axis = rng.standard_normal(3)
            coeffs += vortex_bump(grid, center, width, axis, height).coeffs
    field = leray_project(SpectralField(grid, coeffs))
    if cutoff_fraction is not None:
        kint = grid.kmag / grid.k0
        field = field.replace(field.coeffs * (kint <= cutoff_fraction * grid.n / 2))
    coeffs = field.coeffs.copy()
    coeffs[:, 0, 0, 0] = 0
    return SpectralField(grid, coeffs, divergence_free=True)
