"""Reference magnetic fields with closed-form potentials.

Each constructor returns the measure in library form; the matching
``*_h`` functions give the plain-kernel potential in closed form and serve
as oracles.
"""

import math

import numpy as np

from .measure import TWO_PI, RadialProfile, SignedMeasure


def bump_flux(r, flux, rho):
    """Cumulative flux of the bump ``B = 6 Phi / rho^2 (1 - r^2/rho^2)^2``."""
    s2 = np.minimum(np.asarray(r, dtype=float) / rho, 1.0) ** 2
    return flux * (1.0 - (1.0 - s2) ** 3)


def bump_field(flux, rho=1.0, n_knots=2001):
    """Smooth compactly supported radial bump of total flux ``flux``."""
    r = np.linspace(0.0, rho, n_knots)
    return SignedMeasure(radial=RadialProfile(r, bump_flux(r, flux, rho)))


def bump_h(r, flux, rho=1.0):
    """Plain-kernel potential of :func:`bump_field`; equals ``flux*log r`` for ``r >= rho``."""
    r = np.asarray(r, dtype=float)
    u = np.minimum(r / rho, 1.0) ** 2
    inner = flux * math.log(rho) - 0.5 * flux * ((3 - 1.5 + 1 / 3) - (3 * u - 1.5 * u**2 + u**3 / 3))
    with np.errstate(divide="ignore"):
        outer = flux * np.log(np.where(r > 0, r, 1.0))
    return np.where(r < rho, inner, outer)


def disk_field(eps, delta, n_knots=2001):
    """Uniform disk ``B0 = 2 (1 + eps) / delta^2`` on ``|x| <= delta`` (flux ``1 + eps``)."""
    r = np.linspace(0.0, delta, n_knots)
    return SignedMeasure(radial=RadialProfile(r, (1 + eps) * (r / delta) ** 2))


def disk_h(r, eps, delta):
    """Plain-kernel potential of :func:`disk_field`."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        outer = (1 + eps) * np.log(np.where(r > 0, r, 1.0))
    inner = (1 + eps) * (math.log(delta) + 0.5 * (r**2 / delta**2 - 1.0))
    return np.where(r < delta, inner, outer)


def threshold_flux(r, N, beta):
    """``Phi(r)`` of the integer-flux threshold field.

    ``(N + beta) r^2 / e^2`` for ``r <= e`` and ``N + beta / log r`` beyond,
    i.e. ``B = 2 (N + beta) e^-2`` inside and ``-beta / (r log r)^2`` outside.
    """
    r = np.asarray(r, dtype=float)
    e = math.e
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = N + beta / np.log(np.maximum(r, e))
    return np.where(r <= e, (N + beta) * r**2 / e**2, outer)


def threshold_density(r, N, beta):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = -beta / (r * np.log(r)) ** 2
    return np.where(r <= math.e, 2 * (N + beta) / math.e**2, outer)


def threshold_h(r, N, beta):
    """``N log r + beta log log r`` for ``r >= e``, matched ``C^1`` inside."""
    r = np.asarray(r, dtype=float)
    e = math.e
    rr = np.maximum(r, e)
    outer = N * np.log(rr) + beta * np.log(np.log(rr))
    inner = (N + beta) * r**2 / (2 * e**2) + (N - beta) / 2
    return np.where(r < e, inner, outer)


def threshold_field(N, beta, r_max=1e6, n_inner=801, n_outer=4000):
    """Knot representation of the threshold field truncated at ``r_max``.

    The field beyond ``r_max`` (flux ``beta / log r_max``) is dropped, so the
    total flux is ``N + beta / log(r_max)``.
    """
    r_in = np.linspace(0.0, math.e, n_inner)
    r_out = np.exp(np.linspace(1.0, math.log(r_max), n_outer))[1:]
    r = np.concatenate([r_in, r_out])
    return SignedMeasure(radial=RadialProfile(r, threshold_flux(r, N, beta)))


def gaussian_density_grid(flux, sigma, n=64, extent=None, center=(0.0, 0.0)):
    """Cell-averaged Gaussian bump of total flux ``flux`` (used in tests and demos)."""
    from scipy.special import erf

    from .measure import DensityGrid

    extent = 5 * sigma if extent is None else extent
    dx = 2 * extent / n
    edges = -extent + dx * np.arange(n + 1)
    cdf = 0.5 * (1 + erf(edges / (math.sqrt(2) * sigma)))
    px, py = np.diff(cdf), np.diff(cdf)
    mass = TWO_PI * flux * np.outer(px, py)
    mass *= TWO_PI * flux / mass.sum()
    origin = (center[0] - extent, center[1] - extent)
    return DensityGrid(origin, (dx, dx), mass / dx**2)
