"""Generating potentials ``h`` with ``laplace(h) = mu``.

Two kernels are available and every function states which one is used:

``"normalized"``
    ``(1/2pi) * integral of log(|x - y| / <y>) dmu(y)`` with ``<y> = sqrt(1 + |y|^2)``;
    this converges for every finite measure.
``"plain"``
    ``(1/2pi) * integral of log|x - y| dmu(y)``. For compact ``mu`` it differs from
    the normalized kernel by the constant ``(1/2pi) * integral of log<y> dmu``.

Atoms and radial profiles are integrated in closed form. Density cells use
the exact antiderivative of ``log r`` over rectangles near the evaluation
point and a corrected midpoint rule further away.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import SingularPointError, check_epsilon, check_points
from .grid import Grid
from .measure import (
    TWO_PI,
    DensityGrid,
    RadialProfile,
    SignedMeasure,
    epsilon_mu,
    flux,
    split_measure,
)

logger = logging.getLogger(__name__)

KERNELS = ("normalized", "plain")

# cells closer than this many cell diameters are integrated exactly
_NEAR_CELLS = 12.0
_CHUNK = 2_000_000


def _check_kernel(kernel):
    if kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}, got {kernel!r}")


# ---------------------------------------------------------------- atoms

def _atom_potential(atoms, X, kernel):
    out = np.zeros(len(X))
    for px, py, c in atoms:
        r = np.hypot(X[:, 0] - px, X[:, 1] - py)
        if np.any(r == 0):
            raise SingularPointError(f"evaluation point coincides with the atom at ({px}, {py})")
        out += c * np.log(r)
        if kernel == "normalized":
            out -= c * 0.5 * math.log1p(px * px + py * py)
    return out


# ---------------------------------------------------------------- density cells

def _rect_log_antiderivative(u, v):
    """``F`` with ``d^2 F / du dv = log sqrt(u^2 + v^2)``."""
    r2 = u * u + v * v
    with np.errstate(divide="ignore", invalid="ignore"):
        t = u * v * (np.log(r2) - 3.0)
        t = np.where(r2 > 0, t, 0.0)
        au = np.where(u != 0, u * u * np.arctan(v / np.where(u != 0, u, 1.0)), 0.0)
        av = np.where(v != 0, v * v * np.arctan(u / np.where(v != 0, v, 1.0)), 0.0)
    return 0.5 * (t + au + av)


def rect_log_integral(x, y, x0, x1, y0, y1):
    """Exact ``integral over [x0,x1]x[y0,y1] of log|(x, y) - q| dq``."""
    u0, u1 = x0 - x, x1 - x
    v0, v1 = y0 - y, y1 - y
    F = _rect_log_antiderivative
    return F(u1, v1) - F(u0, v1) - F(u1, v0) + F(u0, v0)


_GL3 = np.polynomial.legendre.leggauss(3)


def _density_constant(g: DensityGrid):
    """``(1/2pi) * integral of log<y> dmu_density`` by 3x3 Gauss per cell."""
    ex, ey = g.edges
    t, w = _GL3
    dx, dy = g.spacing
    xs = 0.5 * (ex[:-1, None] + ex[1:, None]) + 0.5 * dx * t[None, :]
    ys = 0.5 * (ey[:-1, None] + ey[1:, None]) + 0.5 * dy * t[None, :]
    lx = xs[:, None, :, None] ** 2
    ly = ys[None, :, None, :] ** 2
    avg = 0.25 * np.einsum("ijab,a,b->ij", 0.5 * np.log1p(lx + ly), w, w)
    return float((g.values * avg).sum()) * g.cell_area / TWO_PI


def _density_potential(g: DensityGrid, X, kernel):
    cx, cy = g.centers
    dx, dy = g.spacing
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    keep = g.values != 0
    cx, cy, B = CX[keep], CY[keep], g.values[keep]
    out = np.zeros(len(X))
    if B.size == 0:
        return out
    near = _NEAR_CELLS * math.hypot(dx, dy)
    area = dx * dy
    # second-order correction of the midpoint rule for unequal sides
    anis = (dx * dx - dy * dy) / 24.0
    step = max(1, _CHUNK // B.size)
    for s in range(0, len(X), step):
        xs = X[s:s + step, 0][:, None]
        ys = X[s:s + step, 1][:, None]
        ddx, ddy = cx[None, :] - xs, cy[None, :] - ys
        r2 = ddx * ddx + ddy * ddy
        is_near = r2 < near * near
        with np.errstate(divide="ignore", invalid="ignore"):
            far = area * (0.5 * np.log(r2) + anis * (ddy * ddy - ddx * ddx) / (r2 * r2))
        vals = np.where(is_near, 0.0, far)
        ii, jj = np.nonzero(is_near)
        if ii.size:
            vals[ii, jj] = rect_log_integral(
                xs[ii, 0], ys[ii, 0], cx[jj] - dx / 2, cx[jj] + dx / 2, cy[jj] - dy / 2, cy[jj] + dy / 2
            )
        out[s:s + step] = vals @ B / TWO_PI
    if kernel == "normalized":
        out -= _density_constant(g)
    return out


# ---------------------------------------------------------------- radial channel

def _xlogx(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)


def _log_bracket_antiderivative(s):
    """Antiderivative of ``log sqrt(1 + s^2)``."""
    return 0.5 * (s * np.log1p(s * s) - 2.0 * s + 2.0 * np.arctan(s))


def _radial_tables(p: RadialProfile):
    slopes = np.diff(p.phi) / np.diff(p.r)
    # T_i = integral from r_i to infinity of log(s) dPhi(s)
    seg = slopes * (_xlogx(p.r[1:]) - p.r[1:] - _xlogx(p.r[:-1]) + p.r[:-1])
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    norm = float(np.sum(slopes * (_log_bracket_antiderivative(p.r[1:]) - _log_bracket_antiderivative(p.r[:-1]))))
    return slopes, tail, norm


def radial_channel_potential(p: RadialProfile, r, kernel="plain"):
    """Potential of a radial profile as a function of the distance ``r``.

    With the plain kernel this is ``Phi(r) log r + integral_r^inf log s dPhi(s)``.
    """
    _check_kernel(kernel)
    r = np.asarray(r, dtype=float)
    slopes, tail, norm = _radial_tables(p)
    i = np.clip(np.searchsorted(p.r, r, side="right") - 1, 0, slopes.size - 1)
    inside = r < p.r_max
    rin = np.where(inside, r, p.r[i])
    T = tail[i + 1] + slopes[i] * (_xlogx(p.r[i + 1]) - p.r[i + 1] - _xlogx(rin) + rin)
    T = np.where(inside, T, 0.0)
    phi = p.flux_within(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = np.where(r > 0, phi * np.log(np.where(r > 0, r, 1.0)), 0.0)
    h = lead + T
    if kernel == "normalized":
        h = h - norm
    return h


def _radial_potential_points(p: RadialProfile, X, kernel):
    r = np.hypot(X[:, 0] - p.center[0], X[:, 1] - p.center[1])
    return radial_channel_potential(p, r, kernel)


# ---------------------------------------------------------------- public API

def log_potential(part: SignedMeasure, x, kernel: str = "normalized") -> np.ndarray:
    """Logarithmic potential ``(1/2pi) * integral of K(x, y) dpart(y)``.

    Parameters
    ----------
    part : SignedMeasure
    x : array_like, shape (2,) or (n, 2)
    kernel : {"normalized", "plain"}

    Returns
    -------
    ndarray, shape (n,)

    Raises
    ------
    SingularPointError
        If a point coincides with an atom.
    """
    _check_kernel(kernel)
    X = check_points(x, "x")
    h = _atom_potential(part.atoms, X, kernel)
    if part.density is not None:
        h += _density_potential(part.density, X, kernel)
    if part.radial is not None:
        h += _radial_potential_points(part.radial, X, kernel)
    return h


def _join(a: SignedMeasure, b: SignedMeasure) -> SignedMeasure:
    """Atoms of ``a`` with the continuous channels of ``b``."""
    return SignedMeasure(a.atoms, b.density, b.radial)


@dataclass(frozen=True)
class PotentialField:
    """Sampled generating potential on a :class:`Grid`.

    ``h1`` comes from the major atoms plus the compact part of the continuous
    channels, ``h2`` from the rest. ``evaluator`` returns ``(h1, h2)`` at
    arbitrary points and is what spectral assembly uses off the nodes.
    """

    grid: Grid
    h: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    flux: float
    epsilon: float
    R_asym: Optional[float]
    kernel: str = "normalized"
    evaluator: Optional[Callable] = field(default=None, repr=False, compare=False)
    measure: Optional[SignedMeasure] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("h", "h1", "h2"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != self.grid.shape:
                raise ValueError(f"{name} has shape {a.shape}, grid is {self.grid.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not np.all(np.isfinite(self.h)):
            raise ValueError("h must be finite at every node")

    def evaluate(self, x):
        """``h`` at arbitrary points (requires an evaluator)."""
        if self.evaluator is None:
            raise ValueError("this PotentialField carries no evaluator; only nodal values are known")
        h1, h2 = self.evaluator(check_points(x))
        return h1 + h2

    def evaluate_split(self, x):
        if self.evaluator is None:
            raise ValueError("this PotentialField carries no evaluator; only nodal values are known")
        return self.evaluator(check_points(x))

    @classmethod
    def from_function(cls, grid: Grid, func, flux_value, epsilon=0.1, kernel="plain", R_asym=None):
        """Wrap a closed-form ``h(x, y)`` (all of it assigned to ``h1``)."""
        X, Y = grid.mesh()
        h = np.asarray(func(X, Y), dtype=float)

        def evaluator(P):
            v = np.asarray(func(P[:, 0], P[:, 1]), dtype=float)
            return v, np.zeros_like(v)

        return cls(grid, h, h, np.zeros_like(h), float(flux_value), float(epsilon), R_asym, kernel, evaluator)


def _circle_points(radius, n=256, center=(0.0, 0.0)):
    t = TWO_PI * (np.arange(n) + 0.5) / n
    return np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])


class FluxCheckReport(NamedTuple):
    radii: np.ndarray
    deviation: np.ndarray
    epsilon: float
    R_asym: Optional[float]
    monotone: bool
    passed: bool


def asymptotic_flux_check(pf: PotentialField, radii, n_theta: int = 256) -> FluxCheckReport:
    """Per radius, ``max over the circle of |h1(x) / log|x| - Phi|``.

    Passes when the deviation is at most ``eps`` on every circle beyond the
    empirically located ``R_asym`` (the smallest sampled radius from which on
    all larger sampled radii pass).
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 1):
        raise ValueError("radii must exceed 1 so that log|x| > 0")
    dev = np.empty(radii.size)
    for i, R in enumerate(radii):
        P = _circle_points(R, n_theta)
        h1, _ = pf.evaluate_split(P)
        dev[i] = np.max(np.abs(h1 / math.log(R) - pf.flux))
    ok = dev <= pf.epsilon
    R_asym = None
    if ok[-1]:
        first = radii.size - int(np.argmin(ok[::-1])) if not ok.all() else 0
        R_asym = float(radii[first])
    monotone = bool(np.all(np.diff(dev) <= 1e-12 + 1e-9 * np.abs(dev[:-1])))
    return FluxCheckReport(radii, dev, pf.epsilon, R_asym, monotone, R_asym is not None)


class TailBoundReport(NamedTuple):
    centers: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    C2_plus: float
    C2_minus: float
    exponent_plus: float
    exponent_minus: float
    epsilon: float
    passed: bool


_GL8 = np.polynomial.legendre.leggauss(8)


def tail_square_bound(pf: PotentialField, centers, n_sub: int = 4) -> TailBoundReport:
    """Integrals of ``exp(+-2 h2)`` over the unit squares about ``centers``.

    The constant ``C2`` is fitted as ``max(value / <u>**(2 eps))``; the growth
    exponent is the least-squares slope of ``log(value)`` against
    ``log<u>``. The check passes when both exponents are at most
    ``2 eps`` (for a single square only ``C2`` is reported).
    """
    C = check_points(centers, "centers")
    t, w = _GL8
    # composite Gauss rule on n_sub x n_sub subsquares
    sub = (np.arange(n_sub)[:, None] + 0.5 * (t[None, :] + 1)) / n_sub - 0.5
    nodes, wts = sub.ravel(), np.tile(w / (2 * n_sub), n_sub)
    DX, DY = np.meshgrid(nodes, nodes, indexing="ij")
    W = np.outer(wts, wts).ravel()
    plus, minus = np.empty(len(C)), np.empty(len(C))
    for i, (ux, uy) in enumerate(C):
        P = np.column_stack([ux + DX.ravel(), uy + DY.ravel()])
        _, h2 = pf.evaluate_split(P)
        plus[i] = W @ np.exp(2 * h2)
        minus[i] = W @ np.exp(-2 * h2)
    bracket = np.sqrt(1 + (C ** 2).sum(axis=1))
    eps = pf.epsilon
    C2p = float(np.max(plus / bracket ** (2 * eps)))
    C2m = float(np.max(minus / bracket ** (2 * eps)))
    if len(C) >= 2 and np.ptp(np.log(bracket)) > 0:
        lb = np.log(bracket)
        ep = float(np.polyfit(lb, np.log(plus), 1)[0])
        em = float(np.polyfit(lb, np.log(minus), 1)[0])
        passed = ep <= 2 * eps and em <= 2 * eps
    else:
        ep = em = float("nan")
        passed = True
    return TailBoundReport(C, plus, minus, C2p, C2m, ep, em, eps, passed)


DEFAULT_RADII = 2.0 ** np.arange(1, 13)


def build_potential(mu: SignedMeasure, eps: float, grid: Grid, kernel: str = "normalized",
                    radii=DEFAULT_RADII) -> PotentialField:
    """Sample ``h = h1 + h2`` on ``grid``.

    Parameters
    ----------
    mu : SignedMeasure
        Must be reduced (all ``|C_j| < 1``).
    eps : float
        ``0 < eps < epsilon_mu(mu)``; controls the split and ``R_asym``.
    grid : Grid
    kernel : {"normalized", "plain"}
    radii : array_like
        Circles on which ``R_asym`` is searched.
    """
    _check_kernel(kernel)
    eps = check_epsilon(eps, epsilon_mu(mu))
    parts = split_measure(mu, eps)
    mu1, mu2 = _join(parts.d1, parts.c1), _join(parts.d2, parts.c2)

    def evaluator(P):
        return log_potential(mu1, P, kernel), log_potential(mu2, P, kernel)

    bbox = mu.support_bbox()
    if bbox is not None and (min(bbox[0], bbox[2]) < -grid.extent or max(bbox[1], bbox[3]) > grid.extent):
        warnings.warn("the grid box does not contain the support of mu", RuntimeWarning, stacklevel=2)
    P = grid.points()
    h1, h2 = evaluator(P)
    h1, h2 = h1.reshape(grid.shape), h2.reshape(grid.shape)
    pf = PotentialField(grid, h1 + h2, h1, h2, flux(mu), eps, None, kernel, evaluator, mu)
    report = asymptotic_flux_check(pf, radii)
    logger.info("R_asym = %s (eps = %g)", report.R_asym, eps)
    object.__setattr__(pf, "R_asym", report.R_asym)
    return pf


# ---------------------------------------------------------------- radial potentials

class RadialProfilePotential:
    """``h(r) = h_anchor + integral from r_anchor to r of Phi(s)/s ds``.

    This is the rotationally symmetric solution of ``laplace(h) = mu`` for a
    profile with cumulative flux ``Phi``; it grows like ``Phi(r) log r`` up
    to lower-order corrections.

    Parameters
    ----------
    profile : RadialProfile or callable
        Knots are integrated exactly. A callable ``Phi`` is tabulated on a
        grid uniform in ``r`` below ``r_split`` and uniform in ``log r`` above,
        with any ``breakpoints`` inserted, and interpolated by cubic Hermite
        splines using the exact derivative ``Phi(r)/r``.
    anchor : (r_anchor, h_anchor)
    """

    def __init__(self, profile, anchor=(0.0, 0.0), r_max=1e8, r_split=1.0, breakpoints=(), n_table=4000):
        self.profile = profile
        self.anchor = (float(anchor[0]), float(anchor[1]))
        if isinstance(profile, RadialProfile):
            self._phi = profile.flux_within
            self._knots = None
            self._spline = None
        else:
            self._phi = profile
            lin = np.linspace(0.0, r_split, n_table // 4 + 1)
            log = np.exp(np.linspace(math.log(r_split), math.log(r_max), 3 * n_table // 4 + 1))[1:]
            knots = np.unique(np.concatenate([lin, log, np.asarray(breakpoints, dtype=float)]))
            knots = knots[(knots >= 0) & (knots <= r_max)]
            t, w = np.polynomial.legendre.leggauss(10)
            a, b = knots[:-1], knots[1:]
            s = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * t[None, :]
            seg = 0.5 * (b - a) * ((np.asarray(profile(s.ravel())).reshape(s.shape) / s) @ w)
            H = np.concatenate([[0.0], np.cumsum(seg)])
            d = self._derivative(knots)
            self._knots = knots
            self._spline = CubicHermiteSpline(knots, H, d)
            self._r_max = float(knots[-1])
            self._phi_max = float(profile(np.array([self._r_max]))[0])
        self._offset = 0.0
        self._offset = self.anchor[1] - float(self._raw(np.array([self.anchor[0]]))[0])

    def _derivative(self, r):
        r = np.asarray(r, dtype=float)
        tiny = 1e-9 * max(float(np.max(r)), 1.0)
        rr = np.where(r > 0, r, tiny)
        return np.asarray(self._phi(rr), dtype=float) / rr

    def _raw(self, r):
        r = np.asarray(r, dtype=float)
        if self._spline is None:
            p = self.profile
            slopes = np.diff(p.phi) / np.diff(p.r)
            icpt = p.phi[:-1] - slopes * p.r[:-1]
            with np.errstate(divide="ignore", invalid="ignore"):
                seg = slopes * np.diff(p.r) + np.where(icpt != 0, icpt * np.log(p.r[1:] / np.where(p.r[:-1] > 0, p.r[:-1], 1.0)), 0.0)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            i = np.clip(np.searchsorted(p.r, r, side="right") - 1, 0, slopes.size - 1)
            inside = r < p.r_max
            rr = np.where(inside, r, p.r_max)
            with np.errstate(divide="ignore", invalid="ignore"):
                part = slopes[i] * (rr - p.r[i]) + np.where(
                    icpt[i] != 0, icpt[i] * np.log(rr / np.where(p.r[i] > 0, p.r[i], 1.0)), 0.0)
                out = cum[i] + part
                beyond = cum[-1] + p.total * np.log(np.where(inside, 1.0, r / p.r_max))
            return np.where(inside, out, beyond)
        inside = r <= self._r_max
        with np.errstate(divide="ignore", invalid="ignore"):
            beyond = self._spline(self._r_max) + self._phi_max * np.log(np.where(inside, 1.0, r / self._r_max))
        return np.where(inside, self._spline(np.clip(r, 0, self._r_max)), beyond)

    def __call__(self, x):
        """Evaluate at points ``x`` (shape (n, 2)) measured from the origin."""
        X = check_points(x)
        return self.of_radius(np.hypot(X[:, 0], X[:, 1]))

    def of_radius(self, r):
        return self._raw(r) + self._offset

    def flux_at(self, r):
        return np.asarray(self._phi(np.asarray(r, dtype=float)), dtype=float)

    def gradient_bound(self, r_lo, r_hi, n=400):
        """Max of ``|dh/dr|`` on ``[r_lo, r_hi]`` by centred differences."""
        r = np.linspace(r_lo, r_hi, n)
        step = 1e-5 * max(r_hi, 1.0)
        g = (self.of_radius(r + step) - self.of_radius(np.maximum(r - step, 0))) / (r + step - np.maximum(r - step, 0))
        return float(np.max(np.abs(g)))


def radial_potential(profile, anchor=(0.0, 0.0), **kwargs) -> RadialProfilePotential:
    """Build the radial generating potential of a cumulative-flux profile."""
    return RadialProfilePotential(profile, anchor=anchor, **kwargs)


# ---------------------------------------------------------------- estimator

class GeneratingPotential(BaseEstimator):
    """Estimator front end for :func:`build_potential`.

    Parameters
    ----------
    eps : float, optional
        Split parameter; defaults to half of ``epsilon_mu`` of the fitted measure.
    kernel : {"normalized", "plain"}

    Examples
    --------
    >>> from pauli_lab.measure import SignedMeasure
    >>> gp = GeneratingPotential().fit(SignedMeasure([[0.0, 0.0, 0.4]]))
    >>> round(float(gp.transform([[2.0, 0.0]])[0]), 6)
    0.277259
    """

    def __init__(self, eps=None, kernel="normalized"):
        self.eps = eps
        self.kernel = kernel

    def fit(self, mu: SignedMeasure, y=None):
        _check_kernel(self.kernel)
        if not isinstance(mu, SignedMeasure):
            raise TypeError("fit expects a SignedMeasure")
        emax = epsilon_mu(mu)
        self.eps_ = check_epsilon(self.eps if self.eps is not None else 0.5 * emax, emax)
        parts = split_measure(mu, self.eps_)
        self.measure_ = mu
        self.parts_ = parts
        self.mu1_ = _join(parts.d1, parts.c1)
        self.mu2_ = _join(parts.d2, parts.c2)
        self.flux_ = flux(mu)
        return self

    def transform(self, X):
        """``h`` at the points ``X``; returns shape (n,)."""
        check_is_fitted(self, "mu1_")
        return self.split(X).sum(axis=1)

    def split(self, X):
        """Columns ``(h1, h2)`` at the points ``X``."""
        check_is_fitted(self, "mu1_")
        X = check_points(X)
        return np.column_stack([log_potential(self.mu1_, X, self.kernel), log_potential(self.mu2_, X, self.kernel)])

    def sample(self, grid: Grid, radii=DEFAULT_RADII) -> PotentialField:
        check_is_fitted(self, "mu1_")
        return build_potential(self.measure_, self.eps_, grid, self.kernel, radii)
