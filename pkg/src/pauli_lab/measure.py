"""Signed measures on the plane and the bookkeeping around them.

A :class:`SignedMeasure` is the sum of three channels:

* point atoms ``2*pi*C_j * delta_{z_j}``,
* a piecewise constant density on a rectangular grid of cells,
* a radial profile given by knots of the cumulative flux ``Phi(r)``
  (flux inside the disk of radius ``r``, divided by ``2*pi``).

Masses are measured in flux units, so an atom with coefficient ``C`` weighs
``2*pi*C`` and the flux ``Phi`` of a measure is its total mass over ``2*pi``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from ._validation import SingularPointError, check_points

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class DyadicScaleError(RuntimeError):
    """Raised when the dyadic refinement exceeds its depth budget."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DensityGrid:
    """Cell-averaged field ``B`` on a rectangular grid.

    Cell ``(i, j)`` is the half-open rectangle
    ``[x0 + i*dx, x0 + (i+1)*dx) x [y0 + j*dy, y0 + (j+1)*dy)`` and
    ``values[i, j]`` is the (signed) field value there, in flux per area.
    """

    origin: tuple
    spacing: tuple
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("density values must be a non-empty 2D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        dx, dy = (float(s) for s in self.spacing)
        if not (dx > 0 and dy > 0):
            raise ValueError(f"density spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", (dx, dy))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self):
        return self.values.shape

    @property
    def cell_area(self):
        return self.spacing[0] * self.spacing[1]

    @property
    def edges(self):
        (x0, y0), (dx, dy) = self.origin, self.spacing
        nx, ny = self.shape
        return x0 + dx * np.arange(nx + 1), y0 + dy * np.arange(ny + 1)

    @property
    def centers(self):
        ex, ey = self.edges
        return 0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1])

    @property
    def bbox(self):
        ex, ey = self.edges
        return ex[0], ex[-1], ey[0], ey[-1]

    def with_values(self, values):
        return DensityGrid(self.origin, self.spacing, values)

    def rect_mass(self, x0, x1, y0, y1, absolute=True):
        """Exact mass of the rectangles ``[x0, x1) x [y0, y1)`` (arrays allowed)."""
        vals = np.abs(self.values) if absolute else self.values
        ex, ey = self.edges
        x0, x1, y0, y1 = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (x0, x1, y0, y1)))
        out = np.empty(x0.shape)
        # overlap lengths are computed per square; fine for the sizes used in practice
        for idx in np.ndindex(x0.shape):
            ox = np.clip(np.minimum(x1[idx], ex[1:]) - np.maximum(x0[idx], ex[:-1]), 0.0, None)
            oy = np.clip(np.minimum(y1[idx], ey[1:]) - np.maximum(y0[idx], ey[:-1]), 0.0, None)
            ix, iy = np.nonzero(ox)[0], np.nonzero(oy)[0]
            out[idx] = ox[ix] @ vals[np.ix_(ix, iy)] @ oy[iy] if ix.size and iy.size else 0.0
        return out


@dataclass(frozen=True)
class RadialProfile:
    """Radial field described by knots of its cumulative flux.

    ``phi[i]`` is ``Phi(r[i])``, the flux (over ``2*pi``) inside radius
    ``r[i]`` around ``center``. ``Phi`` is linear between knots and constant
    beyond the last knot, so the field itself is ``B(r) = Phi'(r) / r``.
    """

    r: np.ndarray
    phi: np.ndarray
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        r, phi = _frozen(self.r), _frozen(self.phi)
        if r.ndim != 1 or r.shape != phi.shape or r.size < 2:
            raise ValueError("radial profile needs matching 1D knot arrays of length >= 2")
        if r[0] != 0.0 or phi[0] != 0.0:
            raise ValueError("radial profile must start at (r, Phi) = (0, 0)")
        if np.any(np.diff(r) <= 0) or not np.all(np.isfinite(phi)):
            raise ValueError("radial knots must be strictly increasing with finite Phi")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def total(self):
        return float(self.phi[-1])

    @property
    def variation(self):
        return TWO_PI * float(np.sum(np.abs(np.diff(self.phi))))

    @property
    def r_max(self):
        return float(self.r[-1])

    def flux_within(self, radius):
        return np.interp(radius, self.r, self.phi)

    def density(self, radius):
        """Field value ``B(r) = Phi'(r) / r`` (zero beyond the last knot)."""
        radius = np.asarray(radius, dtype=float)
        slopes = np.diff(self.phi) / np.diff(self.r)
        seg = np.clip(np.searchsorted(self.r, radius, side="right") - 1, 0, slopes.size - 1)
        out = np.where(radius < self.r_max, slopes[seg], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(radius > 0, out / radius, np.inf * np.sign(out))

    def rect_mass(self, x0, x1, y0, y1, absolute=True, n_sub=48):
        """Mass of rectangles by midpoint quadrature on an ``n_sub**2`` subgrid."""
        x0, x1, y0, y1 = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (x0, x1, y0, y1)))
        out = np.empty(x0.shape)
        t = (np.arange(n_sub) + 0.5) / n_sub
        cx, cy = self.center
        for idx in np.ndindex(x0.shape):
            if math.hypot(max(x0[idx] - cx, cx - x1[idx], 0), max(y0[idx] - cy, cy - y1[idx], 0)) >= self.r_max:
                out[idx] = 0.0
                continue
            xs = x0[idx] + (x1[idx] - x0[idx]) * t - cx
            ys = y0[idx] + (y1[idx] - y0[idx]) * t - cy
            b = self.density(np.hypot(xs[:, None], ys[None, :]))
            b = np.abs(b) if absolute else b
            out[idx] = b.sum() * (x1[idx] - x0[idx]) * (y1[idx] - y0[idx]) / n_sub**2
        return out


class IntegerAtomList(NamedTuple):
    """Integer point fluxes removed by :func:`reduce`."""

    positions: np.ndarray
    n: np.ndarray

    def __len__(self):
        return int(self.n.size)


def _empty_atoms():
    return np.zeros((0, 3))


@dataclass(frozen=True)
class SignedMeasure:
    """Finite signed measure ``mu`` on R^2.

    Parameters
    ----------
    atoms : array_like, shape (m, 3)
        Rows ``(x, y, C)``; the atom carries mass ``2*pi*C``.
    density : DensityGrid, optional
    radial : RadialProfile, optional
    """

    atoms: np.ndarray = field(default_factory=_empty_atoms)
    density: Optional[DensityGrid] = None
    radial: Optional[RadialProfile] = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atom entries must be finite")
        if len(atoms) > 1:
            pos = atoms[:, :2]
            if len(np.unique(pos, axis=0)) != len(pos):
                raise ValueError("atom positions must be pairwise distinct")
        object.__setattr__(self, "atoms", _frozen(atoms))

    @property
    def positions(self):
        return self.atoms[:, :2]

    @property
    def coefficients(self):
        return self.atoms[:, 2]

    @property
    def is_reduced(self):
        """Membership in M*: every atom coefficient has ``|C| < 1``."""
        return bool(np.all(np.abs(self.coefficients) < 1.0))

    def support_bbox(self):
        """Bounding box ``(x0, x1, y0, y1)`` of the support, or ``None`` if empty."""
        boxes = []
        if len(self.atoms):
            p = self.positions
            boxes.append((p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max()))
        if self.density is not None and np.any(self.density.values):
            ex, ey = self.density.edges
            nz = np.nonzero(self.density.values)
            boxes.append((ex[nz[0].min()], ex[nz[0].max() + 1], ey[nz[1].min()], ey[nz[1].max() + 1]))
        if self.radial is not None:
            (cx, cy), R = self.radial.center, self.radial.r_max
            boxes.append((cx - R, cx + R, cy - R, cy + R))
        if not boxes:
            return None
        b = np.array(boxes)
        return b[:, 0].min(), b[:, 1].max(), b[:, 2].min(), b[:, 3].max()

    def rect_mass(self, x0, x1, y0, y1, absolute=True):
        """Mass of half-open rectangles ``[x0, x1) x [y0, y1)``.

        Atoms and the density channel are exact; the radial channel uses
        midpoint quadrature.
        """
        x0, x1, y0, y1 = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (x0, x1, y0, y1)))
        total = np.zeros(x0.shape)
        if len(self.atoms):
            px, py, c = self.atoms.T
            w = np.abs(c) if absolute else c
            inside = ((px >= x0[..., None]) & (px < x1[..., None])
                      & (py >= y0[..., None]) & (py < y1[..., None]))
            total += TWO_PI * (inside * w).sum(axis=-1)
        if self.density is not None:
            total += self.density.rect_mass(x0, x1, y0, y1, absolute)
        if self.radial is not None:
            total += self.radial.rect_mass(x0, x1, y0, y1, absolute)
        return total

    def __add__(self, other):
        if not isinstance(other, SignedMeasure):
            return NotImplemented
        return combine([self, other])


def combine(parts):
    """Sum measures whose density grids (if several) share a common lattice."""
    atoms = np.concatenate([p.atoms for p in parts])
    if len(atoms):
        pos, inv = np.unique(atoms[:, :2], axis=0, return_inverse=True)
        coeff = np.zeros(len(pos))
        np.add.at(coeff, inv.ravel(), atoms[:, 2])
        atoms = np.column_stack([pos, coeff])
        atoms = atoms[atoms[:, 2] != 0]
    grids = [p.density for p in parts if p.density is not None]
    density = None
    if grids:
        g0 = grids[0]
        for g in grids[1:]:
            if g.origin != g0.origin or g.spacing != g0.spacing or g.shape != g0.shape:
                raise ValueError("cannot add densities on different grids")
        density = g0.with_values(sum(g.values for g in grids))
    radials = [p.radial for p in parts if p.radial is not None]
    if len(radials) > 1:
        raise ValueError("cannot add two radial profiles")
    return SignedMeasure(atoms, density, radials[0] if radials else None)


def total_variation(mu: SignedMeasure) -> float:
    """Total variation ``|mu|(R^2)`` in flux units."""
    tv = TWO_PI * float(np.abs(mu.coefficients).sum())
    if mu.density is not None:
        tv += float(np.abs(mu.density.values).sum()) * mu.density.cell_area
    if mu.radial is not None:
        tv += mu.radial.variation
    return tv


def flux(mu: SignedMeasure) -> float:
    """Signed total mass divided by ``2*pi``."""
    phi = float(mu.coefficients.sum())
    if mu.density is not None:
        phi += float(mu.density.values.sum()) * mu.density.cell_area / TWO_PI
    if mu.radial is not None:
        phi += mu.radial.total
    return phi


def reduce(mu: SignedMeasure):
    """Shift every atom coefficient into ``[-1/2, 1/2)`` by an integer.

    Returns
    -------
    mu_star : SignedMeasure
        The reduced measure; atoms whose coefficient becomes 0 are dropped.
    removed : IntegerAtomList
        The integer shifts, so that ``mu = mu_star + 2*pi*sum(n_j delta_{z_j})``.
    """
    c = mu.coefficients
    n = np.floor(c + 0.5).astype(np.int64)
    c_star = c - n
    keep = c_star != 0
    atoms = np.column_stack([mu.positions, c_star])[keep]
    nz = n != 0
    removed = IntegerAtomList(mu.positions[nz].copy(), n[nz])
    return replace(mu, atoms=atoms), removed


def epsilon_mu(mu: SignedMeasure) -> float:
    """``(1/10) * min_j (1 - |C_j|)``, and ``1/10`` when there are no atoms."""
    c = np.abs(mu.coefficients)
    if np.any(c >= 1.0):
        raise ValueError("measure is not reduced: some atom has |C| >= 1; call reduce() first")
    return 0.1 * (float((1.0 - c).min()) if c.size else 1.0)


# ---------------------------------------------------------------- dyadic squares

_HALF = {"plain": 0.5, "doubled": 1.0, "tripled": 1.5}


@dataclass(frozen=True)
class DyadicSquare:
    """Square of scale ``L`` centred at ``2**-L * (k + 1/2)``, ``k`` integer.

    The centre lattice is ``2**-L Z^2 + 2**(-L-1)``; ``index`` stores the
    integer pair ``k``. Side lengths are 1, 2 and 3 times ``2**-L``.
    """

    scale: int
    index: tuple
    kind: str = "plain"

    def __post_init__(self):
        if self.kind not in _HALF:
            raise ValueError(f"unknown square kind {self.kind!r}")

    @property
    def center(self):
        s = 2.0 ** -self.scale
        return (s * (self.index[0] + 0.5), s * (self.index[1] + 0.5))

    @property
    def side(self):
        return 2 * _HALF[self.kind] * 2.0 ** -self.scale

    @property
    def bounds(self):
        """Half-open bounds ``(x0, x1, y0, y1)``."""
        (cx, cy), h = self.center, 0.5 * self.side
        return cx - h, cx + h, cy - h, cy + h


def square_bounds(scale, kx, ky, kind="tripled"):
    """Vectorized bounds of squares with integer centre indices ``kx, ky``."""
    s = 2.0 ** -scale
    h = _HALF[kind] * s
    cx, cy = s * (np.asarray(kx) + 0.5), s * (np.asarray(ky) + 0.5)
    return cx - h, cx + h, cy - h, cy + h


def squares_meeting(bbox, scale, kind="tripled"):
    """Integer centre indices of all squares of ``kind`` meeting the closed box."""
    x0, x1, y0, y1 = bbox
    s = 2.0 ** -scale
    h = _HALF[kind]
    # a square meets the box iff its centre lies within h*s of it (half-open sides)
    kx = np.arange(math.floor(x0 / s - 0.5 - h), math.ceil(x1 / s - 0.5 + h) + 1)
    ky = np.arange(math.floor(y0 / s - 0.5 - h), math.ceil(y1 / s - 0.5 + h) + 1)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    bx0, bx1, by0, by1 = square_bounds(scale, KX, KY, kind)
    hit = (bx1 > x0) & (bx0 <= x1) & (by1 > y0) & (by0 <= y1)
    return KX[hit], KY[hit]


def tripled_masses(mu, scale, kx, ky):
    return mu.rect_mass(*square_bounds(scale, kx, ky, "tripled"), absolute=True)


def dyadic_scale(mu: SignedMeasure, eps: float, depth_max: int = 24) -> int:
    """Smallest scale ``M >= 1`` at which every tripled square is light.

    A tripled square ``Q`` is light when ``|mu|(Q) < 2*pi*(1 - eps)``. Light
    squares stay light under refinement: each tripled square of scale
    ``L+1`` sits inside the tripled square of scale ``L`` with the nearest
    centre. Only the 16 children of heavy squares are therefore inspected at
    the next scale.

    Raises
    ------
    DyadicScaleError
        If heavy squares survive past ``depth_max``.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    bound = TWO_PI * (1.0 - eps)
    bbox = mu.support_bbox()
    if bbox is None:
        return 1
    kx, ky = squares_meeting(bbox, 1)
    for scale in range(1, depth_max + 1):
        m = tripled_masses(mu, scale, kx, ky)
        heavy = m >= bound
        logger.debug("scale %d: %d squares, %d heavy", scale, m.size, int(heavy.sum()))
        if not heavy.any():
            return scale
        if scale == depth_max:
            worst = int(np.argmax(m))
            raise DyadicScaleError(
                f"{int(heavy.sum())} tripled squares still carry |mu|(Q) >= 2*pi*(1-eps) at "
                f"scale {depth_max}; heaviest mass {m[worst]:.6g} at centre index "
                f"({kx[worst]}, {ky[worst]}). An atom with |C| close to 1-eps is the usual cause."
            )
        hx, hy = kx[heavy], ky[heavy]
        off = np.arange(-1, 3)
        cx = (2 * hx[:, None, None] + off[None, :, None]) + 0 * off[None, None, :]
        cy = (2 * hy[:, None, None] + off[None, None, :]) + 0 * off[None, :, None]
        pairs = np.unique(np.column_stack([cx.ravel(), cy.ravel()]), axis=0)
        kx, ky = pairs[:, 0], pairs[:, 1]
    raise AssertionError("unreachable")


def brute_force_light(mu: SignedMeasure, eps: float, scale: int) -> bool:
    """Check every tripled square of ``scale`` meeting the support directly."""
    bbox = mu.support_bbox()
    if bbox is None:
        return True
    kx, ky = squares_meeting(bbox, scale)
    return bool(np.all(tripled_masses(mu, scale, kx, ky) < TWO_PI * (1.0 - eps)))


# ---------------------------------------------------------------- gauge & split

def gauge_phase(removed: IntegerAtomList, x) -> np.ndarray:
    """Unit phase ``prod_j ((x - z_j)/|x - z_j|)**n_j`` at points ``x``.

    Returns a complex array with one entry per row of ``x``.
    """
    X = check_points(x, "x")
    z = X[:, 0] + 1j * X[:, 1]
    out = np.ones(len(z), dtype=complex)
    for (px, py), n in zip(removed.positions, removed.n):
        d = z - (px + 1j * py)
        if np.any(d == 0):
            raise SingularPointError(f"gauge phase is undefined at the atom ({px}, {py})")
        out *= (d / np.abs(d)) ** int(n)
    return out


class MeasureSplit(NamedTuple):
    d1: SignedMeasure
    d2: SignedMeasure
    c1: SignedMeasure
    c2: SignedMeasure
    radius: float


def split_measure(mu: SignedMeasure, eps: float) -> MeasureSplit:
    """Split ``mu`` into major/minor atoms and compact/far continuous parts.

    ``d1`` keeps the fewest largest atoms so that the remaining atoms weigh
    less than ``eps/2``. ``c1`` keeps the density cells (by centre) inside the
    smallest radius ``2**j`` leaving less than ``eps/2`` of ``|mu_c|`` outside;
    a radial profile always goes to ``c1``.
    """
    order = np.argsort(-np.abs(mu.coefficients), kind="stable")
    w = TWO_PI * np.abs(mu.coefficients[order])
    tails = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    n_major = int(np.argmax(tails < eps / 2))
    d1 = SignedMeasure(mu.atoms[order[:n_major]])
    d2 = SignedMeasure(mu.atoms[order[n_major:]])

    radius = 0.0
    c1 = SignedMeasure(radial=mu.radial)
    c2 = SignedMeasure()
    g = mu.density
    if g is not None:
        cx, cy = g.centers
        rr = np.hypot(cx[:, None], cy[None, :])
        cell_mass = np.abs(g.values) * g.cell_area
        j = math.floor(math.log2(max(min(g.spacing), 1e-300)))
        while True:
            radius = 2.0 ** j
            inner = rr <= radius
            if cell_mass[~inner].sum() < eps / 2:
                break
            j += 1
        c1 = SignedMeasure(density=g.with_values(np.where(inner, g.values, 0.0)), radial=mu.radial)
        c2 = SignedMeasure(density=g.with_values(np.where(inner, 0.0, g.values)))
    return MeasureSplit(d1, d2, c1, c2, radius)
