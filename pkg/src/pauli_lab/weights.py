"""Muckenhoupt-type behaviour of ``exp(+-2h)`` and the Beurling multiplier.

Weights are represented as ``omega(x) = g(x) * prod_j |x - z_j|**p_j`` with
a smooth factor ``g`` (given through ``log g``) and explicit power-law
singularities. Cell integrals of ``omega**q`` use tensor Gauss rules on
regular cells; on a cell touching a singular point the power factor is
integrated exactly (corner formula in polar coordinates) and the remaining
factor is frozen at the cell centre, which is exact for pure power weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from ._validation import check_positive
from .measure import TWO_PI, DyadicSquare, SignedMeasure, square_bounds

logger = logging.getLogger(__name__)

_GL4 = np.polynomial.legendre.leggauss(4)
_GL24 = np.polynomial.legendre.leggauss(24)


def _sec_power_integral(logL, T, c):
    """``L * integral_0^T (1 + t^2)^c dt`` with ``L = exp(logL)``, overflow-free.

    ``[0, min(T, 1)]`` uses one Gauss panel in ``t``; ``[1, T]`` uses unit
    panels in ``s = log t``, where the integrand ``(1 + e^2s)^c e^s`` is smooth.
    """
    t, w = _GL24
    a = np.minimum(T, 1.0)
    tt = 0.5 * a[:, None] * (t[None, :] + 1.0)
    out = np.exp(logL) * (0.5 * a) * (((1.0 + tt * tt) ** c) @ w)
    big = T > 1.0
    if big.any():
        S = np.log(T[big])
        m = int(min(np.ceil(S.max()), 400)) + 1
        edges = np.linspace(0.0, 1.0, m + 1)
        frac = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * t[None, :]).ravel()
        wf = (0.5 * np.diff(edges)[:, None] * w[None, :]).ravel()
        s_ = S[:, None] * frac[None, :]
        log_f = c * np.logaddexp(0.0, 2.0 * s_) + s_ + logL[big][:, None]
        out[big] += S * (np.exp(log_f) @ wf)
    return out


def corner_power_integral(X, Y, q):
    """``integral_0^X integral_0^Y (x^2 + y^2)^(q/2) dy dx`` for ``X, Y >= 0``, ``q > -2``.

    In polar coordinates the rectangle splits at ``theta = atan(Y/X)``; with
    ``t = tan(theta)`` the two halves are ``X**e F(Y/X) / e`` and
    ``Y**e F(X/Y) / e``, ``F(T) = integral_0^T (1 + t^2)^(e/2 - 1) dt``,
    ``e = q + 2``.
    """
    X, Y = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
    if q <= -2:
        return np.where((X > 0) & (Y > 0), np.inf, 0.0)
    out = np.zeros(X.shape)
    ok = (X > 0) & (Y > 0)
    if not ok.any():
        return out
    Xo, Yo = X[ok], Y[ok]
    # aspect ratios beyond 1e150 are clamped (slivers)
    Xo, Yo = np.maximum(Xo, 1e-150 * Yo), np.maximum(Yo, 1e-150 * Xo)
    e = q + 2.0
    c = 0.5 * e - 1.0
    out[ok] = (_sec_power_integral(e * np.log(Xo), Yo / Xo, c) + _sec_power_integral(e * np.log(Yo), Xo / Yo, c)) / e
    return out


def rect_power_integral(x0, x1, y0, y1, q, z=(0.0, 0.0)):
    """Exact ``integral over [x0,x1]x[y0,y1] of |x - z|**q``."""
    def F(X, Y):
        return np.sign(X) * np.sign(Y) * corner_power_integral(np.abs(X), np.abs(Y), q)

    a, b = np.asarray(x0) - z[0], np.asarray(x1) - z[0]
    c, d = np.asarray(y0) - z[1], np.asarray(y1) - z[1]
    with np.errstate(invalid="ignore"):  # inf - inf for non-integrable powers
        return F(b, d) - F(a, d) - F(b, c) + F(a, c)


@dataclass(frozen=True)
class PowerLawWeight:
    """``omega = exp(log_smooth(x)) * prod_j |x - z_j|**p_j``.

    Parameters
    ----------
    log_smooth : callable, optional
        ``P -> log g(P)`` for points of shape (n, 2); ``None`` means ``g = 1``.
    singular : sequence of ``((x, y), p)``
    """

    log_smooth: Optional[Callable] = None
    singular: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "singular", tuple((tuple(map(float, z)), float(p)) for z, p in self.singular))

    def log_value(self, P):
        P = np.asarray(P, dtype=float)
        out = np.zeros(P.shape[:-1]) if self.log_smooth is None else np.asarray(
            self.log_smooth(P.reshape(-1, 2))).reshape(P.shape[:-1])
        for (zx, zy), p in self.singular:
            with np.errstate(divide="ignore"):
                out = out + p * np.log(np.hypot(P[..., 0] - zx, P[..., 1] - zy))
        return out

    def __call__(self, P, power=1.0):
        return np.exp(power * self.log_value(P))

    def cell_integrals(self, ex, ey, power=1.0):
        """``integral of omega**power`` over the cells of the tensor grid ``ex x ey``."""
        ex, ey = np.asarray(ex, dtype=float), np.asarray(ey, dtype=float)
        t, w = _GL4
        cx, hx = 0.5 * (ex[1:] + ex[:-1]), 0.5 * np.diff(ex)
        cy, hy = 0.5 * (ey[1:] + ey[:-1]), 0.5 * np.diff(ey)
        out = np.empty((cx.size, cy.size))
        W = np.outer(w, w)
        for i0 in range(0, cx.size, 64):
            sl = slice(i0, i0 + 64)
            xs = cx[sl, None] + hx[sl, None] * t[None, :]  # (bx, 4)
            ys = cy[:, None] + hy[:, None] * t[None, :]  # (ny, 4)
            P = np.stack(np.broadcast_arrays(xs[:, None, :, None], ys[None, :, None, :]), axis=-1)
            vals = np.exp(power * self.log_value(P))
            out[sl] = np.einsum("ijab,ab->ij", vals, W) * (hx[sl, None] * hy[None, :])
        for (zx, zy), p in self.singular:
            ix = np.nonzero((ex[:-1] <= zx + 1e-300) & (ex[1:] >= zx))[0]
            iy = np.nonzero((ey[:-1] <= zy + 1e-300) & (ey[1:] >= zy))[0]
            ix = np.unique(np.clip(np.concatenate([ix - 1, ix, ix + 1]), 0, cx.size - 1))
            iy = np.unique(np.clip(np.concatenate([iy - 1, iy, iy + 1]), 0, cy.size - 1))
            for i in ix:
                for j in iy:
                    c = np.array([[cx[i], cy[j]]])
                    rest = PowerLawWeight(self.log_smooth, tuple(s for s in self.singular if s[0] != (zx, zy)))
                    g = float(np.exp(power * rest.log_value(c))[0])
                    out[i, j] = g * float(rect_power_integral(ex[i], ex[i + 1], ey[j], ey[j + 1], power * p, (zx, zy)))
        return out


def power_weight(C, z=(0.0, 0.0)):
    """``|x - z|**(2C)``, the weight ``exp(2h)`` of an atom of coefficient ``C``."""
    return PowerLawWeight(None, (((z[0], z[1]), 2.0 * C),))


def weight_from_potential(h_func, atoms=(), sign=1):
    """``exp(2 * sign * h)`` with the atom singularities split off exactly.

    ``atoms`` are rows ``(x, y, C)`` of the measure generating ``h``.
    """
    atoms = np.asarray(atoms, dtype=float).reshape(-1, 3)

    def log_smooth(P):
        v = np.asarray(h_func(P), dtype=float)
        for x, y, c in atoms:
            v = v - c * np.log(np.hypot(P[:, 0] - x, P[:, 1] - y))
        return 2.0 * sign * v

    return PowerLawWeight(log_smooth, tuple(((x, y), 2.0 * sign * c) for x, y, c in atoms))


# ---------------------------------------------------------------- A2 scan

class A2Row(NamedTuple):
    square: DyadicSquare
    avg_w: float
    avg_winv: float
    product: float


@dataclass
class WeightReport:
    rows: list
    sup_product: float
    region: str = ""
    argmax: Optional[DyadicSquare] = None

    def products(self):
        return np.array([r.product for r in self.rows])

    def sup_by_scale(self):
        out = {}
        for r in self.rows:
            out[r.square.scale] = max(out.get(r.square.scale, 0.0), r.product)
        return out


def _sat(a):
    S = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    S[1:, 1:] = a.cumsum(0).cumsum(1)
    return S


def a2_scan(weight: PowerLawWeight, region, scales: Sequence[int], refine: int = 2, name: str = "") -> WeightReport:
    """Averages of ``omega`` and ``omega**-1`` over doubled dyadic squares.

    Every doubled dyadic square of the given scales lying inside
    ``region = (x0, x1, y0, y1)`` is a union of cells of side
    ``2**-(max(scales) + 1 + refine)``, so its averages are exact cell sums.
    """
    scales = sorted(int(s) for s in scales)
    if not scales:
        raise ValueError("need at least one scale")
    x0, x1, y0, y1 = map(float, region)
    h = 2.0 ** -(scales[-1] + 1 + refine)
    gx0, gy0 = math.floor(x0 / h) * h, math.floor(y0 / h) * h
    nxc, nyc = math.ceil((x1 - gx0) / h - 1e-9), math.ceil((y1 - gy0) / h - 1e-9)
    ex, ey = gx0 + h * np.arange(nxc + 1), gy0 + h * np.arange(nyc + 1)
    Iw = weight.cell_integrals(ex, ey, 1.0)
    Iv = weight.cell_integrals(ex, ey, -1.0)
    if not (np.all(Iw > 0) and np.all(np.isfinite(Iw))):
        raise ValueError("weight must be positive (and locally integrable) on the region")
    Sw, Sv = _sat(Iw), _sat(Iv)
    rows = []
    for L in scales:
        s = 2.0 ** -L
        kx = np.arange(math.ceil(x0 / s + 0.5), math.floor(x1 / s - 1.5) + 1)
        ky = np.arange(math.ceil(y0 / s + 0.5), math.floor(y1 / s - 1.5) + 1)
        if kx.size == 0 or ky.size == 0:
            continue
        KX, KY = np.meshgrid(kx, ky, indexing="ij")
        bx0, bx1, by0, by1 = square_bounds(L, KX, KY, "doubled")
        i0 = np.rint((bx0 - gx0) / h).astype(int)
        i1 = np.rint((bx1 - gx0) / h).astype(int)
        j0 = np.rint((by0 - gy0) / h).astype(int)
        j1 = np.rint((by1 - gy0) / h).astype(int)
        area = (2 * s) ** 2
        aw = (Sw[i1, j1] - Sw[i0, j1] - Sw[i1, j0] + Sw[i0, j0]) / area
        av = (Sv[i1, j1] - Sv[i0, j1] - Sv[i1, j0] + Sv[i0, j0]) / area
        for a, b, p, ix, iy in zip(aw.ravel(), av.ravel(), (aw * av).ravel(), KX.ravel(), KY.ravel()):
            rows.append(A2Row(DyadicSquare(L, (int(ix), int(iy)), "doubled"), float(a), float(b), float(p)))
    if not rows:
        raise ValueError("no doubled square of the requested scales fits in the region")
    best = max(rows, key=lambda r: r.product)
    return WeightReport(rows, best.product, name, best.square)


class A2Scanner:
    """Estimator-style wrapper: ``fit(weight)`` then read ``report_``."""

    def __init__(self, region=(-1.0, 1.0, -1.0, 1.0), scales=(1, 2, 3, 4), refine=2):
        self.region = region
        self.scales = scales
        self.refine = refine

    def get_params(self, deep=True):
        return {"region": self.region, "scales": self.scales, "refine": self.refine}

    def fit(self, weight, y=None):
        self.report_ = a2_scan(weight, self.region, self.scales, self.refine)
        self.sup_product_ = self.report_.sup_product
        return self


# ---------------------------------------------------------------- Jensen bound

class JensenPreconditionError(ValueError):
    """|mu|(tripled square) is not below 2 pi (1 - eps): the scale is too coarse."""


class JensenLevel(NamedTuple):
    scale: int
    area: float
    lhs_plus: float
    lhs_minus: float
    ratio_plus: float
    ratio_minus: float


class JensenReport(NamedTuple):
    phi_plus: float
    phi_minus: float
    exponent_plus: float
    exponent_minus: float
    levels: list
    C_eps: float
    passed: bool


def _restricted_atoms(mu: SignedMeasure, b):
    x0, x1, y0, y1 = b
    A = mu.atoms
    inside = (A[:, 0] >= x0) & (A[:, 0] < x1) & (A[:, 1] >= y0) & (A[:, 1] < y1)
    return A[inside]


def jensen_bound_check(mu: SignedMeasure, square: DyadicSquare, eps: float, depth: int = 4,
                       cells: int = 32, slope_tol: float = 0.05) -> JensenReport:
    """Compare ``integral_Q exp(+-2 h_int)`` with ``|Q|**(1 +- (phi+ - phi-))``.

    ``h_int`` is the plain-kernel potential of the atoms of ``mu`` inside
    the tripled square with the centre of ``Q``; ``phi+-`` are their
    positive and negative fluxes. ``Q`` (a doubled square) and ``depth``
    nested doubled squares of finer scales, centred as close as possible to
    the heaviest atom, are integrated. The check passes when the ratios
    ``lhs / |Q|**exponent`` do not blow up as ``|Q|`` shrinks (log-log slope
    of the ratio against ``|Q|`` at least ``-slope_tol``).

    Only the atom channel is used; non-atomic parts of ``mu`` are bounded
    and do not change the exponents.
    """
    if square.kind != "doubled":
        square = DyadicSquare(square.scale, square.index, "doubled")
    tb = DyadicSquare(square.scale, square.index, "tripled").bounds
    tv = float(mu.rect_mass(*tb))
    if tv >= TWO_PI * (1 - eps):
        raise JensenPreconditionError(
            f"scale too coarse: |mu|(tripled square) = {tv:.6g} >= 2*pi*(1 - eps) = {TWO_PI * (1 - eps):.6g}")
    A = _restricted_atoms(mu, tb)
    phi_p = float(A[A[:, 2] > 0, 2].sum()) if len(A) else 0.0
    phi_m = float(-A[A[:, 2] < 0, 2].sum()) if len(A) else 0.0
    wp = PowerLawWeight(None, tuple(((x, y), 2 * c) for x, y, c in A))
    ep, em = 1 + (phi_p - phi_m), 1 - (phi_p - phi_m)
    if len(A):
        focus = A[np.argmax(np.abs(A[:, 2])), :2]
    else:
        focus = np.array(square.center)
    levels = []
    for j in range(depth + 1):
        L = square.scale + j
        if j == 0:
            sq = square
        else:
            s = 2.0 ** -L
            k = np.floor(focus / s)
            sq = DyadicSquare(L, (int(k[0]), int(k[1])), "doubled")
        x0, x1, y0, y1 = sq.bounds
        ex, ey = np.linspace(x0, x1, cells + 1), np.linspace(y0, y1, cells + 1)
        lp = float(wp.cell_integrals(ex, ey, 1.0).sum())
        lm = float(wp.cell_integrals(ex, ey, -1.0).sum())
        area = (x1 - x0) * (y1 - y0)
        levels.append(JensenLevel(L, area, lp, lm, lp / area**ep, lm / area**em))
    areas = np.array([lv.area for lv in levels])
    ok = True
    for attr in ("ratio_plus", "ratio_minus"):
        r = np.array([getattr(lv, attr) for lv in levels])
        slope = np.polyfit(np.log(areas), np.log(r), 1)[0]
        ok &= bool(slope >= -slope_tol)
    C = max(max(lv.ratio_plus, lv.ratio_minus) for lv in levels)
    return JensenReport(phi_p, phi_m, ep, em, levels, C, ok)


# ---------------------------------------------------------------- reverse Hoelder

class ReverseHolderReport(NamedTuple):
    resolutions: np.ndarray
    integrals: np.ndarray
    changes: np.ndarray
    stable: bool


def reverse_holder_probe(log_weight: Callable, eps: float, square=(-0.5, 0.5, -0.5, 0.5),
                         n0: int = 32, levels: int = 4, rtol: float = 0.05) -> ReverseHolderReport:
    """Refinement trend of the midpoint sums of ``integral_Q omega**(1 + eps)``.

    ``log_weight(P)`` gives ``log omega`` at points of shape (n, 2). The
    midpoint rule is applied on ``n0 * 2**j`` cells per side; singular points
    placed on cell corners are never sampled. When ``omega**(1+eps)`` is not
    integrable the sums keep growing under refinement. Stable means the last
    relative change is below ``rtol``.
    """
    check_positive(eps, "eps", strict=False)
    x0, x1, y0, y1 = square
    res, vals = [], []
    for j in range(levels):
        n = n0 * 2**j
        xs = x0 + (x1 - x0) * (np.arange(n) + 0.5) / n
        ys = y0 + (y1 - y0) * (np.arange(n) + 0.5) / n
        total = 0.0
        for i in range(0, n, 256):
            X, Y = np.meshgrid(xs[i:i + 256], ys, indexing="ij")
            P = np.column_stack([X.ravel(), Y.ravel()])
            total += float(np.exp((1 + eps) * np.asarray(log_weight(P))).sum())
        res.append(n)
        vals.append(total * (x1 - x0) * (y1 - y0) / n**2)
    vals = np.array(vals)
    changes = np.abs(np.diff(vals)) / np.abs(vals[1:])
    return ReverseHolderReport(np.array(res), vals, changes, bool(changes[-1] < rtol))


# ---------------------------------------------------------------- multiplier

def _frequencies(shape, spacing):
    kx = TWO_PI * np.fft.fftfreq(shape[0], d=spacing)
    ky = TWO_PI * np.fft.fftfreq(shape[1], d=spacing)
    return np.meshgrid(kx, ky, indexing="ij")


def beurling_symbol(shape, spacing=1.0, conjugate=False):
    """``m(xi) = (xi1 - i xi2)^2 / |xi|^2`` on the FFT lattice, ``m(0) = 0``."""
    K1, K2 = _frequencies(shape, spacing)
    k2 = K1**2 + K2**2
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(k2 > 0, (K1 - 1j * K2) ** 2 / np.where(k2 > 0, k2, 1.0), 0.0)
    return np.conj(m) if conjugate else m


def beurling_apply(g, spacing=1.0, conjugate=False):
    """``T_m g`` on a periodic grid (``conjugate=True`` applies ``conj(m)``)."""
    g = np.asarray(g, dtype=complex)
    return np.fft.ifft2(beurling_symbol(g.shape, spacing, conjugate) * np.fft.fft2(g))


def spectral_dz(g, spacing=1.0):
    """``d_z g = (d1 - i d2) g / 2`` by FFT."""
    K1, K2 = _frequencies(np.shape(g), spacing)
    return np.fft.ifft2(0.5j * (K1 - 1j * K2) * np.fft.fft2(g))


def spectral_dzbar(g, spacing=1.0):
    """``d_zbar g = (d1 + i d2) g / 2`` by FFT."""
    K1, K2 = _frequencies(np.shape(g), spacing)
    return np.fft.ifft2(0.5j * (K1 + 1j * K2) * np.fft.fft2(g))


@dataclass(frozen=True)
class MultiplierProbe:
    g: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)
    ratio: float


def multiplier_probe(g, omega, spacing=1.0) -> MultiplierProbe:
    """``sum |d_z g|^2 omega / sum |d_zbar g|^2 omega`` with spectral derivatives."""
    num = float(np.sum(np.abs(spectral_dz(g, spacing)) ** 2 * omega))
    den = float(np.sum(np.abs(spectral_dzbar(g, spacing)) ** 2 * omega))
    return MultiplierProbe(np.asarray(g), np.asarray(omega), num / den if den > 0 else float("nan"))


def random_bandlimited(shape, bandwidth, rng):
    """Random trigonometric polynomial with ``|k_i| <= bandwidth`` (no mean)."""
    G = np.zeros(shape, dtype=complex)
    b = int(bandwidth)
    idx = np.r_[0:b + 1, -b:0]
    c = rng.normal(size=(idx.size, idx.size)) + 1j * rng.normal(size=(idx.size, idx.size))
    G[np.ix_(idx % shape[0], idx % shape[1])] = c
    G[0, 0] = 0.0
    return np.fft.ifft2(G) * G.size


def _window(n):
    """Smooth bump supported in the central half of each axis (central quarter of the box)."""
    t = (np.arange(n) + 0.5) / n * 2 - 1  # in (-1, 1)
    s = 2 * t
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(np.abs(s) < 1, np.exp(-1.0 / np.maximum(1 - s * s, 1e-300)), 0.0)
    return w / w.max()


class RatioSuite(NamedTuple):
    max_ratio: float
    ratios: np.ndarray
    skipped: int


def weighted_ratio_suite(omega, samples: int = 64, seed: int = 0, bandwidth: int = 6,
                         spacing: float = 1.0, windowed: bool = True) -> RatioSuite:
    """Max of the weighted multiplier ratio over random test functions.

    Test functions are random band-limited polynomials, multiplied by a
    smooth window supported in the central quarter of the periodic box when
    ``windowed`` (the stand-in for compact support).
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("weight must be positive")
    rng = np.random.default_rng(seed)
    W = np.outer(_window(omega.shape[0]), _window(omega.shape[1])) if windowed else 1.0
    ratios, skipped = [], 0
    for _ in range(samples):
        g = random_bandlimited(omega.shape, bandwidth, rng) * W
        p = multiplier_probe(g, omega, spacing)
        if not np.isfinite(p.ratio):
            skipped += 1
            logger.info("skipped a sample with zero denominator")
            continue
        ratios.append(p.ratio)
    ratios = np.array(ratios)
    return RatioSuite(float(ratios.max()) if ratios.size else float("nan"), ratios, skipped)


def localized_weight(h_values, mask):
    """The weight ``exp(2h)`` on ``mask`` and 1 elsewhere."""
    return np.where(mask, np.exp(2 * np.asarray(h_values)), 1.0)
