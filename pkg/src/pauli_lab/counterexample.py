"""Band field with improper flux above 1 and no zero modes.

The field is ``B = B0 + sum_k (Btilde_k - Bhat_k)``:

* ``B0`` is the uniform disk ``2 (1 + eps) / delta^2`` on ``|x| <= delta``;
* band ``k`` places ``N_k = 10 k`` bumps of flux ``2 pi`` (uniform disks of
  radius ``delta``) at ``n * zeta_{k,j}``, ``zeta`` the ``N_k``-th roots of
  unity, on every ring ``n = 4^k + 1, ..., 4^k + 2^k``;
* ``Bhat_k`` is the radial average of ``Btilde_k``.

Each band carries zero net flux, so the flux through large circles stays
``1 + eps``, while the total variation diverges. All potentials are
evaluated in closed form (plain kernel, normalized so that
``htilde_{k,n} = log|1 - (z/n)^N_k|`` outside the bumps); the radial
potential ``hhat_{k,n}`` is integrated exactly from the lens areas.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from ._validation import check_points
from .measure import TWO_PI

logger = logging.getLogger(__name__)

K_MAX_CAP = 6


def _heron(r, n, s):
    """``16 * area^2`` of the triangle with sides ``r, n, s`` (factored for accuracy)."""
    return np.clip((-n + r + s) * (n + r - s) * (n - r + s) * (n + r + s), 0, None)


def lens_fraction(r, n, s):
    """Fraction of the disk ``|y - n| <= s`` lying inside ``|y| <= r``."""
    r = np.asarray(r, dtype=float)
    out = np.where(r >= n + s, 1.0, 0.0)
    mid = (r > n - s) & (r < n + s)
    if np.any(mid):
        rm = r[mid]
        q = np.sqrt(_heron(rm, n, s))
        # half-angles of the lens seen from the origin and from the disk centre
        a1 = np.arctan2(q, n * n + rm * rm - s * s)
        a2 = np.arctan2(q, (n - rm) * (n + rm) + s * s)
        area = rm * rm * a1 + s * s * a2 - 0.5 * q
        out[mid] = area / (math.pi * s * s)
    return out


def arc_fraction(r, n, s):
    """Fraction of the circle ``|y| = r`` lying inside the disk ``|y - n| <= s``."""
    r = np.asarray(r, dtype=float)
    a = np.arctan2(np.sqrt(_heron(r, n, s)), r * r + n * n - s * s)
    return np.where((r > n - s) & (r < n + s), a / math.pi, 0.0)


class _RingRadial:
    """Cumulative ``integral_{n-s}^{r} F(t)/t dt`` for one ring and disk radius."""

    def __init__(self, n, s, n_table=400):
        self.n, self.s = n, s
        t = np.linspace(0.0, math.pi, n_table + 1)  # r = n - s cos t smooths the endpoints
        gl, gw = np.polynomial.legendre.leggauss(8)
        a, b = t[:-1], t[1:]
        tt = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * gl[None, :]
        rr = n - s * np.cos(tt)
        f = lens_fraction(rr.ravel(), n, s).reshape(rr.shape) / rr * s * np.sin(tt)
        H = np.concatenate([[0.0], np.cumsum(0.5 * (b - a) * (f @ gw))])
        r_nodes = n - s * np.cos(t)
        d = lens_fraction(r_nodes, n, s) / r_nodes * s * np.sin(t)
        self._spline = CubicHermiteSpline(t, H, d)
        self.total = float(H[-1])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        n, s = self.n, self.s
        inside = (r > n - s) & (r < n + s)
        t = np.arccos(np.clip((n - r) / s, -1, 1))
        with np.errstate(divide="ignore"):
            outer = self.total + np.log(np.where(r >= n + s, r, n + s) / (n + s))
        return np.where(r <= n - s, 0.0, np.where(inside, self._spline(t), outer))


@dataclass(frozen=True)
class BandField:
    """Parameters and bookkeeping of the band field.

    Parameters
    ----------
    delta : float
        Bump radius, ``0 < delta < 1/10``.
    eps : float
        ``0 < eps < 1/4``; the improper flux is ``1 + eps``.
    K_max : int
        Number of bands, ``1 <= K_max <= 6``.
    mollify : float
        Width of the smoothed bump edge (0 for indicator bumps). A smoothed
        bump is an average of uniform disks with radii spread over
        ``[delta - w/2, delta + w/2]``.
    """

    delta: float = 0.05
    eps: float = 0.1
    K_max: int = 4
    mollify: float = 0.0

    def __post_init__(self):
        if not 0 < self.delta < 0.1:
            raise ValueError(f"delta must lie in (0, 1/10), got {self.delta}")
        if not 0 < self.eps < 0.25:
            raise ValueError(f"eps must lie in (0, 1/4), got {self.eps}")
        if not (isinstance(self.K_max, (int, np.integer)) and 1 <= self.K_max <= K_MAX_CAP):
            raise ValueError(f"K_max must be an integer in [1, {K_MAX_CAP}], got {self.K_max}")
        if not 0 <= self.mollify < self.delta:
            raise ValueError("mollify width must satisfy 0 <= w < delta")
        for k in self.bands:
            n0 = 4**k + 1
            if TWO_PI * n0 / self.N(k) <= 4 * self.disk_radii.max():
                raise ValueError(f"bumps of band {k} overlap")

    @property
    def bands(self):
        return range(1, self.K_max + 1)

    @staticmethod
    def N(k):
        return 10 * k

    @staticmethod
    def rings(k):
        return np.arange(4**k + 1, 4**k + 2**k + 1)

    @cached_property
    def disk_radii(self):
        """Radii and weights of the uniform disks making up one bump."""
        if self.mollify == 0:
            return np.array([self.delta])
        t, _ = np.polynomial.legendre.leggauss(8)
        return self.delta + 0.5 * self.mollify * t

    @cached_property
    def disk_weights(self):
        if self.mollify == 0:
            return np.array([1.0])
        t, w = np.polynomial.legendre.leggauss(8)
        # smooth (1 - t^2)^2 kernel over the radius spread
        ww = w * (1 - t * t) ** 2
        return ww / ww.sum()

    def centers(self, k):
        """Bump centres of band ``k``, shape (rings, N_k) complex."""
        zeta = np.exp(TWO_PI * 1j * np.arange(1, self.N(k) + 1) / self.N(k))
        return self.rings(k)[:, None] * zeta[None, :]

    def bump_count(self, k=None):
        ks = self.bands if k is None else [k]
        return int(sum(self.N(j) * self.rings(j).size for j in ks))

    @cached_property
    def _radial(self):
        return {(k, int(n), float(s)): _RingRadial(int(n), float(s))
                for k in self.bands for n in self.rings(k) for s in self.disk_radii}

    # ------------------------------------------------------------ potentials

    def h0(self, r):
        r = np.asarray(r, dtype=float)
        d = self.delta
        with np.errstate(divide="ignore"):
            outer = (1 + self.eps) * np.log(np.where(r > 0, r, 1.0))
        return np.where(r >= d, outer, (1 + self.eps) * (math.log(d) + 0.5 * (r * r / (d * d) - 1)))

    def _bump_log(self, rho):
        """Potential of one unit bump at distance ``rho`` (``log rho`` outside the disks)."""
        out = np.zeros_like(rho)
        for s, w in zip(self.disk_radii, self.disk_weights):
            with np.errstate(divide="ignore"):
                outer = np.log(np.where(rho > 0, rho, 1.0))
            out += w * np.where(rho < s, math.log(s) + 0.5 * (rho * rho / (s * s) - 1), outer)
        return out

    def htilde(self, k, n, z):
        """``htilde_{k,n}`` at complex points ``z``."""
        N = self.N(k)
        w = z / n
        aw = np.abs(w)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            small = np.log(np.abs(1 - np.where(aw <= 1, w, 0) ** N))
            large = N * np.log(np.where(aw > 1, aw, 1.0)) + np.log(np.abs(1 - np.where(aw > 1, 1 / w, 0) ** N))
        out = np.where(aw <= 1, small, large)
        s_max = self.disk_radii.max()
        near = np.abs(aw * n - n) < s_max
        if np.any(near):
            zn = z[near]
            zeta = np.exp(TWO_PI * 1j * np.arange(1, N + 1) / N)
            # log|z - n zeta_j| summed, with the nearest bump replaced by its interior potential
            d = np.abs(zn[:, None] - n * zeta[None, :])
            j = np.argmin(d, axis=1)
            rows = np.arange(zn.size)
            rho = d[rows, j].copy()
            d[rows, j] = 1.0
            out[near] = np.log(d).sum(axis=1) - N * math.log(n) + self._bump_log(rho)
        return out

    def hhat(self, k, n, r):
        """``hhat_{k,n}(|x|) = N_k * integral_0^{|x|} F(t)/t dt`` with lens fractions ``F``."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for s, w in zip(self.disk_radii, self.disk_weights):
            out += w * self._radial[(k, int(n), float(s))](r)
        return self.N(k) * out

    def h_band(self, k, z):
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        return sum(self.htilde(k, n, z) - self.hhat(k, n, r) for n in self.rings(k))

    def h(self, x, bands=None):
        """Closed-form ``h`` at points ``x`` (shape (n, 2))."""
        X = check_points(x)
        z = X[:, 0] + 1j * X[:, 1]
        out = self.h0(np.abs(z))
        for k in (self.bands if bands is None else bands):
            out = out + self.h_band(k, z)
        return out

    def h_complex(self, z, bands=None):
        z = np.asarray(z, dtype=complex)
        shape = z.shape
        z = z.ravel()
        out = self.h0(np.abs(z))
        for k in (self.bands if bands is None else bands):
            out = out + self.h_band(k, z)
        return out.reshape(shape)

    # ------------------------------------------------------------ flux bookkeeping

    def flux_tilde(self, r):
        """Flux (over ``2 pi``) of all bumps inside radius ``r``."""
        r = np.asarray(r, dtype=float)
        tot = np.zeros_like(r)
        for k in self.bands:
            for n in self.rings(k):
                for s, w in zip(self.disk_radii, self.disk_weights):
                    tot += w * self.N(k) * lens_fraction(r, n, s)
        return tot

    def flux_hat(self, r):
        """Flux (over ``2 pi``) of the radial averages, from their own density."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros_like(r)
        for k in self.bands:
            N = self.N(k)
            for n in self.rings(k):
                for s, w in zip(self.disk_radii, self.disk_weights):
                    # Bhat = (2/s^2) * N * arc_fraction; cumulative flux = integral Bhat t dt,
                    # with t = n - s cos(phi) removing the square-root endpoints
                    f = lambda p, n=n, s=s: ((2 / (s * s)) * N * arc_fraction(n - s * math.cos(p), n, s)
                                             * (n - s * math.cos(p)) * s * math.sin(p))
                    for i, ri in enumerate(r):
                        if ri <= n - s:
                            continue
                        p_hi = math.acos(max(-1.0, min(1.0, (n - ri) / s)))
                        out[i] += w * integrate.quad(f, 0.0, p_hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return out

    def flux(self, r):
        """``Phi(r)`` of the whole field: disk part plus band remainders."""
        r = np.asarray(r, dtype=float)
        disk = (1 + self.eps) * np.minimum(1.0, (r / self.delta) ** 2)
        return disk + self.flux_tilde(r) - self.flux_hat(r)

    def total_variation(self, k=None):
        """Exact ``|B|`` mass of band ``k`` (or of all bands)."""
        ks = self.bands if k is None else [k]
        tv = 0.0
        for j in ks:
            N = self.N(j)
            for n in self.rings(j):
                # |Bt - Bh| = Bt - Bh on the disks and Bh elsewhere; Bh <= Bt on disks
                for s, w in zip(self.disk_radii, self.disk_weights):
                    f2 = lambda t, n=n, s=s: (2 / (s * s)) * (N * arc_fraction(t, n, s)) ** 2 * TWO_PI * t
                    overlap = integrate.quad(f2, n - s, n + s, epsabs=1e-12, limit=200)[0]
                    tv += w * (2 * TWO_PI * N - 2 * overlap)
        return tv

    # ------------------------------------------------------------ descriptor

    def describe(self):
        return {
            "delta": self.delta, "eps": self.eps, "K_max": self.K_max, "mollify": self.mollify,
            "bands": [{"k": k, "N_k": self.N(k), "rings": [int(self.rings(k)[0]), int(self.rings(k)[-1])],
                       "bumps": self.bump_count(k)} for k in self.bands],
        }


def build_band_field(delta=0.05, eps=0.1, K_max=4, mollify=0.0) -> BandField:
    return BandField(delta, eps, K_max, mollify)


def h_explicit(x, band: BandField):
    """``h(x)`` of the band field (inside bumps via the uniform-disk potential)."""
    return band.h(x)


# ---------------------------------------------------------------- divergence scan

class BandTerm(NamedTuple):
    k: int
    t_k: float
    ratio: float
    predicted_ratio: float
    per_ring: np.ndarray
    flagged: int
    lower_bound: float


class DivergenceScan(NamedTuple):
    terms: list
    eps: float
    increasing: bool

    @property
    def t(self):
        return np.array([b.t_k for b in self.terms])

    @property
    def ratios(self):
        return np.array([b.ratio for b in self.terms[1:]])

    @property
    def predicted(self):
        return np.array([b.predicted_ratio for b in self.terms[1:]])

    @property
    def lower_bounds(self):
        return np.array([b.lower_bound for b in self.terms])

    @property
    def lower_bound_ratios(self):
        b = self.lower_bounds
        return b[1:] / b[:-1]


def predicted_ratio(k, eps):
    """Ratio of consecutive lower-bound terms ``2^{k(1-4 eps)} / N_k``, from ``k`` to ``k+1``."""
    return 2 ** (1 - 4 * eps) * k / (k + 1)


def _shell_rule(delta, nr, nt):
    t, w = np.polynomial.legendre.leggauss(nr)
    rho = 1.5 * delta + 0.5 * delta * t
    wr = 0.5 * delta * w * rho
    th = TWO_PI * (np.arange(nt) + 0.5) / nt
    off = rho[:, None] * np.exp(1j * th)[None, :]
    W = wr[:, None] * (TWO_PI / nt) * np.ones(nt)[None, :]
    return off.ravel(), W.ravel()


def shell_integrals(band: BandField, k, nr=12, nt=64, check=True):
    """``integral of exp(-2h)`` over each shell ``delta <= |rho| <= 2 delta`` of band ``k``.

    Returns an array of shape (rings, N_k) and the number of shells where the
    rule disagrees with a coarser one by more than ``1e-4`` (relative).
    """
    C = band.centers(k)
    off, W = _shell_rule(band.delta, nr, nt)
    z = C.ravel()[:, None] + off[None, :]
    vals = np.exp(-2 * band.h_complex(z)) @ W
    flagged = 0
    if check:
        off2, W2 = _shell_rule(band.delta, nr // 2, nt // 2)
        z2 = C.ravel()[:, None] + off2[None, :]
        coarse = np.exp(-2 * band.h_complex(z2)) @ W2
        bad = np.abs(coarse - vals) > 1e-4 * np.abs(vals)
        flagged = int(bad.sum())
        if flagged:
            logger.warning("band %d: %d shells did not converge to 1e-4", k, flagged)
    return vals.reshape(C.shape), flagged


def lower_bound_term(band: BandField, k, nr=12, nt=64):
    """``sum_m N_k m^{-2(1+eps)} integral_shell |1 - (1 + rho/m)^N_k|^{-2}``.

    This is the band-``k`` term of the lower bound obtained by dropping the
    other rings and the radial averages; its ratios follow
    :func:`predicted_ratio`.
    """
    off, W = _shell_rule(band.delta, nr, nt)
    N = band.N(k)
    m = band.rings(k).astype(float)
    vals = np.abs(1 - (1 + off[None, :] / m[:, None]) ** N) ** -2 @ W
    return float(np.sum(N * m ** (-2 * (1 + band.eps)) * vals))


def divergence_scan(band: BandField, K_max=None, nr=12, nt=64) -> DivergenceScan:
    """Per-band terms ``t_k = integral over band-k shells of exp(-2h)``.

    Alongside ``t_k`` the lower-bound term of :func:`lower_bound_term` is
    reported; the true terms exceed it because the neighbouring rings of the
    same band push ``h`` further down.
    """
    K = band.K_max if K_max is None else K_max
    terms = []
    prev = None
    for k in range(1, K + 1):
        vals, flagged = shell_integrals(band, k, nr, nt)
        t = float(vals.sum())
        ratio = t / prev if prev else float("nan")
        pred = predicted_ratio(k - 1, band.eps) if k > 1 else float("nan")
        terms.append(BandTerm(k, t, ratio, pred, vals.sum(axis=1), flagged, lower_bound_term(band, k, nr, nt)))
        prev = t
    t = np.array([b.t_k for b in terms])
    return DivergenceScan(terms, band.eps, bool(np.all(np.diff(t) > 0)))


def isolated_bump_shell(m, N, eps, delta):
    """Linearized one-bump shell integral ``m^{-2 eps} * 2 pi log 2 / N^2``.

    Only the bump's own factor is retained, so this is the per-bump
    integrand of the lower bound, not ``t_k`` per bump.

    Near a bump ``exp(-2h) ~ |x|^{-2(1+eps)} |1 - (x/m)^N|^{-2}`` with
    ``1 - (1 + rho/m)^N ~ -N rho / m``.
    """
    return m ** (-2 * eps) * TWO_PI * math.log(2) / N**2


# ---------------------------------------------------------------- monomial probe

class ProbeRow(NamedTuple):
    m: int
    k: int
    value: float
    predicted_exponent: float


class ProbeTable(NamedTuple):
    rows: list
    growth: dict  # m -> bool, strictly increasing in k on the annuli
    deferred: dict  # m -> verdict taken from divergence_scan (m = 0 only)

    def verdict(self, m):
        return self.deferred.get(m, self.growth[m])

    def values(self, m):
        return np.array([r.value for r in self.rows if r.m == m])


def annulus_integral(band: BandField, k, m, nr=8, nt=None):
    """``integral over A_k of exp(-2h) |z|^{2m}``, ``A_k = {3*4^k - 1 <= |x| <= 3*4^k + 1}``."""
    R = 3 * 4**k
    nt = nt or max(512, 16 * band.N(k + 1))
    t, w = np.polynomial.legendre.leggauss(nr)
    r = R + t
    th = TWO_PI * (np.arange(nt) + 0.5) / nt
    z = r[:, None] * np.exp(1j * th)[None, :]
    logf = -2 * band.h_complex(z) + 2 * m * np.log(r)[:, None]
    W = (w * r)[:, None] * (TWO_PI / nt)
    return float(np.sum(np.exp(logf) * W))


def no_zero_mode_probe(band: BandField, degrees=range(4), K_max=None, scan=None) -> ProbeTable:
    """Growth in ``k`` of ``integral_{A_k} exp(-2h) |z|^{2m}``.

    On ``A_k`` the potential is ``h0 + O(1)``, so the terms scale like
    ``4^{k(2m - 1 - 2 eps)}``: growing for ``m >= 1``, decaying for ``m = 0``
    (the constant is handled by :func:`divergence_scan`, whose verdict is
    stored in ``deferred``).
    """
    K = band.K_max if K_max is None else K_max
    rows, growth = [], {}
    for m in degrees:
        vals = []
        for k in range(1, K + 1):
            v = annulus_integral(band, k, m)
            vals.append(v)
            rows.append(ProbeRow(int(m), k, v, 2 * m - 1 - 2 * band.eps))
        growth[int(m)] = bool(np.all(np.diff(vals) > 0))
    deferred = {}
    if 0 in growth:
        scan = divergence_scan(band, K) if scan is None else scan
        deferred[0] = scan.increasing
    return ProbeTable(rows, growth, deferred)
