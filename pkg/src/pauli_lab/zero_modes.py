"""Aharonov-Casher count, candidate zero modes and their normalizability.

For positive flux the kernel is spanned by spin-down spinors
``psi_down = g(z) * exp(-h)`` with ``d_z g = 0``; the candidates are the
conjugate monomials ``conj(z)**k``. For negative flux every role is mirrored
(spin up, ``z**k * exp(h)``); this is handled by a single sign ``s`` rather
than separate code paths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .measure import SignedMeasure, flux as measure_flux, reduce
from .spectrum import (
    assemble_form,
    free_dirichlet_eigenvalue,
    kernel_dimension,
    lowest_eigenvalues,
)

logger = logging.getLogger(__name__)

INTEGER_TOL = 1e-9


@dataclass(frozen=True)
class ACPrediction:
    flux: float
    regime: str  # nonzero-fractional | zero | integer-ambiguous | integer-compact-or-signed
    dimension: Optional[int]
    candidates: tuple
    sign: int

    def admits(self, d: int) -> bool:
        return d in self.candidates


def _definite_sign(mu: SignedMeasure) -> bool:
    signs = set()
    signs.update(np.sign(mu.coefficients[mu.coefficients != 0]).tolist())
    if mu.density is not None:
        v = mu.density.values
        signs.update(np.sign(v[v != 0]).tolist())
    if mu.radial is not None:
        d = np.diff(mu.radial.phi)
        signs.update(np.sign(d[d != 0]).tolist())
    return len(signs) <= 1


def ac_predict(mu: Optional[SignedMeasure] = None, *, flux: Optional[float] = None,
               compact: Optional[bool] = None, definite_sign: Optional[bool] = None) -> ACPrediction:
    """Predicted kernel dimension of the Pauli operator.

    ``floor(|Phi|)`` for non-integer flux, 0 for zero flux, and for a
    nonzero integer either ``|Phi| - 1`` or ``|Phi|``; the lower value is
    certain when the measure is compactly supported or of definite sign.

    Pass a (reduced) measure, or the flux and flags directly. Every finite
    :class:`SignedMeasure` is compactly supported; fields with non-compact
    support (threshold tails) have to be described by flags.
    """
    if mu is not None:
        phi = measure_flux(mu) if flux is None else float(flux)
        compact = True if compact is None else compact
        definite_sign = _definite_sign(mu) if definite_sign is None else definite_sign
    elif flux is None:
        raise ValueError("give a measure or a flux value")
    else:
        phi = float(flux)
    if not math.isfinite(phi):
        raise ValueError("infinite flux: the count is not covered; use the radial-profile tools")
    a = abs(phi)
    s = int(np.sign(phi))
    n = round(a)
    if a < INTEGER_TOL:
        return ACPrediction(phi, "zero", 0, (0,), 0)
    if abs(a - n) > INTEGER_TOL:
        d = math.floor(a)
        return ACPrediction(phi, "nonzero-fractional", d, (d,), s)
    if compact or definite_sign:
        return ACPrediction(phi, "integer-compact-or-signed", n - 1, (n - 1,), s)
    return ACPrediction(phi, "integer-ambiguous", None, (n - 1, n), s)


# ---------------------------------------------------------------- candidate modes

@dataclass(frozen=True)
class CandidateMode:
    """``conj(z)**k * exp(-h)`` (or the mirrored ``z**k * exp(h)`` for ``sign = -1``)."""

    degree: int
    spin: str
    sign: int
    h_func: Callable = field(repr=False)
    values: Optional[np.ndarray] = field(default=None, repr=False)
    tail_exponent: Optional[float] = None

    def log_abs2(self, points):
        """``log |m|^2`` at points (robust against overflow of ``|z|**k``)."""
        P = np.asarray(points, dtype=float)
        r2 = np.sum(P * P, axis=-1)
        with np.errstate(divide="ignore"):
            lk = self.degree * np.log(r2) if self.degree else 0.0
        return lk - 2 * self.sign * np.asarray(self.h_func(P.reshape(-1, 2))).reshape(r2.shape)

    def __call__(self, points):
        P = np.asarray(points, dtype=float).reshape(-1, 2)
        z = P[:, 0] + 1j * P[:, 1]
        zk = (np.conj(z) if self.sign > 0 else z) ** self.degree
        return zk * np.exp(-self.sign * np.asarray(self.h_func(P)))


def candidate_modes(pf, degrees=None, h_func=None):
    """Candidate kernel vectors for the flux of ``pf``.

    Degrees ``0 .. ceil(|Phi|) - 1``; for integer flux this includes the
    threshold candidate of degree ``|Phi| - 1``. Values are sampled on the
    grid nodes; ``tail_exponent`` is the power-counting exponent of ``|m|^2``.
    """
    phi = pf.flux
    s = 1 if phi >= 0 else -1
    if degrees is None:
        degrees = range(max(math.ceil(abs(phi) - INTEGER_TOL), 0))
    h_func = h_func or pf.evaluate
    out = []
    P = pf.grid.points()
    for k in degrees:
        m = CandidateMode(int(k), "down" if s > 0 else "up", s, h_func)
        vals = m(P).reshape(pf.grid.shape)
        # |m|^2 ~ r^(2k - 2|Phi|) at infinity
        out.append(CandidateMode(m.degree, m.spin, s, h_func, vals, 2.0 * (k - abs(phi))))
    return out


def core_cutoff(grid, inner: float = 0.5):
    """Smoothstep radial cutoff, 1 on ``|x| <= inner * extent`` and 0 from ``|x| = extent`` on.

    Candidate modes are multiplied by it before Rayleigh quotients are taken,
    so the Dirichlet truncation does not add a jump at the box edge.
    """
    X, Y = grid.mesh()
    L = grid.extent
    t = np.clip((L - np.hypot(X, Y)) / ((1.0 - inner) * L), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def candidate_rayleigh(op, modes, inner: float = 0.5):
    """Rayleigh quotients of the cut-off candidate modes on a :class:`GridOperator`."""
    chi = core_cutoff(op.grid, inner)
    return [op.rayleigh_quotient(m.values * chi, m.spin) for m in modes]


class Normalizability(NamedTuple):
    verdict: str  # normalizable | borderline | divergent
    slope: float
    tail_exponent: float
    radii: np.ndarray
    log_masses: np.ndarray


_GL = np.polynomial.legendre.leggauss(24)


def annulus_log_mass(mode: CandidateMode, r_lo, r_hi, n_theta=64):
    """``log`` of ``integral over r_lo < |x| < r_hi of |m|^2`` (polar Gauss in ``log r``)."""
    t, w = _GL
    u0, u1 = math.log(r_lo), math.log(r_hi)
    u = 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * t
    wu = 0.5 * (u1 - u0) * w
    th = 2 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    R = np.exp(u)
    P = np.stack([R[:, None] * np.cos(th)[None, :], R[:, None] * np.sin(th)[None, :]], axis=-1)
    L = mode.log_abs2(P)  # (nu, ntheta)
    # dx = r^2 du dtheta in log-polar coordinates
    logw = np.log(wu)[:, None] + 2 * u[:, None] + math.log(2 * math.pi / n_theta)
    return float(logsumexp(L + logw))


def normalizability_test(mode: CandidateMode, radii=None, margin: float = 0.1, scale: str = "r",
                         n_theta: int = 64) -> Normalizability:
    """Fit the growth of annulus masses and classify the tail.

    ``scale="r"`` uses dyadic annuli ``[r_j, 2 r_j]`` and fits
    ``log(mass)`` against ``log r``; ``|m|^2 ~ r^p`` gives slope ``p + 2``.
    ``scale="log"`` uses annuli ``[e^u, e^(2u)]`` (dyadic in ``log r``) and
    fits against ``log u``, which resolves logarithmic corrections such as
    ``(log r)^(-2 beta)``. In both cases the masses are summable when the
    slope is negative: ``< -margin`` is normalizable, ``> margin`` divergent,
    anything in between borderline.
    """
    if scale not in ("r", "log"):
        raise ValueError("scale must be 'r' or 'log'")
    if radii is None:
        radii = 2.0 ** np.arange(2, 9) if scale == "r" else 2.0 ** np.arange(1, 8)
    radii = np.asarray(radii, dtype=float)
    if radii.size < 4:
        raise ValueError("need at least 4 annuli")
    logs = np.empty(radii.size)
    for i, r in enumerate(radii):
        if scale == "r":
            logs[i] = annulus_log_mass(mode, r, 2 * r, n_theta)
        else:
            logs[i] = annulus_log_mass(mode, math.exp(r), math.exp(2 * r), n_theta)
    slope = float(np.polyfit(np.log(radii), logs, 1)[0])
    verdict = "normalizable" if slope < -margin else "divergent" if slope > margin else "borderline"
    return Normalizability(verdict, slope, slope - 2 if scale == "r" else float("nan"), radii, logs)


def threshold_scan(N: int, betas):
    """Predicted dimension for the threshold field: ``N`` if ``beta > 1/2`` else ``N - 1``."""
    out = []
    for b in np.atleast_1d(betas):
        if b <= 0:
            raise ValueError("beta must be positive")
        out.append(N if b > 0.5 else N - 1)
    return out


def threshold_count(N: int, beta: float, margin: float = 0.1, radii=2.0 ** np.arange(1, 8)):
    """Count normalizable candidates of the threshold field by the tail oracle.

    The closed-form potential ``N log r + beta log log r`` is used; the
    threshold candidate ``conj(z)**(N-1) exp(-h)`` has annulus masses
    ``~ (log r)^(-2 beta)`` per ``d log r`` and is classified on the
    logarithmic scale.
    """
    from .fields import threshold_h

    def h(P):
        return threshold_h(np.hypot(P[:, 0], P[:, 1]), N, beta)

    results = []
    for k in range(N):
        mode = CandidateMode(k, "down", 1, h)
        results.append(normalizability_test(mode, radii=radii, margin=margin, scale="log"))
    count = sum(r.verdict == "normalizable" for r in results)
    return count, results


# ---------------------------------------------------------------- pipeline

class SpectralCount(NamedTuple):
    report: object
    eigen: object
    operator: object
    reference: float


def count_kernel(pf, k: int = 8, gap_factor: float = 10.0, scheme: str = "corrected", spins=None,
                 tol: float = 1e-8):
    """Assemble, solve and count for one :class:`PotentialField`."""
    op = assemble_form(pf, scheme=scheme, spins=spins or ("up", "down"))
    eig = lowest_eigenvalues(op, k, tol=tol)
    ref = free_dirichlet_eigenvalue(pf.grid.nx, pf.grid.spacing[0])
    sign = 1 if pf.flux >= 0 else -1
    rep = kernel_dimension(eig.eigenvalues, gap_factor=gap_factor, reference=ref, vectors=eig.vectors,
                           sign=sign, spins=eig.spins)
    return SpectralCount(rep, eig, op, ref)


class ZeroModeCounter(BaseEstimator):
    """Estimator wrapper: ``fit(pf)`` counts the numerical kernel.

    Attributes after fit: ``report_`` (KernelReport), ``eigenvalues_``,
    ``dimension_``, ``prediction_`` (ACPrediction from the flux) and
    ``rayleigh_`` (Rayleigh quotients of the cut-off candidate modes).
    """

    def __init__(self, k=8, gap_factor=10.0, scheme="corrected", spins=None, tol=1e-8):
        self.k = k
        self.gap_factor = gap_factor
        self.scheme = scheme
        self.spins = spins
        self.tol = tol

    def fit(self, pf, y=None):
        res = count_kernel(pf, self.k, self.gap_factor, self.scheme, self.spins, self.tol)
        self.report_ = res.report
        self.operator_ = res.operator
        self.eigenvalues_ = res.eigen.eigenvalues
        self.dimension_ = res.report.dimension
        self.prediction_ = ac_predict(flux=pf.flux, compact=True)
        self.rayleigh_ = []
        if pf.evaluator is not None:
            self.rayleigh_ = candidate_rayleigh(res.operator, candidate_modes(pf))
        return self

    def predict(self, pf=None):
        """The counted dimension (``pf`` is accepted for API symmetry and ignored)."""
        check_is_fitted(self, "report_")
        return self.dimension_


class ACCheck(NamedTuple):
    prediction: ACPrediction
    report: object
    candidates: list
    verdicts: list
    rayleigh: list
    removed: object


def acheck(mu: SignedMeasure, grid, eps=None, k: int = 8, gap_factor: float = 10.0,
           scheme: str = "corrected", radii=None):
    """Full pipeline: reduce, build ``h``, candidates, spectrum, compare."""
    from .measure import epsilon_mu
    from .potential import build_potential

    mu_star, removed = reduce(mu)
    eps = 0.5 * epsilon_mu(mu_star) if eps is None else eps
    pf = build_potential(mu_star, eps, grid)
    pred = ac_predict(mu_star)
    counted = count_kernel(pf, k, gap_factor, scheme)
    cands = candidate_modes(pf)
    verdicts = [normalizability_test(m, radii=radii) for m in cands]
    rq = candidate_rayleigh(counted.operator, cands)
    return ACCheck(pred, counted.report, cands, verdicts, rq, removed)
