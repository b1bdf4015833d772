"""Discrete Pauli quadratic form on a Dirichlet box and its low spectrum.

The unknowns are the spinor values ``psi`` at the interior nodes of a
square :class:`~pauli_lab.grid.Grid` with spacing ``a``; boundary values are
zero. Each block of the form is written as ``a**2 * psi^H H psi`` with
``H = 2 D^H D``, where every row of ``D`` samples one weighted derivative.

For spin down the row of triangle ``T`` is
``exp(-h_T) * d_z(exp(h) psi)``; for spin up it is
``exp(h_T) * d_zbar(exp(-h) psi)``. Multiplying by the triangle area
``a**2 / 2`` and by 4 gives the continuum form
``4 * integral |d_zbar(e^-h psi+)|^2 e^{2h} + |d_z(e^h psi-)|^2 e^{-2h}``.
Only differences ``h_T - h_v`` enter, so adding a constant to ``h`` never
changes ``H`` and no rescaling against overflow is needed.

Schemes
-------
``"p1"``
    Piecewise linear elements on the two triangles of every cell (forward
    differences on lower, backward on upper triangles). With ``h = 0`` each
    block is exactly the five-point Dirichlet Laplacian.
``"corrected"``
    The same triangles with stencils exact on quadratic polynomials, plus a
    small third-difference stabilization per cell that suppresses the
    checkerboard mode of the wider stencils. Candidate zero modes of degree
    ``k`` behave like ``zbar**k``, and the P1 gradient error on them grows
    with ``k``; the corrected scheme keeps their energy at roundoff level up
    to the degrees needed for fluxes of a few units.

A vector potential enters through link phases: the entry coupling a row with
base node ``p`` to node ``v`` is multiplied by ``exp(-i * theta_pv)``,
``theta_pv`` the line integral of ``A`` from ``p`` to ``v``. This is the
covariant derivative of ``(-i grad - A)``, and for ``A = grad(lam)`` the
substitution ``psi -> exp(i lam) psi`` leaves every form value unchanged
exactly.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .grid import Grid

logger = logging.getLogger(__name__)

SPINS = ("up", "down")
SCHEMES = ("corrected", "p1")
STABILIZATION = 0.3


class SpectrumError(RuntimeError):
    """Eigen-solver failure (non-convergence or residual above tolerance)."""


def free_dirichlet_eigenvalue(n: int, spacing: float) -> float:
    """Lowest eigenvalue of the five-point Dirichlet Laplacian on ``n x n`` nodes."""
    return 2.0 * (2.0 - 2.0 * math.cos(math.pi / (n + 1))) / spacing**2


# ---------------------------------------------------------------- stencils

def _triangle_stencils(kind, corrected):
    """Stencils of ``a*d1`` and ``a*d2`` for one triangle family.

    ``kind`` 0 is the lower triangle with base at the cell's lower-left
    node, ``kind`` 1 the upper triangle with base at the upper-right node.
    Returns ``(base_offset, centroid_offset, d1, d2, d1_fallback, d2_fallback)``
    with offsets in units of ``a`` relative to the cell's lower-left node.
    """
    s = 1 if kind == 0 else -1
    base = (0, 0) if kind == 0 else (1, 1)
    centroid = (1 / 3, 1 / 3) if kind == 0 else (2 / 3, 2 / 3)
    f1 = {(0, 0): -s, (s, 0): s}
    f2 = {(0, 0): -s, (0, s): s}
    d1, d2 = dict(f1), dict(f2)
    if corrected:
        # remove the O(a) error on quadratics: a*d1 (forward) = a*u_x + a^2/2 u_xx + ...,
        # restore the centroid value with the centred u_xx and the cell's u_xy
        c11 = {(-1, 0): 1, (0, 0): -2, (1, 0): 1}
        c22 = {(0, -1): 1, (0, 0): -2, (0, 1): 1}
        o = 0 if kind == 0 else -1
        c12 = {(o + 1, o + 1): 1, (o + 1, o): -1, (o, o + 1): -1, (o, o): 1}
        for k, v in c11.items():
            d1[k] = d1.get(k, 0) - s * v / 6
        for k, v in c22.items():
            d2[k] = d2.get(k, 0) - s * v / 6
        for k, v in c12.items():
            d1[k] = d1.get(k, 0) + s * v / 3
            d2[k] = d2.get(k, 0) + s * v / 3
    return base, centroid, d1, d2, f1, f2


_STAB_X = {(-1, 0): -1, (0, 0): 3, (1, 0): -3, (2, 0): 1}
_STAB_Y = {(0, -1): -1, (0, 0): 3, (0, 1): -3, (0, 2): 1}


# ---------------------------------------------------------------- link phases

_GL3 = np.polynomial.legendre.leggauss(3)


def _segment_integral(A, x0, y0, x1, y1):
    t, w = _GL3
    s = 0.5 * (t + 1.0)
    dx, dy = x1 - x0, y1 - y0
    total = np.zeros(np.broadcast(x0, x1).shape)
    for sk, wk in zip(s, w):
        a1, a2 = A(x0 + sk * dx, y0 + sk * dy)
        total += 0.5 * wk * (a1 * dx + a2 * dy)
    return total


def vector_potential_from_nodes(grid: Grid, A1, A2) -> Callable:
    """Interpolating callable for ``A`` given at the interior nodes of ``grid``."""
    opts = dict(bounds_error=False, fill_value=None)
    i1 = RegularGridInterpolator((grid.x, grid.y), np.asarray(A1, dtype=float), **opts)
    i2 = RegularGridInterpolator((grid.x, grid.y), np.asarray(A2, dtype=float), **opts)

    def A(x, y):
        P = np.stack(np.broadcast_arrays(x, y), axis=-1)
        return i1(P), i2(P)

    return A


# ---------------------------------------------------------------- operator

@dataclass(frozen=True)
class GridOperator:
    """Assembled spin blocks ``H`` of the discrete form (value ``a**2 psi^H H psi``)."""

    grid: Grid
    scheme: str
    bc: str
    blocks: Dict[str, sp.csc_matrix] = field(repr=False)
    has_vector_potential: bool = False

    @property
    def spacing(self):
        return self.grid.spacing[0]

    @property
    def size(self):
        return self.grid.nx * self.grid.ny

    def form_value(self, psi_up=None, psi_down=None) -> float:
        """``pi(psi)`` for nodal spinor components (missing components count as 0)."""
        total = 0.0
        for spin, psi in (("up", psi_up), ("down", psi_down)):
            if psi is None:
                continue
            v = np.asarray(psi, dtype=complex).ravel()
            total += float(np.real(np.vdot(v, self.blocks[spin] @ v)))
        return self.spacing**2 * total

    def norm2(self, psi) -> float:
        v = np.asarray(psi, dtype=complex).ravel()
        return self.spacing**2 * float(np.real(np.vdot(v, v)))

    def rayleigh_quotient(self, psi, spin="down") -> float:
        v = np.asarray(psi, dtype=complex).ravel()
        return float(np.real(np.vdot(v, self.blocks[spin] @ v)) / np.real(np.vdot(v, v)))


def _closed_box_coords(grid):
    n = grid.nx
    a = grid.spacing[0]
    return -grid.extent + a * np.arange(n + 2)


def _node_h(pf, grid, sampler):
    """``h`` on the closed box nodes; interior values come from ``pf.h``."""
    n = grid.nx
    xs = _closed_box_coords(grid)
    H = np.zeros((n + 2, n + 2))
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    ring = np.ones((n + 2, n + 2), bool)
    ring[1:-1, 1:-1] = False
    H[ring] = sampler(np.column_stack([X[ring], Y[ring]]))
    H[1:-1, 1:-1] = pf.h
    return H


def _sampler(pf):
    if pf.evaluator is not None:
        return pf.evaluate
    interp = RegularGridInterpolator((pf.grid.x, pf.grid.y), pf.h, bounds_error=False, fill_value=None)
    return lambda P: interp(P)


def assemble_form(pf, bc: str = "dirichlet", vector_potential=None, gauge=None,
                  scheme: str = "corrected", spins=SPINS, tau: float = STABILIZATION) -> GridOperator:
    """Assemble the discrete Pauli form of a :class:`PotentialField`.

    Parameters
    ----------
    pf : PotentialField
        Supplies ``h`` on the nodes, and off the nodes through its evaluator
        (linear interpolation of the nodal values when it has none).
    bc : {"dirichlet"}
    vector_potential : callable, optional
        ``A(x, y) -> (A1, A2)``; link phases use 3-point Gauss on segments.
    gauge : callable, optional
        ``lam(x, y)``; adds the pure-gauge potential ``grad(lam)`` with exact
        link phases ``lam(v) - lam(p)``. May be combined with ``vector_potential``.
    scheme : {"corrected", "p1"}
    spins : iterable of {"up", "down"}
    """
    if bc != "dirichlet":
        raise ValueError(f"only the 'dirichlet' boundary condition is implemented, got {bc!r}")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    grid = pf.grid
    if grid.nx != grid.ny:
        raise ValueError("spectral assembly needs a square grid (nx == ny)")
    n, a = grid.nx, grid.spacing[0]
    corrected = scheme == "corrected"
    sample = _sampler(pf)
    hn = _node_h(pf, grid, sample)
    if not np.all(np.isfinite(hn)):
        raise ValueError("h is not finite on every node of the closed box")
    xs = _closed_box_coords(grid)
    idx = -np.ones((n + 2, n + 2), dtype=np.int64)
    idx[1:-1, 1:-1] = np.arange(n * n).reshape(n, n)
    I, J = (g.ravel() for g in np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij"))

    def links(pi, pj, vi, vj):
        theta = 0.0
        px, py, vx, vy = xs[pi], xs[pj], xs[vi], xs[vj]
        if vector_potential is not None:
            theta = theta + _segment_integral(vector_potential, px, py, vx, vy)
        if gauge is not None:
            theta = theta + (np.asarray(gauge(vx, vy)) - np.asarray(gauge(px, py)))
        return np.exp(-1j * theta)

    def valid(pi, pj, offsets):
        ok = np.ones(pi.shape, bool)
        for di, dj in offsets:
            ok &= (pi + di >= 0) & (pi + di <= n + 1) & (pj + dj >= 0) & (pj + dj <= n + 1)
        return ok

    families = []
    for kind in (0, 1):
        base, cen, d1, d2, f1, f2 = _triangle_stencils(kind, corrected)
        pi, pj = I + base[0], J + base[1]
        hT = sample(np.column_stack([xs[I] + cen[0] * a, xs[J] + cen[1] * a]))
        ok = valid(pi, pj, set(d1) | set(d2)) if corrected else np.ones(pi.shape, bool)
        coeffs = {}
        for k in set(d1) | set(d2) | set(f1) | set(f2):
            c1 = np.where(ok, d1.get(k, 0), f1.get(k, 0)).astype(float)
            c2 = np.where(ok, d2.get(k, 0), f2.get(k, 0)).astype(float)
            coeffs[k] = (c1, c2)
        families.append((pi, pj, hT, coeffs, 1.0))
    if corrected and tau > 0:
        hT = sample(np.column_stack([xs[I] + 0.5 * a, xs[J] + 0.5 * a]))
        for st in (_STAB_X, _STAB_Y):
            ok = valid(I, J, st)
            coeffs = {k: (np.where(ok, v, 0.0), None) for k, v in st.items()}
            families.append((I, J, hT, coeffs, math.sqrt(2.0) * tau / 2.0))

    blocks = {}
    for spin in spins:
        if spin not in SPINS:
            raise ValueError(f"unknown spin {spin!r}")
        sgn = 1.0 if spin == "up" else -1.0
        rows, cols, vals = [], [], []
        offset = 0
        for pi, pj, hT, coeffs, scale in families:
            r = offset + np.arange(pi.size)
            for (di, dj), (c1, c2) in coeffs.items():
                vi, vj = pi + di, pj + dj
                inside = (vi >= 0) & (vi <= n + 1) & (vj >= 0) & (vj <= n + 1)
                vic, vjc = np.clip(vi, 0, n + 1), np.clip(vj, 0, n + 1)
                col = np.where(inside, idx[vic, vjc], -1)
                if c2 is None:
                    coef = c1 * scale
                else:
                    coef = 0.5 * (c1 + sgn * 1j * c2) * scale
                w = np.exp(sgn * (hT - hn[vic, vjc]))
                val = coef * w / a
                if vector_potential is not None or gauge is not None:
                    val = val * links(pi, pj, vic, vjc)
                m = (col >= 0) & (coef != 0)
                rows.append(r[m])
                cols.append(col[m])
                vals.append(val[m])
            offset += pi.size
        D = sp.csr_matrix((np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(offset, n * n))
        blocks[spin] = (2.0 * (D.conj().T @ D)).tocsc()
    return GridOperator(grid, scheme, bc, blocks, vector_potential is not None or gauge is not None)


# ---------------------------------------------------------------- eigen-solver

@dataclass(frozen=True)
class EigenResult:
    """Low eigenpairs of the spinor operator, blocks merged in ascending order."""

    eigenvalues: np.ndarray
    vectors: np.ndarray  # shape (2 * N, k): rows [psi_up; psi_down]
    spins: np.ndarray  # block of origin per eigenpair
    residuals: np.ndarray
    per_block: dict = field(repr=False, default_factory=dict)
    elapsed: float = 0.0


def _block_eigs(H, k, tol, maxiter):
    lu = spla.splu(H, permc_spec="MMD_AT_PLUS_A")
    op = spla.LinearOperator(H.shape, matvec=lu.solve, dtype=complex)
    # fixed start vector so repeated runs are byte-identical
    v0 = np.random.default_rng(0).standard_normal(H.shape[0]).astype(complex)
    try:
        w, V = spla.eigsh(H, k=k, sigma=0.0, OPinv=op, which="LM", tol=0.0, maxiter=maxiter, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise SpectrumError(
            f"ARPACK did not converge: {len(exc.eigenvalues)} of {k} eigenpairs after maxiter={maxiter}"
        ) from exc
    order = np.argsort(w.real)
    w, V = w.real[order], V[:, order]
    res = np.linalg.norm(H @ V - V * w, axis=0) / np.linalg.norm(V, axis=0)
    if np.any(res > tol):
        raise SpectrumError(f"eigen residual {res.max():.3g} exceeds tolerance {tol:g}")
    return w, V, res


def lowest_eigenvalues(op: GridOperator, k: int = 8, spins=None, tol: float = 1e-8,
                       maxiter: Optional[int] = None) -> EigenResult:
    """The ``k`` smallest eigenvalues of the spinor operator.

    Each block is solved by shift-invert Lanczos at 0 with a sparse LU
    factorization; the results are merged and the ``k`` smallest kept.
    Eigenvectors are unit vectors in the nodal Euclidean norm, embedded in
    the two-component spinor.

    Raises
    ------
    SpectrumError
        On non-convergence, or when ``||H v - lam v|| > tol ||v||``.
    """
    if k < 1 or k >= op.size - 1:
        raise ValueError(f"k must satisfy 1 <= k < {op.size - 1}, got {k}")
    spins = tuple(spins) if spins is not None else tuple(s for s in SPINS if s in op.blocks)
    t0 = time.perf_counter()
    N = op.size
    vals, vecs, orig, res, per_block = [], [], [], [], {}
    for spin in spins:
        w, V, r = _block_eigs(op.blocks[spin], k, tol, maxiter)
        per_block[spin] = w
        logger.info("%s block: %s (%.1f s)", spin, np.array2string(w[:4], precision=3), time.perf_counter() - t0)
        full = np.zeros((2 * N, k), dtype=complex)
        if spin == "up":
            full[:N] = V
        else:
            full[N:] = V
        vals.append(w)
        vecs.append(full)
        orig += [spin] * k
        res.append(r)
    vals, vecs, res = np.concatenate(vals), np.concatenate(vecs, axis=1), np.concatenate(res)
    order = np.argsort(vals, kind="stable")[:k]
    return EigenResult(vals[order], vecs[:, order], np.array(orig)[order], res[order], per_block,
                       time.perf_counter() - t0)


# ---------------------------------------------------------------- counting

@dataclass(frozen=True)
class KernelReport:
    eigenvalues: np.ndarray
    tol: float
    dimension: int
    gap_ratio: float
    verdict: str  # "confident" | "inconclusive"
    polarization: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spins: Optional[np.ndarray] = None

    @property
    def confident(self):
        return self.verdict == "confident"


def kernel_dimension(eigenvalues, gap_factor: float = 10.0, reference: Optional[float] = None,
                     floor: Optional[float] = None, vectors=None, sign: int = 1, spins=None) -> KernelReport:
    """Count near-zero eigenvalues by a relative-gap rule.

    The dimension is the largest ``d`` with
    ``lam[d] / max(lam[d-1], floor) >= gap_factor`` (1-based ``lam``), since
    the kernel upper edge is the last large jump before the quasi-continuous
    bulk; jumps inside the kernel cluster are allowed. With no such jump the
    dimension is 0, reported "confident" only when ``lam[0]`` is within
    ``gap_factor`` of a ``reference`` bulk scale (e.g. the free Dirichlet
    eigenvalue), otherwise "inconclusive".

    Parameters
    ----------
    eigenvalues : array_like
        Ascending; at least ``expected + 2`` values.
    vectors : ndarray, optional
        Spinor eigenvectors (rows ``[psi_up; psi_down]``) for the polarization column.
    sign : {1, -1}
        Flux sign; decides which component is the "wrong" one.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or lam.size < 2:
        raise ValueError("need at least two eigenvalues")
    if np.any(np.diff(lam) < -1e-12 * np.abs(lam).max()):
        raise ValueError("eigenvalues must be ascending")
    lam = np.maximum(lam, 0.0)
    if floor is None:
        floor = max(1e-14 * lam[-1], np.finfo(float).tiny)
    ratios = lam[1:] / np.maximum(lam[:-1], floor)
    big = np.nonzero(ratios >= gap_factor)[0]
    if big.size:
        d = int(big[-1]) + 1
        gap = float(ratios[d - 1])
        tol = math.sqrt(max(lam[d - 1], floor) * lam[d])
        verdict = "confident"
    else:
        d = 0
        gap = float(lam[0] / reference * gap_factor) if reference else float("nan")
        tol = float(reference / gap_factor) if reference else 0.0
        verdict = "confident" if reference is not None and lam[0] >= reference / gap_factor else "inconclusive"
    pol = np.zeros(0)
    if vectors is not None and d:
        pol = spin_polarization(np.asarray(vectors)[:, :d], sign=sign)
    return KernelReport(lam, tol, d, gap, verdict, pol, None if spins is None else np.asarray(spins)[:d])


def spin_polarization(vectors, sign: int = 1) -> np.ndarray:
    """Per column, the fraction of ``|psi|^2`` in the component that should vanish.

    For ``sign = +1`` (positive flux) this is ``|psi_up|^2 / |psi|^2``;
    for ``sign = -1`` the roles of the components are swapped.
    """
    V = np.asarray(vectors)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] % 2:
        raise ValueError("spinor vectors need an even number of rows [psi_up; psi_down]")
    N = V.shape[0] // 2
    up = np.sum(np.abs(V[:N]) ** 2, axis=0)
    down = np.sum(np.abs(V[N:]) ** 2, axis=0)
    wrong = up if sign >= 0 else down
    return wrong / (up + down)
