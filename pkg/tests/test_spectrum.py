import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pauli_lab.fields import bump_field
from pauli_lab.grid import Grid
from pauli_lab.potential import PotentialField, build_potential
from pauli_lab.spectrum import (
    SpectrumError,
    assemble_form,
    free_dirichlet_eigenvalue,
    kernel_dimension,
    lowest_eigenvalues,
    spin_polarization,
    vector_potential_from_nodes,
)


def free_pf(n, extent=1.0):
    g = Grid(n, n, extent)
    return PotentialField.from_function(g, lambda x, y: 0 * x, 0.0)


def dirichlet_oracle(n, a, m):
    """Sorted eigenvalues of the 5-point Dirichlet Laplacian from the 1D spectra."""
    q = 2 - 2 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1))
    return np.sort((q[:, None] + q[None, :]).ravel())[:m] / a**2


@pytest.fixture(scope="module")
def bump_pf():
    g = Grid(48, 48, 8.0)
    return build_potential(bump_field(2.5), 0.05, g)


@pytest.fixture(scope="module")
def bump_op(bump_pf):
    return assemble_form(bump_pf)


# ---------------------------------------------------------------- free case

@pytest.mark.parametrize("n", [16, 32])
def test_p1_free_spectrum_is_dirichlet_laplacian(n):
    pf = free_pf(n)
    res = lowest_eigenvalues(assemble_form(pf, scheme="p1"), 4, spins=["down"])
    a = pf.grid.spacing[0]
    assert res.eigenvalues[0] == pytest.approx(free_dirichlet_eigenvalue(n, a), rel=1e-10)
    np.testing.assert_allclose(res.eigenvalues, dirichlet_oracle(n, a, 4), rtol=1e-9)


def test_p1_free_blocks_equal():
    op = assemble_form(free_pf(12), scheme="p1")
    assert abs(op.blocks["up"] - op.blocks["down"]).max() < 1e-12


def test_corrected_free_spectrum_close():
    pf = free_pf(32)
    lam = lowest_eigenvalues(assemble_form(pf), 2, spins=["down"]).eigenvalues[0]
    assert lam == pytest.approx(free_dirichlet_eigenvalue(32, pf.grid.spacing[0]), rel=1e-2)


def test_free_corrected_converges():
    errs = []
    for n in (16, 32):
        pf = free_pf(n)
        lam = lowest_eigenvalues(assemble_form(pf), 2, spins=["down"]).eigenvalues[0]
        errs.append(abs(lam - free_dirichlet_eigenvalue(n, pf.grid.spacing[0])))
    assert errs[1] < errs[0]


# ---------------------------------------------------------------- form structure

@pytest.mark.parametrize("scheme", ["corrected", "p1"])
def test_blocks_hermitian(bump_pf, scheme):
    op = assemble_form(bump_pf, scheme=scheme)
    for H in op.blocks.values():
        assert abs(H - H.conj().T).max() <= 1e-12 * abs(H).max()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_form_nonnegative_random(bump_op, seed):
    rng = np.random.default_rng(seed)
    n = bump_op.size
    up = rng.normal(size=n) + 1j * rng.normal(size=n)
    down = rng.normal(size=n) + 1j * rng.normal(size=n)
    v = bump_op.form_value(up, down)
    assert v >= -1e-12 * (bump_op.norm2(up) + bump_op.norm2(down))


def test_bad_arguments(bump_pf):
    with pytest.raises(ValueError):
        assemble_form(bump_pf, bc="neumann")
    with pytest.raises(ValueError):
        assemble_form(bump_pf, scheme="fd")
    with pytest.raises(ValueError):
        lowest_eigenvalues(assemble_form(free_pf(6)), 40)


def test_solver_error_reported():
    op = assemble_form(free_pf(24))
    with pytest.raises(SpectrumError):
        lowest_eigenvalues(op, 6, maxiter=1)


# ---------------------------------------------------------------- gauge

def harmonic_phase(alpha, beta):
    """Im(alpha z + beta z^2): the conjugate of Re(alpha z + beta z^2)."""
    return lambda x, y: np.imag(alpha * (x + 1j * y) + beta * (x + 1j * y) ** 2)


@pytest.mark.parametrize("alpha,beta", [(0.3 - 0.2j, 0), (0.1j, 0.05 + 0.02j)])
def test_gauge_form_identity(bump_pf, bump_op, alpha, beta):
    lam = harmonic_phase(alpha, beta)
    op_g = assemble_form(bump_pf, gauge=lam)
    g = bump_pf.grid
    X, Y = g.mesh()
    phase = np.exp(1j * lam(X, Y)).ravel()
    rng = np.random.default_rng(5)
    for _ in range(3):
        up = rng.normal(size=bump_op.size) + 1j * rng.normal(size=bump_op.size)
        down = rng.normal(size=bump_op.size) + 1j * rng.normal(size=bump_op.size)
        ref = bump_op.form_value(up, down)
        assert op_g.form_value(phase * up, phase * down) == pytest.approx(ref, rel=1e-10)


def test_gauge_spectrum_and_count(bump_pf, bump_op):
    lam = harmonic_phase(0.4 + 0.1j, 0.03j)
    ref = free_dirichlet_eigenvalue(bump_pf.grid.nx, bump_pf.grid.spacing[0])
    a = lowest_eigenvalues(bump_op, 5, spins=["down"])
    b = lowest_eigenvalues(assemble_form(bump_pf, gauge=lam), 5, spins=["down"])
    np.testing.assert_allclose(b.eigenvalues, a.eigenvalues, rtol=1e-8, atol=1e-14)
    assert (kernel_dimension(a.eigenvalues, reference=ref).dimension
            == kernel_dimension(b.eigenvalues, reference=ref).dimension == 2)


def test_pure_gradient_vector_potential_matches_gauge(bump_pf):
    # A = grad(lam) sampled at nodes, integrated on links: same spectrum up to quadrature error
    g = bump_pf.grid
    X, Y = g.mesh()
    lam = lambda x, y: 0.2 * x * y
    A = vector_potential_from_nodes(g, 0.2 * Y, 0.2 * X)
    a = lowest_eigenvalues(assemble_form(bump_pf, gauge=lam), 3, spins=["down"]).eigenvalues
    b = lowest_eigenvalues(assemble_form(bump_pf, vector_potential=A), 3, spins=["down"]).eigenvalues
    np.testing.assert_allclose(b, a, rtol=1e-6, atol=1e-10)


def test_literal_harmonic_shift_converges():
    # h + Re(alpha z) resampled on the grid: the continuum identity is recovered under refinement
    errs = []
    for n in (32, 64):
        g = Grid(n, n, 8.0)
        pf = build_potential(bump_field(2.5), 0.05, g)
        shifted = PotentialField.from_function(
            g, lambda x, y: pf.evaluate(np.column_stack([x.ravel(), y.ravel()])).reshape(np.shape(x)) + 0.3 * x,
            pf.flux)
        a = lowest_eigenvalues(assemble_form(pf), 4, spins=["down"]).eigenvalues
        b = lowest_eigenvalues(assemble_form(shifted), 4, spins=["down"]).eigenvalues
        assert b[1] / b[2] < 0.1
        errs.append(abs(b[2] / a[2] - 1))
    assert errs[1] < errs[0] / 4


# ---------------------------------------------------------------- symmetry and polarization

def test_conjugation_symmetry():
    g = Grid(32, 32, 6.0)
    pos = assemble_form(build_potential(bump_field(1.5), 0.05, g))
    neg = assemble_form(build_potential(bump_field(-1.5), 0.05, g))
    assert abs(neg.blocks["up"] - pos.blocks["down"].conj()).max() <= 1e-10 * abs(pos.blocks["down"]).max()
    a = lowest_eigenvalues(pos, 4, spins=["down"]).eigenvalues
    b = lowest_eigenvalues(neg, 4, spins=["up"]).eigenvalues
    np.testing.assert_allclose(b, a, rtol=1e-8, atol=1e-14)


def test_spin_up_has_no_near_zero(bump_pf, bump_op):
    ref = free_dirichlet_eigenvalue(bump_pf.grid.nx, bump_pf.grid.spacing[0])
    up = lowest_eigenvalues(bump_op, 3, spins=["up"]).eigenvalues
    assert up[0] > ref / 10


def test_bump_kernel_polarized(bump_pf, bump_op):
    res = lowest_eigenvalues(bump_op, 6)
    ref = free_dirichlet_eigenvalue(bump_pf.grid.nx, bump_pf.grid.spacing[0])
    rep = kernel_dimension(res.eigenvalues, vectors=res.vectors, reference=ref)
    assert rep.dimension == 2 and rep.confident
    assert np.all(rep.polarization < 1e-3)
    assert np.all(res.residuals <= 1e-8)


def test_polarization_exact_vectors():
    N = 10
    down = np.zeros((2 * N, 2), complex)
    down[N:, 0] = 1.0
    down[N + 3, 1] = 1j
    np.testing.assert_array_equal(spin_polarization(down, 1), [0, 0])
    np.testing.assert_array_equal(spin_polarization(down, -1), [1, 1])
    mixed = np.ones(2 * N)
    assert spin_polarization(mixed)[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        spin_polarization(np.ones(5))


# ---------------------------------------------------------------- kernel counting

def test_gap_rule_confident():
    rep = kernel_dimension([1e-9, 2e-9, 0.3, 0.5])
    assert rep.dimension == 2 and rep.confident
    assert rep.gap_ratio == pytest.approx(0.3 / 2e-9)
    assert 2e-9 < rep.tol < 0.3


def test_gap_rule_no_cluster():
    rep = kernel_dimension([0.1, 0.12, 0.13])
    assert rep.dimension == 0 and rep.verdict == "inconclusive"
    assert kernel_dimension([0.1, 0.12, 0.13], reference=0.2).confident


def test_gap_rule_last_jump():
    # a spread kernel cluster: the upper edge is the last big jump
    rep = kernel_dimension([1e-12, 1e-8, 1e-7, 0.2, 0.3])
    assert rep.dimension == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=10), st.floats(2.0, 100.0))
def test_gap_rule_consistent(vals, factor):
    lam = np.sort(vals)
    rep = kernel_dimension(lam, gap_factor=factor)
    d = rep.dimension
    ratios = lam[1:] / lam[:-1]
    if d:
        assert ratios[d - 1] >= factor
        assert np.all(ratios[d:] < factor)
    else:
        assert np.all(ratios < factor)
    assert np.all(np.diff(rep.eigenvalues) >= 0)


def test_gap_rule_errors():
    with pytest.raises(ValueError):
        kernel_dimension([1.0])
    with pytest.raises(ValueError):
        kernel_dimension([1.0, 0.5])


# ---------------------------------------------------------------- form core

def test_cutoff_core_vectors_decrease():
    g = Grid(96, 96, 12.0)
    pf = build_potential(bump_field(2.5), 0.05, g)
    op = assemble_form(pf, spins=["down"])
    X, Y = g.mesh()
    r = np.hypot(X, Y)
    q = []
    for R in (1.0, 2.0, 4.0):
        chi = np.clip(2.0 - r / R, 0.0, 1.0)
        q.append(op.rayleigh_quotient(np.exp(-pf.h) * chi, "down"))
    assert q[0] > q[1] > q[2]
    assert q[2] < 0.05 * q[0]
