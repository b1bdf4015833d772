import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from pauli_lab.counterexample import (
    BandField,
    _shell_rule,
    arc_fraction,
    build_band_field,
    divergence_scan,
    h_explicit,
    isolated_bump_shell,
    lens_fraction,
    lower_bound_term,
    no_zero_mode_probe,
    predicted_ratio,
    shell_integrals,
)


@pytest.fixture(scope="module")
def band4():
    return build_band_field(0.05, 0.1, 4)


@pytest.fixture(scope="module")
def scan4(band4):
    return divergence_scan(band4)


@pytest.fixture(scope="module")
def probe4(band4, scan4):
    return no_zero_mode_probe(band4, scan=scan4)


# ---------------------------------------------------------------- geometry

def test_band_one_bump_count():
    b = build_band_field(0.05, 0.1, 1)
    assert b.N(1) == 10
    np.testing.assert_array_equal(b.rings(1), [5, 6])
    assert b.bump_count() == 20
    assert b.centers(1).shape == (2, 10)
    np.testing.assert_allclose(np.abs(b.centers(1)), [[5] * 10, [6] * 10])


def test_rings_and_counts(band4):
    assert [b["rings"] for b in band4.describe()["bands"]] == [[5, 6], [17, 20], [65, 72], [257, 272]]
    assert band4.bump_count() == 10 * 2 + 20 * 4 + 30 * 8 + 40 * 16


@pytest.mark.parametrize("kw", [
    dict(delta=0.1), dict(delta=0.0), dict(eps=0.25), dict(eps=0.0),
    dict(K_max=0), dict(K_max=7), dict(K_max=2.5), dict(mollify=0.05), dict(mollify=-0.01),
])
def test_parameter_errors(kw):
    with pytest.raises(ValueError):
        build_band_field(**{**dict(delta=0.05, eps=0.1, K_max=2), **kw})


def lens_oracle(r, n, s):
    """Area of disk(0, r) inside disk((n, 0), s) over pi s^2, by chord-length quadrature."""
    g = lambda x: 2 * max(0.0, min(math.sqrt(max(s * s - (x - n) ** 2, 0)), math.sqrt(max(r * r - x * x, 0))))
    x_cross = (r * r - s * s + n * n) / (2 * n)
    pts = [p for p in (x_cross, r) if n - s < p < n + s]
    return integrate.quad(g, n - s, n + s, points=pts, limit=400, epsabs=1e-15, epsrel=1e-12)[0] / (math.pi * s * s)


@pytest.mark.parametrize("r", [4.96, 4.99, 5.0, 5.02, 5.049])
def test_lens_fraction(r):
    assert float(lens_fraction(r, 5.0, 0.05)) == pytest.approx(lens_oracle(r, 5.0, 0.05), abs=1e-9)


def test_lens_limits():
    np.testing.assert_array_equal(lens_fraction(np.array([1.0, 4.9, 5.1, 9.0]), 5.0, 0.05), [0, 0, 1, 1])


@settings(max_examples=30, deadline=None)
@given(st.floats(4.951, 5.049))
def test_arc_fraction_bruteforce(t):
    th = np.linspace(-math.pi, math.pi, 400001)
    inside = np.abs(t * np.exp(1j * th) - 5.0) < 0.05
    assert float(arc_fraction(t, 5.0, 0.05)) == pytest.approx(inside.mean(), abs=2e-5)


# ---------------------------------------------------------------- flux and variation

@pytest.mark.parametrize("r", [0.5, 3.0, 5.0, 5.03, 10.0, 18.0, 40.0, 300.0])
def test_flux_is_improper_one_plus_eps(band4, r):
    assert float(band4.flux(np.array([r]))[0]) == pytest.approx(1.1, abs=1e-9)


def test_flux_inside_core():
    b = build_band_field(0.05, 0.1, 1)
    assert float(b.flux(np.array([0.025]))[0]) == pytest.approx(1.1 / 4, rel=1e-12)


def test_total_variation_grows(band4):
    tv = [band4.total_variation(k) for k in band4.bands]
    for k, v in zip(band4.bands, tv):
        bumps = 2 * math.pi * band4.N(k) * 2**k
        assert bumps <= v <= 2 * bumps
    assert np.all(np.diff(tv) > 0)
    assert band4.total_variation() == pytest.approx(sum(tv), rel=1e-12)
    assert tv[0] == pytest.approx(245.10, abs=0.01)


# ---------------------------------------------------------------- potentials

def test_h0_outer_log(band4):
    r = np.array([0.05, 1.0, 7.0])
    np.testing.assert_allclose(band4.h0(r), 1.1 * np.log(r), rtol=1e-14)


def test_hhat_vanishes_inside(band4):
    for k in band4.bands:
        for n in band4.rings(k):
            r = np.array([0.1, n / 2, n - 0.05 - 1e-12])
            np.testing.assert_array_equal(band4.hhat(k, n, r), 0.0)


def test_hhat_outer_constant(band4):
    # beyond the ring hhat = N log(r/n) + const: the increment is N log(r2/r1)
    k, n = 2, 17
    r1, r2 = 17.5, 30.0
    d = band4.hhat(k, n, np.array([r2]))[0] - band4.hhat(k, n, np.array([r1]))[0]
    assert d == pytest.approx(band4.N(k) * math.log(r2 / r1), rel=1e-9)


def test_htilde_matches_closed_form_off_disks(band4):
    k, n, N = 2, 18, 20
    th = np.linspace(0.01, 2 * math.pi, 50) + math.pi / N  # between bumps
    for r in (10.0, 17.96, 18.0, 18.04, 25.0):
        z = r * np.exp(1j * th)
        want = np.log(np.abs(1 - (z / n) ** N))
        np.testing.assert_allclose(band4.htilde(k, n, z), want, atol=1e-10)


def test_htilde_continuous_across_disk_edge(band4):
    c = band4.centers(1)[0, 3]
    u = np.exp(0.7j)
    inner = band4.htilde(1, 5, np.array([c + (0.05 - 1e-9) * u]))
    outer = band4.htilde(1, 5, np.array([c + (0.05 + 1e-9) * u]))
    assert inner[0] == pytest.approx(outer[0], abs=1e-6)
    assert np.isfinite(band4.htilde(1, 5, np.array([c]))[0])


def test_h_explicit_agrees(band4):
    P = np.array([[1.0, 2.0], [40.0, -3.0], [5.0, 0.0]])
    np.testing.assert_allclose(h_explicit(P, band4), band4.h_complex(P[:, 0] + 1j * P[:, 1]), rtol=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_h_is_h0_plus_bounded_on_annuli(band4, k):
    R = 3 * 4**k
    z = R * np.exp(1j * np.linspace(0, 2 * math.pi, 1000, endpoint=False))
    d = band4.h_complex(z) - band4.h0(np.abs(z))
    assert np.abs(d).max() < 0.01


def test_far_field(band4):
    for R in (10 * 4**4, 10 * 4**5):
        z = R * np.exp(1j * np.linspace(0, 2 * math.pi, 300))
        np.testing.assert_allclose(band4.h_complex(z), 1.1 * math.log(R), atol=1e-5)


def test_adding_a_band_changes_little_inside(band4):
    z = np.array([100 + 1j, 150j, -190 + 3j, 7.0 + 0.3j])
    d = band4.h_complex(z, bands=[1, 2, 3]) - band4.h_complex(z)
    assert np.abs(d).max() < 1e-3


@pytest.mark.parametrize("k", [1, 2, 3])
def test_single_ring_near_bump(band4, k):
    # htilde_{k,m} is exactly log|1 - (x/m)^N| on the shell; hhat_{k,m} is the O(1) remainder
    off, _ = _shell_rule(band4.delta, 6, 32)
    m = int(band4.rings(k)[0])
    N = band4.N(k)
    z = m + off
    np.testing.assert_allclose(band4.htilde(k, m, z), np.log(np.abs(1 - (z / m) ** N)), atol=1e-10)
    hh = band4.hhat(k, m, np.abs(z))
    assert np.all(hh >= 0) and hh.max() <= N * 3 * band4.delta / (m - band4.delta)


def test_other_rings_lower_h_near_bump(band4):
    # the remaining rings of the band only push h down on the shell
    off, _ = _shell_rule(band4.delta, 6, 32)
    for k in (1, 2, 3):
        m = int(band4.rings(k)[0])
        z = m + off
        d = band4.h_band(k, z) - np.log(np.abs(1 - (z / m) ** band4.N(k)))
        assert d.max() < 0


# ---------------------------------------------------------------- divergence scan

def test_scan_strictly_increasing(scan4):
    assert scan4.increasing
    np.testing.assert_allclose(scan4.t, [0.966119, 2.530119, 707.644, 1.47608e11], rtol=1e-4)
    assert all(b.flagged == 0 for b in scan4.terms)


def test_predicted_ratio_values():
    assert predicted_ratio(1, 0.1) == pytest.approx(2**0.6 / 2)
    np.testing.assert_allclose([predicted_ratio(k, 0.1) for k in (1, 2, 3)], [0.757858, 1.010478, 1.136787], rtol=1e-6)
    assert predicted_ratio(10**6, 0.1) == pytest.approx(2**0.6, rel=1e-5)


def test_lower_bound_ratios_match_prediction(scan4):
    np.testing.assert_allclose(scan4.lower_bound_ratios, scan4.predicted, rtol=0.05)


def test_actual_terms_dominate_lower_bound(scan4):
    assert np.all(scan4.t > scan4.lower_bounds)


def test_near_quarter_eps_still_monotone():
    s = divergence_scan(build_band_field(0.05, 0.24, 3))
    assert s.increasing
    assert np.all(np.array(s.predicted[1:]) < 1.04)


def test_isolated_oracle_vs_exact_integrand(band4):
    # linearized one-bump integral against the exact one-bump integrand
    off, W = _shell_rule(band4.delta, 24, 256)
    for k in (1, 2):
        N = band4.N(k)
        for m in band4.rings(k)[:2].astype(float):
            exact = m ** (-2 * (1 + band4.eps)) * float(np.abs(1 - (1 + off / m) ** N) ** -2 @ W)
            assert exact == pytest.approx(isolated_bump_shell(m, N, band4.eps, band4.delta), rel=0.01)


def test_single_shell_against_isolated(band4):
    vals, flagged = shell_integrals(band4, 1)
    assert flagged == 0
    for i, m in enumerate(band4.rings(1)):
        r = vals[i] / isolated_bump_shell(m, 10, band4.eps, band4.delta)
        assert np.all((1.0 <= r) & (r <= 2.0))


def test_shell_rotational_symmetry(band4):
    # bumps of a ring are rotations of each other; the spread is the angular quadrature error
    vals, _ = shell_integrals(band4, 2)
    np.testing.assert_allclose(vals, vals[:, :1] * np.ones_like(vals), rtol=5e-4)


def test_mollification_shift_small():
    a = divergence_scan(build_band_field(0.05, 0.1, 2))
    b = divergence_scan(build_band_field(0.05, 0.1, 2, mollify=0.005))
    np.testing.assert_allclose(b.t, a.t, rtol=0.1)
    assert b.increasing
    assert build_band_field(0.05, 0.1, 1, mollify=0.005).flux(np.array([3.0]))[0] == pytest.approx(1.1, abs=1e-9)


def test_lower_bound_term_positive(band4):
    assert lower_bound_term(band4, 1) == pytest.approx(0.622316, rel=1e-4)


# ---------------------------------------------------------------- monomial probe

@pytest.mark.parametrize("m", [1, 2, 3])
def test_probe_grows_for_positive_degrees(probe4, m):
    assert probe4.growth[m] and probe4.verdict(m)
    v = probe4.values(m)
    assert v.size == 4 and np.all(np.diff(np.log(v)) > 0)


def test_probe_growth_rates(probe4):
    # successive ratios approach 4^{2m - 1 - 2 eps}
    for m in (1, 2, 3):
        v = probe4.values(m)
        assert v[-1] / v[-2] == pytest.approx(4 ** (2 * m - 1 - 0.2), rel=0.1)


def test_probe_degree_zero_deferred(probe4):
    assert not probe4.growth[0]
    assert probe4.deferred[0] is True and probe4.verdict(0)
    v = probe4.values(0)
    assert v[-1] / v[-2] == pytest.approx(4 ** (-1.2), rel=0.1)


def test_band_field_frozen():
    b = BandField()
    with pytest.raises(Exception):
        b.eps = 0.2
