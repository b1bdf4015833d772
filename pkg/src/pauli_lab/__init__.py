"""Generating potentials, Pauli forms and zero-mode counts for singular 2D magnetic fields."""

from .counterexample import BandField, build_band_field, divergence_scan, h_explicit, no_zero_mode_probe
from .grid import Grid
from .measure import (
    DensityGrid,
    DyadicSquare,
    IntegerAtomList,
    RadialProfile,
    SignedMeasure,
    brute_force_light,
    dyadic_scale,
    epsilon_mu,
    flux,
    gauge_phase,
    reduce,
    split_measure,
    total_variation,
)
from .potential import (
    GeneratingPotential,
    PotentialField,
    asymptotic_flux_check,
    build_potential,
    log_potential,
    radial_potential,
)
from .spectrum import GridOperator, KernelReport, assemble_form, kernel_dimension, lowest_eigenvalues
from .weights import (
    A2Scanner,
    a2_scan,
    beurling_apply,
    jensen_bound_check,
    multiplier_probe,
    power_weight,
    reverse_holder_probe,
    weighted_ratio_suite,
)
from .zero_modes import (ZeroModeCounter, ac_predict, acheck, candidate_modes, candidate_rayleigh, core_cutoff,
                         normalizability_test, threshold_count)

__version__ = "0.1.0"
