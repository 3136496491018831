"""Spectral homogeneity for periodic and limit-periodic operators."""

from .bands import BandStructure, NumericalFailure
from .cmv import PeriodicCMV, arc_band_structure, cmv_discriminant
from .continuum import (PiecewisePotential, band_structure_window, besicovitch_norm,
                        stepanov_norm)
from .continuum import discriminant as continuum_discriminant
from .intervals import (CircularArcSet, GridSpec, HomogeneityReport, Interval, IntervalSet,
                        certify_arc_homogeneity, certify_homogeneity, hausdorff_distance)
from .jacobi import PeriodicJacobi, band_structure
from .jacobi import discriminant as jacobi_discriminant
from .limit_periodic import (PTSequence, Schedule, check_pt_condition, generate_pt_sequence,
                             tail_sum)
from .verifiers import (FitResult, StepHomogeneityBudget, gap_length_partial_sums,
                        step_homogeneity, verify_band_length_bound, verify_derivative_bound,
                        verify_edge_stability, verify_semicontinuity)

__version__ = "0.1.0"

__all__ = [
    "BandStructure", "NumericalFailure", "PeriodicCMV", "arc_band_structure",
    "cmv_discriminant", "PiecewisePotential", "band_structure_window", "besicovitch_norm",
    "stepanov_norm", "continuum_discriminant", "CircularArcSet", "GridSpec",
    "HomogeneityReport", "Interval", "IntervalSet", "certify_arc_homogeneity",
    "certify_homogeneity", "hausdorff_distance", "PeriodicJacobi", "band_structure",
    "jacobi_discriminant", "PTSequence", "Schedule", "check_pt_condition",
    "generate_pt_sequence", "tail_sum", "FitResult", "StepHomogeneityBudget",
    "gap_length_partial_sums", "step_homogeneity", "verify_band_length_bound",
    "verify_derivative_bound", "verify_edge_stability", "verify_semicontinuity",
]
