"""Tail chains of heavy-tailed Markov processes.

Atomic measures on ``S^{d-1} x R^d`` and their adjoints, forward and
back-and-forth tail chains, simulation of Markov recursions with extreme
window extraction, two closed-form models (Kesten with orthogonal rotations and
a heavy-tailed AR(1)) and two-sample diagnostics.
"""

from .admissible import AdjointPair, AdmissibilityReport, adjoint, check_pair, is_admissible
from .errors import TailChainError
from .diagnostics import TwoSampleResult, binomial_ci, energy_distance, energy_test, permutation_test
from .markov_engine import ModelSpec, WindowSet, extract_windows, hill_alpha, simulate
from .measures import AtomMeasure, AtomicSpectral, TailIndex, UniformSphere, UnitVector, canonicalize, polar, sample_pareto
from .models import Ar1Spec, KestenOrthogonalSpec, ar1_tail_decomposition, kesten_backward_increment, model_from_dict
from .tailchain import BftcSpec, TestFunctional, kernel_from_atoms, sample_bftc, timechange_family, timechange_gap

__all__ = [
    "AdjointPair",
    "AdmissibilityReport",
    "Ar1Spec",
    "AtomMeasure",
    "AtomicSpectral",
    "BftcSpec",
    "KestenOrthogonalSpec",
    "ModelSpec",
    "TailChainError",
    "TailIndex",
    "TestFunctional",
    "TwoSampleResult",
    "UniformSphere",
    "UnitVector",
    "WindowSet",
    "adjoint",
    "ar1_tail_decomposition",
    "binomial_ci",
    "canonicalize",
    "check_pair",
    "energy_distance",
    "energy_test",
    "extract_windows",
    "hill_alpha",
    "is_admissible",
    "kernel_from_atoms",
    "kesten_backward_increment",
    "model_from_dict",
    "permutation_test",
    "polar",
    "sample_bftc",
    "sample_pareto",
    "simulate",
    "timechange_family",
    "timechange_gap",
]
__version__ = "0.1.0"
