"""Numerical laboratory for sensitivity of trajectories to cumulative perturbations."""

__version__ = "0.1.0"

from .core import (
    PerturbationSignal,
    SensitivityReport,
    Trajectory,
    VectorField,
    integrate_perturbed,
    pairwise_sensitivity_ratio,
    sensitivity_ratio,
)
from .errors import SensitivityLabError
from .fpcs import PwlConvexFunction, fpcs_field
from .linear import LinearSystem, classify_sof, closed_form_trajectory, sensitivity_constant

__all__ = [
    "__version__",
    "LinearSystem",
    "PerturbationSignal",
    "PwlConvexFunction",
    "SensitivityLabError",
    "SensitivityReport",
    "Trajectory",
    "VectorField",
    "classify_sof",
    "closed_form_trajectory",
    "fpcs_field",
    "integrate_perturbed",
    "pairwise_sensitivity_ratio",
    "sensitivity_constant",
    "sensitivity_ratio",
]
