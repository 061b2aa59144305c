"""Robust low-thrust trajectory design under missed-thrust events."""

__version__ = "0.1.0"

from .dynamics import CircularOrbit, EccentricOrbit
from .transcription import (
    Obstacle, TranscriptionConfig, MteScenario, build_problem,
)
from .solver import SolveOptions, solve, initialize, run_ensemble
from .propagation import ReferenceTrajectory, flow, flow_with_stm
from .certificate import certificate_triad, extract_bounds, safe_radius
from .recovery import assess_recovery

__all__ = [
    "CircularOrbit", "EccentricOrbit", "Obstacle", "TranscriptionConfig",
    "MteScenario", "build_problem", "SolveOptions", "solve", "initialize",
    "run_ensemble", "ReferenceTrajectory", "flow", "flow_with_stm",
    "certificate_triad", "extract_bounds", "safe_radius", "assess_recovery",
    "__version__",
]
