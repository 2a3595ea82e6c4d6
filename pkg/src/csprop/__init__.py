"""Semiclassical propagator for coupled canonical and spin coherent states."""

from .dynamics import Trajectory, integrate, tangent
from .reference import HilbertConfig, exact_propagator, spin_half_exact
from .semiclassical import (
    PropagatorResult,
    action,
    assemble,
    prefactor,
    propagate,
    separable_assemble,
    sk_phase,
    spin_half_factorized,
)
from .shooting import BoundaryData, TrajectorySolution, continuation, solve
from .states import overlap_canonical, overlap_spin
from .symbols import OperatorSpec, OperatorTerm, jaynes_cummings, q_symbol

__version__ = "0.1.0"

__all__ = [
    "BoundaryData", "HilbertConfig", "OperatorSpec", "OperatorTerm", "PropagatorResult",
    "Trajectory", "TrajectorySolution", "action", "assemble", "continuation",
    "exact_propagator", "integrate", "jaynes_cummings", "overlap_canonical", "overlap_spin",
    "prefactor", "propagate", "q_symbol", "separable_assemble", "sk_phase", "solve",
    "spin_half_exact", "spin_half_factorized", "tangent",
]
