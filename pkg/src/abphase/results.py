"""Shared result types for the phase engines."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .constants import NATURAL, PhysicalConstants


class Method(str, enum.Enum):
    WILSON_LOOP = "wilson_loop"
    ENCLOSED_FLUX = "enclosed_flux"
    FIELD_OVERLAP = "field_overlap"
    AXIS_REDUCTION = "axis_reduction"
    AMPERE_REDUCTION = "ampere_reduction"
    SHELL_LINKING = "shell_linking"
    ELECTRIC_POTENTIAL = "electric_potential"
    ELECTRIC_FIELD_OVERLAP = "electric_field_overlap"


@dataclass(frozen=True)
class PhaseResult:
    """A phase in radians with its numerical pedigree.

    Phases are reported unwrapped (not mod 2*pi): winding multiplicity
    is physical, so e.g. a doubly-wound orbit reports twice the phase.
    ``converged`` means ``abs_error_estimate`` met the tolerance the
    caller asked for.
    """

    phase: float
    abs_error_estimate: float
    method: Method
    n_evaluations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict, compare=False)


def normalized_phase(
    p: PhaseResult,
    q: float,
    flux: float,
    constants: PhysicalConstants = NATURAL,
) -> float:
    """Express a phase in units of q*flux/hbar (the canonical answer is 1).

    Raises ValueError for zero charge or zero flux, where the
    normalization is undefined.
    """
    if flux == 0.0:
        raise ValueError("normalization undefined for zero flux")
    if q == 0.0:
        raise ValueError("normalization undefined for zero charge")
    return p.phase * constants.hbar / (q * flux)
