"""Physical constants and unit presets.

Two presets are provided: CODATA SI values, and natural units with
mu0 = eps0 = hbar = 1 (the default everywhere in this package; SI
magnitudes like hbar ~ 1e-34 make volume integrands needlessly tiny).
The speed of light is always derived, c = 1/sqrt(eps0*mu0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class PhysicalConstants:
    """Vacuum constants of one unit system.

    mu0   vacuum permeability  [T*m/A]
    eps0  vacuum permittivity  [F/m]
    hbar  reduced Planck const [J*s]
    c     speed of light [m/s], derived from mu0 and eps0
    """

    mu0: float
    eps0: float
    hbar: float
    c: float = field(init=False)

    def __post_init__(self):
        if self.mu0 <= 0 or self.eps0 <= 0 or self.hbar <= 0:
            raise ValueError("constants must be positive")
        object.__setattr__(self, "c", 1.0 / math.sqrt(self.eps0 * self.mu0))

    @property
    def coulomb(self) -> float:
        """Coulomb prefactor 1/(4*pi*eps0)."""
        return 1.0 / (4.0 * math.pi * self.eps0)


#: Natural units: mu0 = eps0 = hbar = 1, hence c = 1.
NATURAL = PhysicalConstants(mu0=1.0, eps0=1.0, hbar=1.0)

#: SI values (CODATA 2018; mu0 kept at its classical defined value,
#: which holds eps0*mu0*c^2 = 1 exactly instead of carrying the
#: experimental 1.6e-10 correction to mu0).
SI = PhysicalConstants(
    mu0=4.0e-7 * math.pi,
    eps0=1.0 / (4.0e-7 * math.pi * 299792458.0**2),
    hbar=1.054571817e-34,
)
