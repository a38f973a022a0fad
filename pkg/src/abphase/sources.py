"""Declarative current-source geometries.

All sources are immutable values. Multi-loop sources (finite solenoid,
toroidal coil) expand to lists of coaxial/poloidal ``CurrentLoop``s; the
field code treats that expansion as the definition of the source.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constants import NATURAL, PhysicalConstants
from .vectors import Vec3, is_unit, orthonormal_frame, unit

_UNIT_TOL = 1e-12


def _as_vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class IdealInfiniteSolenoid:
    """Infinitely long, tightly wound solenoid, parametrized by its total
    flux rather than a current: every answer downstream depends only on
    the flux, and this keeps the turns density out of the bookkeeping.
    """

    axis_point: Vec3
    axis_dir: Vec3
    radius: float
    total_flux: float

    def __post_init__(self):
        object.__setattr__(self, "axis_point", _as_vec(self.axis_point))
        object.__setattr__(self, "axis_dir", _as_vec(self.axis_dir))
        if not is_unit(self.axis_dir, _UNIT_TOL):
            raise ValueError("axis_dir must be a unit vector")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def characteristic_size(self) -> float:
        return self.radius


@dataclass(frozen=True)
class CurrentLoop:
    """Circular filament loop; current positive along the right-hand
    sense of ``normal``."""

    center: Vec3
    normal: Vec3
    radius: float
    current: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec(self.center))
        object.__setattr__(self, "normal", _as_vec(self.normal))
        if not is_unit(self.normal, _UNIT_TOL):
            raise ValueError("normal must be a unit vector")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def characteristic_size(self) -> float:
        return self.radius


@dataclass(frozen=True)
class FiniteSolenoid:
    """Solenoid of finite length modeled as ``n_loops`` identical coaxial
    loops, uniformly spaced (cell-centered) over the length."""

    center: Vec3
    axis_dir: Vec3
    radius: float
    length: float
    n_loops: int
    loop_current: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec(self.center))
        object.__setattr__(self, "axis_dir", _as_vec(self.axis_dir))
        if not is_unit(self.axis_dir, _UNIT_TOL):
            raise ValueError("axis_dir must be a unit vector")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.length <= 0:
            raise ValueError("length must be positive")
        if self.n_loops < 2:
            raise ValueError("n_loops must be at least 2")

    @property
    def characteristic_size(self) -> float:
        return self.radius


@dataclass(frozen=True)
class ToroidalCoil:
    """Closed toroidal winding: ``n_turns`` planar loops of radius
    ``minor_radius`` whose centers sit on the major circle, each lying in
    the local poloidal plane. The small toroidal drift current of a real
    helix is neglected (each turn is a closed loop).
    """

    center: Vec3
    plane_normal: Vec3
    major_radius: float
    minor_radius: float
    n_turns: int
    current: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec(self.center))
        object.__setattr__(self, "plane_normal", _as_vec(self.plane_normal))
        if not is_unit(self.plane_normal, _UNIT_TOL):
            raise ValueError("plane_normal must be a unit vector")
        if self.minor_radius <= 0 or self.major_radius <= 0:
            raise ValueError("radii must be positive")
        if self.minor_radius >= self.major_radius:
            raise ValueError("minor_radius must be smaller than major_radius")
        if self.n_turns < 1:
            raise ValueError("n_turns must be at least 1")

    @property
    def characteristic_size(self) -> float:
        return self.minor_radius


@dataclass(frozen=True)
class PolylineCurrent:
    """Filament current along straight segments between vertices."""

    vertices: np.ndarray
    current: float
    closed: bool = True

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 2:
            raise ValueError("vertices must be an (n>=2, 3) array")
        object.__setattr__(self, "vertices", v)

    @property
    def characteristic_size(self) -> float:
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """(starts, ends) arrays; appends the closing segment if closed."""
        v = self.vertices
        if self.closed and not np.allclose(v[0], v[-1]):
            v = np.vstack([v, v[0]])
        return v[:-1], v[1:]


CurrentSource = (
    IdealInfiniteSolenoid | FiniteSolenoid | ToroidalCoil | CurrentLoop | PolylineCurrent
)


def finite_solenoid_loops(s: FiniteSolenoid) -> list[CurrentLoop]:
    """Expand a finite solenoid into its constituent loops.

    Loops are cell-centered: offsets (k + 1/2)/n - 1/2 in units of the
    length, symmetric under reflection through the midplane.
    """
    offsets = (np.arange(s.n_loops) + 0.5) / s.n_loops - 0.5
    return [
        CurrentLoop(
            center=s.center + z * s.length * s.axis_dir,
            normal=s.axis_dir,
            radius=s.radius,
            current=s.loop_current,
        )
        for z in offsets
    ]


def toroid_loops(c: ToroidalCoil) -> list[CurrentLoop]:
    """Expand a toroidal coil into poloidal loops.

    Turn k sits at toroidal angle (k + 1/2) * 2*pi/N (half-step offset so
    the phi = 0 poloidal plane never contains a filament), with its
    normal along the local toroidal direction: positive current then
    drives B along +phi inside the tube.
    """
    e1, e2, n = orthonormal_frame(c.plane_normal)
    loops = []
    for k in range(c.n_turns):
        phi = (k + 0.5) * 2.0 * math.pi / c.n_turns
        rho_hat = math.cos(phi) * e1 + math.sin(phi) * e2
        phi_hat = -math.sin(phi) * e1 + math.cos(phi) * e2
        loops.append(
            CurrentLoop(
                center=c.center + c.major_radius * rho_hat,
                normal=phi_hat,
                radius=c.minor_radius,
                current=c.current,
            )
        )
    return loops


def toroid_flux(c: ToroidalCoil, constants: PhysicalConstants = NATURAL) -> float:
    """Flux carried by the tube in the thin-coil approximation.

    B = mu0*N*I/(2*pi*rho_major) across the whole cross-section, so
    flux = B * pi*minor_radius**2. Warns when minor/major > 0.2, where
    ignoring the radial variation of B starts to bite.
    """
    ratio = c.minor_radius / c.major_radius
    if ratio > 0.2:
        warnings.warn(
            f"thin-coil flux formula is poor at minor/major = {ratio:.2f}",
            stacklevel=2,
        )
    b_major = constants.mu0 * c.n_turns * c.current / (2.0 * math.pi * c.major_radius)
    return b_major * math.pi * c.minor_radius**2


def expand_to_loops(source: CurrentSource) -> list[CurrentLoop]:
    if isinstance(source, CurrentLoop):
        return [source]
    if isinstance(source, FiniteSolenoid):
        return finite_solenoid_loops(source)
    if isinstance(source, ToroidalCoil):
        return toroid_loops(source)
    raise TypeError(f"{type(source).__name__} has no loop expansion")
