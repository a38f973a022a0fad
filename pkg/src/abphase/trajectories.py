"""Test-charge trajectories and static charge configurations.

Trajectories are closed parametrized paths t in [0, T] -> R^3 with
analytic velocities. Time parametrization is uniform speed per segment;
the phases downstream are line/linking integrals and therefore
reparametrization invariant, which the tests assert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .vectors import Vec3, is_unit, orthonormal_frame

_CLOSURE_RTOL = 1e-12


def _as_vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class CircularOrbit:
    """Uniform circular orbit; ``windings`` full turns (negative = sense
    reversed against the right-hand rule of ``normal``) over one period."""

    charge: float
    center: Vec3
    normal: Vec3
    radius: float
    period: float
    windings: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec(self.center))
        object.__setattr__(self, "normal", _as_vec(self.normal))
        if not is_unit(self.normal):
            raise ValueError("normal must be a unit vector")
        if self.radius <= 0 or self.period <= 0:
            raise ValueError("radius and period must be positive")
        if self.windings == 0:
            raise ValueError("windings must be a nonzero integer")

    @property
    def q(self) -> float:
        return self.charge

    @property
    def T(self) -> float:
        return self.period

    def _frame(self):
        return orthonormal_frame(self.normal)

    def position(self, t):
        t = np.asarray(t, dtype=float)
        self._check_t(t)
        e1, e2, _ = self._frame()
        ang = 2.0 * math.pi * self.windings * t / self.period
        return (
            self.center
            + self.radius * (np.cos(ang)[..., None] * e1 + np.sin(ang)[..., None] * e2)
        )

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        self._check_t(t)
        e1, e2, _ = self._frame()
        w = 2.0 * math.pi * self.windings / self.period
        ang = w * t
        return self.radius * w * (-np.sin(ang)[..., None] * e1 + np.cos(ang)[..., None] * e2)

    def _check_t(self, t):
        if np.any(t < -1e-12) or np.any(t > self.period * (1 + 1e-12)):
            raise ValueError("t outside [0, T]")

    @property
    def speed(self) -> float:
        return 2.0 * math.pi * self.radius * abs(self.windings) / self.period

    def polyline(self, n: int = 512) -> np.ndarray:
        """Closed sampling of the spatial image (first point repeated last)."""
        t = np.linspace(0.0, self.period, n * abs(self.windings) + 1)
        return self.position(t)


@dataclass(frozen=True)
class PiecewiseLinearLoop:
    """Closed polygonal trajectory with per-segment durations.

    ``durations[i]`` is the time spent on the segment from vertex i to
    vertex i+1 (last segment closes back to vertex 0); omitted durations
    default to proportional-to-length, i.e. uniform speed overall.
    """

    charge: float
    vertices: np.ndarray
    durations: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 3:
            raise ValueError("vertices must be an (n>=3, 3) array")
        if np.allclose(v[0], v[-1], rtol=_CLOSURE_RTOL, atol=0.0):
            v = v[:-1]
        object.__setattr__(self, "vertices", v)
        segs = np.roll(v, -1, axis=0) - v
        lengths = np.linalg.norm(segs, axis=1)
        if np.any(lengths == 0.0):
            raise ValueError("degenerate (zero-length) segment")
        if self.durations is None:
            d = lengths / lengths.sum()
        else:
            d = np.asarray(self.durations, dtype=float)
            if d.shape != (len(v),):
                raise ValueError("need one duration per segment")
            if np.any(d <= 0):
                raise ValueError("durations must be positive")
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "_t_knots", np.concatenate([[0.0], np.cumsum(d)]))

    @property
    def q(self) -> float:
        return self.charge

    @property
    def period(self) -> float:
        return float(self._t_knots[-1])

    @property
    def T(self) -> float:
        return self.period

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.period * (1 + 1e-12)):
            raise ValueError("t outside [0, T]")
        tc = np.clip(t, 0.0, self.period)
        idx = np.clip(np.searchsorted(self._t_knots, tc, side="right") - 1, 0, len(self.durations) - 1)
        frac = (tc - self._t_knots[idx]) / self.durations[idx]
        return idx, frac

    def position(self, t):
        idx, frac = self._locate(t)
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        return v[idx] + frac[..., None] * (nxt[idx] - v[idx])

    def velocity(self, t):
        idx, _ = self._locate(t)
        v = self.vertices
        segs = np.roll(v, -1, axis=0) - v
        return segs[idx] / self.durations[idx][..., None]

    def polyline(self, n: int = 512) -> np.ndarray:
        pts = np.vstack([self.vertices, self.vertices[0]])
        return pts


ChargeTrajectory = CircularOrbit | PiecewiseLinearLoop


def trajectory_sample(tr: ChargeTrajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """(position, velocity) at time t; errors outside [0, T]."""
    return tr.position(t), tr.velocity(t)


@dataclass(frozen=True)
class PointCharge:
    charge: float
    position: Vec3

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec(self.position))


@dataclass(frozen=True)
class StaticChargeConfig:
    """External charges Q_i plus a test charge parked for a dwell time T."""

    external_charges: tuple[PointCharge, ...]
    test_charge: PointCharge
    dwell_time: float

    def __post_init__(self):
        object.__setattr__(self, "external_charges", tuple(self.external_charges))
        if self.dwell_time <= 0:
            raise ValueError("dwell_time must be positive")
        for c in self.external_charges:
            if np.allclose(c.position, self.test_charge.position):
                raise ValueError("external charge coincides with the test charge")

    @classmethod
    def symmetric_pair(
        cls,
        q: float,
        Q: float,
        separation: float,
        dwell_time: float,
        axis=(0.0, 1.0, 0.0),
        test_position=(0.0, 0.0, 0.0),
    ) -> "StaticChargeConfig":
        """Two equal charges Q at +-separation from the test charge along
        ``axis``: the field at the test charge vanishes by symmetry while
        the potential does not."""
        axis = _as_vec(axis)
        axis = axis / np.linalg.norm(axis)
        p0 = _as_vec(test_position)
        ext = (
            PointCharge(Q, p0 + separation * axis),
            PointCharge(Q, p0 - separation * axis),
        )
        return cls(external_charges=ext, test_charge=PointCharge(q, p0), dwell_time=dwell_time)
