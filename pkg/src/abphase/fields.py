"""Field evaluation: B, A, E, the moving charge's own field, and fluxes.

Everything here is a pure function of immutable inputs. The multi-loop
sources go through ``SourceField``, which holds the flattened loop
arrays for the numba kernels; build it once per scenario and reuse it.
Filament sources refuse evaluation inside an exclusion tube around the
wire (default 1e-9 of the source size) instead of returning huge values.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from . import kernels
from .constants import NATURAL, PhysicalConstants
from .quadrature import QuadratureSpec, QuadResult, integrate_triangle_fan
from .sources import (
    CurrentLoop,
    CurrentSource,
    FiniteSolenoid,
    IdealInfiniteSolenoid,
    PolylineCurrent,
    ToroidalCoil,
    expand_to_loops,
)
from .trajectories import StaticChargeConfig
from .vectors import orthonormal_frame

#: default relative tolerance of filament line integrals
FILAMENT_RTOL = 1e-10
#: hard cap (log2) on nodes for a single (point, loop) pair
MAX_LOOP_NODES_LOG2 = 15
#: evaluation closer than this (times source size) to a filament errors
EXCLUSION_FRACTION = 1e-9


class FieldSingularity(ValueError):
    """Raised when a field is requested on (or inside the exclusion tube
    of) a current filament."""


def _as_points(x):
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1
    return np.atleast_2d(a), single


class SourceField:
    """Field evaluator bound to one source.

    ``b``/``a`` take (n, 3) points and return (n, 3) fields computed by
    adaptive filament quadrature at ``rel_tol`` (closed forms for the
    ideal infinite solenoid). ``min_distance`` gives the distance to the
    nearest filament.
    """

    def __init__(self, source: CurrentSource,
                 constants: PhysicalConstants = NATURAL,
                 rel_tol: float = FILAMENT_RTOL):
        self.source = source
        self.constants = constants
        self.rel_tol = float(rel_tol)
        self.char_size = source.characteristic_size
        self.exclusion = EXCLUSION_FRACTION * self.char_size
        self._loops = None
        self._segments = None
        if isinstance(source, (CurrentLoop, FiniteSolenoid, ToroidalCoil)):
            loops = expand_to_loops(source)
            centers = np.array([lp.center for lp in loops])
            e1 = np.empty_like(centers)
            e2 = np.empty_like(centers)
            for i, lp in enumerate(loops):
                a1, a2, _ = orthonormal_frame(lp.normal)
                e1[i] = a1
                e2[i] = a2
            radii = np.array([lp.radius for lp in loops])
            currents = np.array([lp.current for lp in loops])
            self._loops = (centers, e1, e2, radii, currents)
        elif isinstance(source, PolylineCurrent):
            self._segments = source.segments()

    # -- geometry ------------------------------------------------------

    def min_distance(self, pts) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        if self._loops is not None:
            c, e1, e2, r, _ = self._loops
            return kernels.loop_family_min_distance(pts, c, e1, e2, r)
        if self._segments is not None:
            s, e = self._segments
            return kernels.segment_min_distance(pts, s, e)
        src = self.source  # ideal solenoid: distance to the current sheet
        d = pts - src.axis_point
        axial = d @ src.axis_dir
        rho = np.linalg.norm(d - axial[:, None] * src.axis_dir, axis=1)
        return np.abs(rho - src.radius)

    def _guard(self, pts):
        if isinstance(self.source, IdealInfiniteSolenoid):
            return
        d = self.min_distance(pts)
        if np.any(d < self.exclusion):
            i = int(np.argmin(d))
            raise FieldSingularity(
                f"field requested {d[i]:.3e} from a filament "
                f"(exclusion {self.exclusion:.3e}) at {pts[i]}"
            )

    # -- fields --------------------------------------------------------

    def b(self, pts) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        self._guard(pts)
        mu0 = self.constants.mu0
        if isinstance(self.source, IdealInfiniteSolenoid):
            return self._ideal_b(pts)
        if self._loops is not None:
            c, e1, e2, r, cur = self._loops
            raw = kernels.loop_family_field(pts, c, e1, e2, r, cur,
                                            self.rel_tol, MAX_LOOP_NODES_LOG2,
                                            False)
        else:
            s, e = self._segments
            raw = kernels.polyline_field(pts, s, e, self.source.current,
                                         self.rel_tol, False)
        return (mu0 / (4.0 * math.pi)) * raw

    def a(self, pts) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        self._guard(pts)
        mu0 = self.constants.mu0
        if isinstance(self.source, IdealInfiniteSolenoid):
            return self._ideal_a(pts)
        if self._loops is not None:
            c, e1, e2, r, cur = self._loops
            raw = kernels.loop_family_field(pts, c, e1, e2, r, cur,
                                            self.rel_tol, MAX_LOOP_NODES_LOG2,
                                            True)
        else:
            s, e = self._segments
            raw = kernels.polyline_field(pts, s, e, self.source.current,
                                         self.rel_tol, True)
        return (mu0 / (4.0 * math.pi)) * raw

    def _ideal_b(self, pts):
        src = self.source
        d = pts - src.axis_point
        axial = d @ src.axis_dir
        rho = np.linalg.norm(d - axial[:, None] * src.axis_dir, axis=1)
        b_in = src.total_flux / (math.pi * src.radius**2)
        out = np.zeros_like(pts)
        inside = rho < src.radius
        out[inside] = b_in * src.axis_dir
        return out

    def _ideal_a(self, pts):
        # symmetric gauge: A_phi = flux*rho/(2*pi*a^2) inside, flux/(2*pi*rho) outside
        src = self.source
        d = pts - src.axis_point
        axial = d @ src.axis_dir
        perp = d - axial[:, None] * src.axis_dir
        rho = np.linalg.norm(perp, axis=1)
        phi_hat = np.cross(src.axis_dir[None, :], perp)
        with np.errstate(invalid="ignore", divide="ignore"):
            phi_hat = np.where(rho[:, None] > 0.0, phi_hat / rho[:, None], 0.0)
            mag = np.where(
                rho >= src.radius,
                src.total_flux / (2.0 * math.pi * np.maximum(rho, 1e-300)),
                src.total_flux * rho / (2.0 * math.pi * src.radius**2),
            )
        return mag[:, None] * phi_hat


_EVALUATOR_CACHE: dict[int, tuple] = {}


def field_evaluator(source: CurrentSource,
                    constants: PhysicalConstants = NATURAL,
                    rel_tol: float = FILAMENT_RTOL) -> SourceField:
    """Shared SourceField per (source identity, constants, tolerance)."""
    key = id(source)
    hit = _EVALUATOR_CACHE.get(key)
    if hit is not None:
        ref, by_params = hit
        if ref() is source:
            ev = by_params.get((id(constants), rel_tol))
            if ev is not None:
                return ev
        else:
            by_params = {}
    else:
        by_params = {}
    ev = SourceField(source, constants, rel_tol)
    by_params[(id(constants), rel_tol)] = ev
    _EVALUATOR_CACHE[key] = (weakref.ref(source), by_params)
    return ev


def b_field(source: CurrentSource, x,
            constants: PhysicalConstants = NATURAL,
            rel_tol: float = FILAMENT_RTOL) -> np.ndarray:
    """Magnetic field of a source at one point or a batch of points [T]."""
    pts, single = _as_points(x)
    out = field_evaluator(source, constants, rel_tol).b(pts)
    return out[0] if single else out


def vector_potential(source: CurrentSource, x,
                     constants: PhysicalConstants = NATURAL,
                     rel_tol: float = FILAMENT_RTOL) -> np.ndarray:
    """Vector potential [T*m]; symmetric gauge for the ideal solenoid,
    the Coulomb-gauge line integral (mu0*I/4pi) ∮ dl'/|x-x'| otherwise."""
    pts, single = _as_points(x)
    out = field_evaluator(source, constants, rel_tol).a(pts)
    return out[0] if single else out


def delta_b_moving_charge(q: float, x_p, v, x,
                          constants: PhysicalConstants = NATURAL) -> np.ndarray:
    """Field of a point charge in uniform slow motion (Biot-Savart form):
    dB = (mu0/4pi) q v x (x - x_p)/|x - x_p|^3."""
    pts, single = _as_points(x)
    x_p = np.asarray(x_p, dtype=float)
    v = np.asarray(v, dtype=float)
    d = pts - x_p[None, :]
    r2 = np.einsum("ij,ij->i", d, d)
    if np.any(r2 == 0.0):
        raise FieldSingularity("delta_b evaluated at the charge position")
    w = (constants.mu0 * q / (4.0 * math.pi)) / (r2 * np.sqrt(r2))
    out = np.cross(v[None, :], d) * w[:, None]
    return out[0] if single else out


def delta_b_trajectory_batch(q: float, positions, velocities, x,
                             constants: PhysicalConstants = NATURAL) -> np.ndarray:
    """delta_b for many (particle position, velocity) pairs at many field
    points at once; returns (n_times, n_points, 3)."""
    xp = np.asarray(positions, dtype=float)[:, None, :]
    vv = np.asarray(velocities, dtype=float)[:, None, :]
    pts = np.atleast_2d(np.asarray(x, dtype=float))[None, :, :]
    d = pts - xp
    r2 = np.einsum("tij,tij->ti", d, d)
    if np.any(r2 == 0.0):
        raise FieldSingularity("delta_b evaluated at the charge position")
    w = (constants.mu0 * q / (4.0 * math.pi)) / (r2 * np.sqrt(r2))
    return np.cross(np.broadcast_to(vv, d.shape), d) * w[:, :, None]


def e_field_point_charges(cfg: StaticChargeConfig, x, which: str = "external",
                          constants: PhysicalConstants = NATURAL) -> np.ndarray:
    """Coulomb field of a subset of the charges: 'external', 'test', or 'all'."""
    if which == "external":
        charges = cfg.external_charges
    elif which == "test":
        charges = (cfg.test_charge,)
    elif which == "all":
        charges = (*cfg.external_charges, cfg.test_charge)
    else:
        raise ValueError(f"unknown selector {which!r}")
    pts, single = _as_points(x)
    out = np.zeros_like(pts)
    k = constants.coulomb
    for c in charges:
        d = pts - c.position[None, :]
        r2 = np.einsum("ij,ij->i", d, d)
        if np.any(r2 == 0.0):
            raise FieldSingularity(f"E requested at the position of a charge {c.position}")
        out += (k * c.charge / (r2 * np.sqrt(r2)))[:, None] * d
    return out[0] if single else out


# -- gauge transformations ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaugeFunction:
    """Smooth single-valued gauge function with analytic gradient:

    lambda(x) = (c0 + b.(x-x0) + (x-x0).Q.(x-x0)) * exp(-|x-x0|^2 / (2 sigma^2))
    """

    c0: float
    linear: np.ndarray
    quad: np.ndarray
    center: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))
        object.__setattr__(self, "quad", np.asarray(self.quad, dtype=float))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def value(self, x):
        pts, single = _as_points(x)
        d = pts - self.center[None, :]
        poly = self.c0 + d @ self.linear + np.einsum("ij,jk,ik->i", d, self.quad, d)
        env = np.exp(-np.einsum("ij,ij->i", d, d) / (2.0 * self.sigma**2))
        out = poly * env
        return out[0] if single else out

    def gradient(self, x):
        pts, single = _as_points(x)
        d = pts - self.center[None, :]
        poly = self.c0 + d @ self.linear + np.einsum("ij,jk,ik->i", d, self.quad, d)
        grad_poly = self.linear[None, :] + d @ (self.quad + self.quad.T)
        env = np.exp(-np.einsum("ij,ij->i", d, d) / (2.0 * self.sigma**2))
        out = env[:, None] * (grad_poly - poly[:, None] * d / self.sigma**2)
        return out[0] if single else out


def builtin_gauge_family(scale: float = 1.0) -> list[GaugeFunction]:
    """Five fixed gauge functions spanning constant, linear, and quadratic
    polynomial parts under Gaussian envelopes of different widths."""
    s = float(scale)
    z = np.zeros(3)
    zq = np.zeros((3, 3))
    return [
        GaugeFunction(1.0 * s, z, zq, np.array([0.3, 0.0, 0.1]) * s, 1.5 * s),
        GaugeFunction(0.0, np.array([0.8, -0.3, 0.5]), zq, np.array([-0.2, 0.4, 0.0]) * s, 2.0 * s),
        GaugeFunction(0.5 * s, np.array([0.0, 1.0, 0.0]), zq, np.array([0.0, -0.5, 0.3]) * s, 1.0 * s),
        GaugeFunction(0.0, z, np.diag([0.4, -0.2, 0.1]) / s, np.array([0.5, 0.5, -0.3]) * s, 2.5 * s),
        GaugeFunction(-0.7 * s, np.array([-0.6, 0.0, 0.9]),
                      np.array([[0.0, 0.3, 0.0], [0.3, 0.0, -0.2], [0.0, -0.2, 0.0]]) / s,
                      np.array([0.0, 0.0, 0.8]) * s, 1.8 * s),
    ]


def gauge_shifted_potential(source: CurrentSource, x, lam: GaugeFunction,
                            constants: PhysicalConstants = NATURAL,
                            rel_tol: float = FILAMENT_RTOL) -> np.ndarray:
    """Vector potential in the gauge shifted by grad(lambda)."""
    return vector_potential(source, x, constants, rel_tol) + lam.gradient(x)


# -- flux through a closed loop ----------------------------------------------


def flux_through_loop(source: CurrentSource, loop_points,
                      spec: QuadratureSpec | None = None,
                      constants: PhysicalConstants = NATURAL,
                      n_bands: int = 8) -> QuadResult:
    """Magnetic flux through a surface spanning a closed loop [Wb].

    The surface is the triangle fan from the loop centroid, refined
    adaptively; the normal follows the right-hand rule of the loop's
    orientation. The ideal infinite solenoid takes the exact fast path
    winding_number * total_flux.
    """
    from .topology import winding_number  # local import, no cycle

    spec = spec or QuadratureSpec(rel_tol=1e-8)
    pts = np.asarray(loop_points, dtype=float)
    if not np.allclose(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[0]])

    if isinstance(source, IdealInfiniteSolenoid):
        w = winding_number(pts, source.axis_point, source.axis_dir)
        return QuadResult(w * source.total_flux, 0.0, len(pts), True)

    ev = field_evaluator(source, constants)
    mids = 0.5 * (pts[:-1] + pts[1:])
    dmin = min(ev.min_distance(pts).min(), ev.min_distance(mids).min())
    if dmin < ev.exclusion:
        raise FieldSingularity(
            "loop passes through a current filament; spanning surface ambiguous"
        )

    def f_flux(x, normals):
        return np.einsum("ij,ij->i", ev.b(x), normals)

    return integrate_triangle_fan(f_flux, pts, spec, n_bands=n_bands)
