"""Phase engines: every independent route to the Aharonov-Bohm phase.

Magnetic routes
  wilson_loop_phase            (q/hbar) * loop integral of A
  flux_phase                   (q/hbar) * flux through a spanning surface
  field_overlap_phase          (1/mu0*hbar) * int dt int d3x  B . dB
  solenoid_axis_reduction_phase  1D reduction of the overlap integral for
                               a thin infinite solenoid and coaxial orbit
  ampere_reduction_phase       Ampere's-law reduction for a toroidal coil
  shell_linking_phase          flux-weighted field lines x linking numbers

Electric routes
  electric_potential_phase     -q*A0*T/hbar closed form
  electric_field_overlap_phase -(T/hbar) * eps0 * int d3x  E_Q . dE
  coulomb_cross_energy         the electrostatic identity chain behind it

Sign conventions: positive charge, flux along +z, counter-clockwise
orbit in the xy-plane gives +q*flux/hbar from every magnetic engine.
All phases are unwrapped and linear in winding number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .constants import NATURAL, PhysicalConstants
from .fields import (
    FieldSingularity,
    SourceField,
    delta_b_trajectory_batch,
    e_field_point_charges,
    field_evaluator,
    flux_through_loop,
    GaugeFunction,
)
from .quadrature import (
    Ball,
    Cylinder,
    QuadResult,
    QuadratureSpec,
    TorusTube,
    integrate_1d,
    integrate_3d,
)
from .results import Method, PhaseResult
from .sources import (
    CurrentLoop,
    CurrentSource,
    FiniteSolenoid,
    IdealInfiniteSolenoid,
    PolylineCurrent,
    ToroidalCoil,
    toroid_flux,
)
from .topology import linking_number
from .trajectories import ChargeTrajectory, CircularOrbit, StaticChargeConfig
from .vectors import orthonormal_frame, unit


class GeometryError(ValueError):
    """Scenario geometry outside an engine's domain of validity."""


@dataclass(frozen=True, eq=False)
class MagneticScenario:
    source: CurrentSource
    trajectory: ChargeTrajectory
    constants: PhysicalConstants = NATURAL

    def __post_init__(self):
        ev = field_evaluator(self.source, self.constants)
        pts = self.trajectory.polyline(128)
        if not isinstance(self.source, IdealInfiniteSolenoid):
            d = ev.min_distance(pts).min()
            if d < 100.0 * ev.exclusion:
                raise GeometryError(
                    f"trajectory passes {d:.3e} from a filament of the source"
                )


@dataclass(frozen=True, eq=False)
class ElectricScenario:
    config: StaticChargeConfig
    constants: PhysicalConstants = NATURAL


def reference_flux(source: CurrentSource,
                   constants: PhysicalConstants = NATURAL) -> float:
    """Nominal source flux used to express phases in units of q*flux/hbar.

    Ideal solenoid: its defining flux. Toroid: the thin-coil flux.
    Finite solenoid: the infinite-solenoid value mu0*(n/L)*I*pi*r^2 (the
    natural yardstick for length sweeps). Bare loops have no such scale
    and return NaN.
    """
    if isinstance(source, IdealInfiniteSolenoid):
        return source.total_flux
    if isinstance(source, ToroidalCoil):
        return toroid_flux(source, constants)
    if isinstance(source, FiniteSolenoid):
        turn_density = source.n_loops / source.length
        return (constants.mu0 * turn_density * source.loop_current
                * math.pi * source.radius**2)
    return float("nan")


# --------------------------------------------------------------------------
# Wilson loop and enclosed flux
# --------------------------------------------------------------------------


def wilson_loop_phase(s: MagneticScenario, spec: QuadratureSpec | None = None,
                      gauge: GaugeFunction | None = None) -> PhaseResult:
    """(q/hbar) times the loop integral of the vector potential along the
    trajectory, integrated adaptively in the time parameter. Passing a
    ``gauge`` function shifts A by grad(lambda); the result must not
    change, which the property suite asserts."""
    spec = spec or QuadratureSpec(rel_tol=1e-10)
    tr = s.trajectory
    ev = field_evaluator(s.source, s.constants)

    def integrand(t):
        pos = tr.position(t)
        vel = tr.velocity(t)
        a = ev.a(pos)
        if gauge is not None:
            a = a + gauge.gradient(pos)
        return np.einsum("ij,ij->i", a, vel)

    res = integrate_1d(integrand, 0.0, tr.period, spec)
    scale = tr.q / s.constants.hbar
    return PhaseResult(
        phase=scale * res.value,
        abs_error_estimate=abs(scale) * res.error,
        method=Method.WILSON_LOOP,
        n_evaluations=res.n_evaluations,
        converged=res.converged,
    )


def flux_phase(s: MagneticScenario, spec: QuadratureSpec | None = None,
               n_loop_points: int = 256, n_bands: int = 8) -> PhaseResult:
    """(q/hbar) times the flux through the trajectory's spanning surface,
    an independent code path from the Wilson loop (surface vs line
    integral; Stokes' theorem ties them together in the tests)."""
    spec = spec or QuadratureSpec(rel_tol=1e-8)
    tr = s.trajectory
    loop = tr.polyline(n_loop_points)
    res = flux_through_loop(s.source, loop, spec, s.constants, n_bands=n_bands)
    scale = tr.q / s.constants.hbar
    return PhaseResult(
        phase=scale * res.value,
        abs_error_estimate=abs(scale) * res.error,
        method=Method.ENCLOSED_FLUX,
        n_evaluations=res.n_evaluations,
        converged=res.converged,
    )


# --------------------------------------------------------------------------
# Field overlap (the gauge-invariant route)
# --------------------------------------------------------------------------


class _MemoizedB:
    """Memoizes B rows by point bytes; the field of a static source is
    reused across the time nodes of the overlap integral."""

    def __init__(self, ev: SourceField):
        self.ev = ev
        self.cache: dict[bytes, np.ndarray] = {}
        self.n_kernel_points = 0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        keys = [row.tobytes() for row in pts]
        missing = [i for i, k in enumerate(keys) if k not in self.cache]
        if missing:
            fresh = self.ev.b(pts[missing])
            self.n_kernel_points += len(missing)
            for j, i in enumerate(missing):
                self.cache[keys[i]] = fresh[j]
        return np.array([self.cache[k] for k in keys])


@dataclass
class _OverlapPiece:
    """One sub-domain of the overlap integral: a cubature domain, a map
    from (charge position, velocity) to the batched integrand B . dB, a
    persistent region cache, and a relative weight of the ripple bound."""

    domain: object
    make_integrand: object
    cache: list
    ripple_weight: float = 0.0




def _overlap_pieces(source, tr, constants, memo) -> list[_OverlapPiece]:
    """Split the support of B into pieces whose integrands the cubature
    can afford.

    Ideal solenoid: the (infinite) bore cylinder, directly.

    Toroidal coil: the discrete winding is exactly invariant under
    rotation by one turn spacing, so the tube integral equals the
    integral over a single wedge of the symmetrized moving-charge field
    sum_k R_{-k} dB(R_k x). The wedge holds one filament, so the
    near-wall refinement happens once instead of n_turns times.

    Finite solenoid: the bore is split at r_dom (where the winding
    ripple has decayed to ~1e-6) into a smooth core evaluated directly
    and a thin wall annulus where B is replaced by its value on the
    r_dom rim; mid-solenoid that substitution is exact up to the ripple
    (whose phase contribution is bounded and reported, not resolved).
    The end regions, where the rim substitution would be wrong, are
    integrated directly over the full radius: they are short, so their
    near-wall refinement stays affordable.
    """

    def direct_integrand(pos, vel):
        def f(x):
            b = memo(x)
            db = delta_b_trajectory_batch(tr.q, pos[None, :], vel[None, :], x,
                                          constants)[0]
            return np.einsum("ij,ij->i", b, db)
        return f

    if isinstance(source, IdealInfiniteSolenoid):
        orbit_pts = tr.polyline(64)
        d = orbit_pts - source.axis_point
        axial = d @ source.axis_dir
        orbit_scale = float(
            np.linalg.norm(d - axial[:, None] * source.axis_dir, axis=1).max())
        domain = Cylinder(
            center=source.axis_point, axis=source.axis_dir,
            radius=source.radius, z_scale=max(orbit_scale, source.radius),
        )
        return [_OverlapPiece(domain, direct_integrand, [])]

    if isinstance(source, ToroidalCoil):
        n = source.n_turns
        wedge = TorusTube(
            center=source.center, normal=source.plane_normal,
            major_radius=source.major_radius, minor_radius=source.minor_radius,
            phi_min=0.0, phi_max=2.0 * math.pi / n,
        )
        angles = 2.0 * math.pi * np.arange(n) / n
        cos_k = np.cos(angles)
        sin_k = np.sin(angles)
        e1, e2, nh = orthonormal_frame(source.plane_normal)
        pref = constants.mu0 * tr.q / (4.0 * math.pi)

        def wedge_integrand(pos, vel):
            def f(x):
                b = memo(x)
                g = kernels.symmetrized_moving_charge_field(
                    np.ascontiguousarray(x), source.center, e1, e2, nh,
                    cos_k, sin_k, pos, vel, pref)
                return np.einsum("ij,ij->i", b, g)
            return f

        return [_OverlapPiece(wedge, wedge_integrand, [])]

    if isinstance(source, FiniteSolenoid):
        r = source.radius
        length = source.length
        spacing = length / source.n_loops
        skin = min(2.2 * spacing, 0.45 * r)
        r_dom = r - skin
        pad = 3.0 * r
        z_end = 0.5 * length - 2.0 * r
        ctr, ax = source.center, source.axis_dir

        def cyl(inner, outer, z0, z1):
            return Cylinder(center=ctr, axis=ax, radius=outer,
                            inner_radius=inner, z_min=z0, z_max=z1)

        def rim_integrand(pos, vel):
            def f(x):
                d = x - ctr
                axial = d @ ax
                perp = d - axial[:, None] * ax
                rho = np.linalg.norm(perp, axis=1)
                proj = (ctr[None, :] + axial[:, None] * ax
                        + (r_dom / rho)[:, None] * perp)
                b = memo(proj)
                db = delta_b_trajectory_batch(
                    tr.q, pos[None, :], vel[None, :], x, constants)[0]
                return np.einsum("ij,ij->i", b, db)
            return f

        pieces = [
            _OverlapPiece(cyl(0.0, r_dom, -0.5 * length - pad,
                              0.5 * length + pad), direct_integrand, []),
        ]
        if z_end > 0.0 and r_dom > 0.5 * r:
            pieces.append(_OverlapPiece(cyl(r_dom, r, -z_end, z_end),
                                        rim_integrand, [],
                                        ripple_weight=spacing))
            pieces.append(_OverlapPiece(cyl(r_dom, r, z_end, 0.5 * length + pad),
                                        direct_integrand, []))
            pieces.append(_OverlapPiece(cyl(r_dom, r, -0.5 * length - pad, -z_end),
                                        direct_integrand, []))
        else:
            pieces.append(_OverlapPiece(cyl(r_dom, r, -0.5 * length - pad,
                                            0.5 * length + pad),
                                        direct_integrand, []))
        return pieces

    raise GeometryError(
        f"field_overlap_phase needs a source with (effectively) compact "
        f"field support, not {type(source).__name__}"
    )


def field_overlap_phase(s: MagneticScenario, spec: QuadratureSpec | None = None,
                        diagnostics: bool = False) -> PhaseResult:
    """The gauge-invariant route: (1/mu0*hbar) int_0^T dt int d3x B . dB,
    with dB the Biot-Savart field of the moving charge and the spatial
    integral restricted to the support of B (exact for the ideal solenoid
    and the toroid, a controlled truncation for finite solenoids).

    The dB.dB self-term is omitted exactly; its magnitude is available as
    a diagnostic. The B factor is memoized across time nodes and each
    sub-domain's cubature warm-starts from the previous node's
    subdivision, so the static field is evaluated roughly once per
    spatial node rather than once per (time, space) pair.

    ``spec.abs_tol`` is interpreted in radians of phase (relevant for
    scenarios whose phase cancels, e.g. a non-threading orbit).
    """
    spec = spec or QuadratureSpec(rel_tol=1e-5)
    tr = s.trajectory
    constants = s.constants
    ev = field_evaluator(s.source, constants)

    memo = _MemoizedB(ev)
    pieces = _overlap_pieces(s.source, tr, constants, memo)
    abs_tol_s = spec.abs_tol * constants.mu0 * constants.hbar  # phase -> S units

    inner_evals = [0]
    all_converged = [True]
    ripple_frac = [0.0]

    # calibration: refine each piece's subdivision on representative
    # times, then freeze it. On a frozen subdivision the time integral
    # is an exactly linear functional of the integrand, so per-node
    # cubature biases are smooth in t and cancel in cancelling scenarios
    # exactly as the physics does.
    cal_spec = spec.with_tolerance(rel_tol=0.5 * spec.rel_tol)
    for frac in (0.0, 0.37, 0.61, 0.84):
        t = frac * tr.period
        pos = tr.position(np.array([t]))[0]
        vel = tr.velocity(np.array([t]))[0]
        for piece in pieces:
            res = integrate_3d(piece.make_integrand(pos, vel), piece.domain,
                               cal_spec, region_cache=piece.cache)
            inner_evals[0] += res.n_evaluations
            all_converged[0] = all_converged[0] and res.converged

    results_at: dict[float, tuple[float, float]] = {}

    def inner(t: float) -> tuple[float, float]:
        hit = results_at.get(t)
        if hit is not None:
            return hit
        pos = tr.position(np.array([t]))[0]
        vel = tr.velocity(np.array([t]))[0]
        total = 0.0
        signed = 0.0
        ripple = 0.0
        for piece in pieces:
            res = integrate_3d(piece.make_integrand(pos, vel), piece.domain,
                               cal_spec, region_cache=piece.cache, freeze=True)
            total += res.value
            signed += res.signed_error
            if piece.ripple_weight:
                # unresolved winding ripple in the rim: oscillation period
                # (the turn spacing) over the scale dB varies on
                ripple += abs(res.value) * piece.ripple_weight / ev.char_size
            inner_evals[0] += res.n_evaluations
        ripple_frac[0] = max(ripple_frac[0], ripple)
        results_at[t] = (total, signed)
        return results_at[t]

    def outer_integrand(t_batch):
        return np.array([inner(float(t))[0] for t in t_batch])

    def outer_signed(t_batch):
        return np.array([inner(float(t))[1] for t in t_batch])

    outer_spec = spec.with_tolerance(abs_tol=max(1e-300, abs_tol_s))
    outer = integrate_1d(outer_integrand, 0.0, tr.period, outer_spec)
    # the correlated spatial-cubature error of the time-integrated
    # integrand: integrate the signed embedded differences the same way
    static_bias = integrate_1d(outer_signed, 0.0, tr.period,
                               spec.with_tolerance(rel_tol=1e-2,
                                                   abs_tol=max(1e-300, abs_tol_s)))
    pref = 1.0 / (constants.mu0 * constants.hbar)
    err = pref * (outer.error
                  + 2.0 * abs(static_bias.value) + static_bias.error
                  + tr.period * ripple_frac[0])

    diag = {"b_kernel_points": memo.n_kernel_points,
            "time_nodes": len(results_at),
            "n_pieces": len(pieces),
            "spatial_bias_indicator": pref * static_bias.value}
    if diagnostics:
        diag["self_term"] = _overlap_self_term(s, pieces, spec)

    return PhaseResult(
        phase=pref * outer.value,
        abs_error_estimate=err,
        method=Method.FIELD_OVERLAP,
        n_evaluations=inner_evals[0],
        converged=outer.converged and all_converged[0],
        diagnostics=diag,
    )


def _overlap_self_term(s: MagneticScenario, pieces, spec) -> float:
    """Magnitude of the omitted (1/2 mu0 hbar) int dt int dB.dB term,
    estimated at loose tolerance: a diagnostic, not a phase."""
    tr = s.trajectory
    constants = s.constants
    loose = spec.with_tolerance(rel_tol=max(1e-2, spec.rel_tol))

    def inner(t):
        pos = tr.position(np.array([t]))[0]
        vel = tr.velocity(np.array([t]))[0]

        def integrand(x):
            db = delta_b_trajectory_batch(tr.q, pos[None, :], vel[None, :], x,
                                          constants)[0]
            return np.einsum("ij,ij->i", db, db)

        return sum(integrate_3d(integrand, p.domain, loose).value
                   for p in pieces)

    t_nodes = np.linspace(0.0, tr.period, 5)[:-1]
    vals = [inner(float(t)) for t in t_nodes]
    return float(np.mean(vals)) * tr.period / (2.0 * constants.mu0 * constants.hbar)


# --------------------------------------------------------------------------
# Closed-form / 1D reductions
# --------------------------------------------------------------------------


def solenoid_axis_reduction_phase(s: MagneticScenario,
                                  spec: QuadratureSpec | None = None) -> PhaseResult:
    """Thin-solenoid reduction: only dB on the solenoid axis matters, and
    the overlap collapses to (q*flux/2*hbar) int dz R^2/(R^2+z^2)^(3/2)
    (= q*flux/hbar exactly; the period cancels against dB ~ 1/T)."""
    spec = spec or QuadratureSpec(rel_tol=1e-12)
    src = s.source
    tr = s.trajectory
    if not isinstance(src, IdealInfiniteSolenoid) or not isinstance(tr, CircularOrbit):
        raise GeometryError(
            "axis reduction needs an ideal infinite solenoid and a circular orbit"
        )
    cross = np.cross(src.axis_dir, tr.normal)
    offset = tr.center - src.axis_point
    radial = offset - (offset @ src.axis_dir) * src.axis_dir
    if np.linalg.norm(cross) > 1e-9 or np.linalg.norm(radial) > 1e-9 * tr.radius:
        raise GeometryError("axis reduction needs a coaxial orbit")
    if src.radius > 0.1 * tr.radius:
        raise GeometryError("axis reduction assumes a thin solenoid (a << R)")

    R = tr.radius

    def integrand(z):
        return R**2 / (R**2 + z**2) ** 1.5

    res = integrate_1d(integrand, -math.inf, math.inf, spec, scale=R)
    orient = tr.windings * float(np.sign(tr.normal @ src.axis_dir))
    scale = orient * tr.q * src.total_flux / (2.0 * s.constants.hbar)
    return PhaseResult(
        phase=scale * res.value,
        abs_error_estimate=abs(scale) * res.error,
        method=Method.AXIS_REDUCTION,
        n_evaluations=res.n_evaluations,
        converged=res.converged,
    )


def ampere_reduction_phase(s: MagneticScenario,
                           spec: QuadratureSpec | None = None,
                           n_loop_points: int = 512) -> PhaseResult:
    """Toroid reduction via Ampere's law: over one traversal the orbiting
    charge drives int I(t) dt = q * (number of times the orbit threads the
    coil core), read distributionally; the phase is q*flux/hbar times the
    linking number of orbit and core circle."""
    src = s.source
    tr = s.trajectory
    if not isinstance(src, ToroidalCoil):
        raise GeometryError("Ampere reduction applies to toroidal coils")

    e1, e2, _ = orthonormal_frame(src.plane_normal)
    theta = np.linspace(0.0, 2.0 * math.pi, n_loop_points + 1)
    core = (src.center[None, :]
            + src.major_radius * (np.cos(theta)[:, None] * e1[None, :]
                                  + np.sin(theta)[:, None] * e2[None, :]))
    orbit = tr.polyline(n_loop_points)
    link, residual = linking_number(orbit, core, return_residual=True)

    flux = toroid_flux(src, s.constants)
    phase = tr.q * flux * link / s.constants.hbar
    return PhaseResult(
        phase=phase,
        abs_error_estimate=abs(tr.q * flux / s.constants.hbar) * residual,
        method=Method.AMPERE_REDUCTION,
        n_evaluations=n_loop_points**2,
        converged=True,
        diagnostics={"linking_number": link, "linking_residual": residual},
    )


# --------------------------------------------------------------------------
# Shell decomposition: flux-weighted field lines and linking numbers
# --------------------------------------------------------------------------


def _seed_disk(source: CurrentSource):
    """(center, normal frame, radius) of the source cross-section that
    every flux line threads."""
    if isinstance(source, FiniteSolenoid):
        return source.center, source.axis_dir, source.radius
    if isinstance(source, ToroidalCoil):
        e1, e2, n = orthonormal_frame(source.plane_normal)
        # poloidal cross-section at toroidal angle pi (between turns)
        phi = math.pi + math.pi / source.n_turns
        rho_hat = math.cos(phi) * e1 + math.sin(phi) * e2
        phi_hat = -math.sin(phi) * e1 + math.cos(phi) * e2
        center = source.center + source.major_radius * rho_hat
        return center, phi_hat, source.minor_radius
    if isinstance(source, CurrentLoop):
        return source.center, source.normal, source.radius
    raise GeometryError(
        f"shell decomposition needs traceable closed field lines; "
        f"{type(source).__name__} is not supported"
    )


_GL4_X = np.array([-0.8611363115940526, -0.3399810435848563,
                   0.3399810435848563, 0.8611363115940526])
_GL4_W = np.array([0.3478548451374538, 0.6521451548625461,
                   0.6521451548625461, 0.3478548451374538])


def _clip_cell_to_disk(x0, y0, h, a, n_arc=3):
    """Clip the square [x0,x0+h]x[y0,y0+h] against the disk of radius a
    (2D, CCW); returns the clipped polygon's vertices or None. Boundary
    arcs are replaced by short chords."""
    corners = [(x0, y0), (x0 + h, y0), (x0 + h, y0 + h), (x0, y0 + h)]
    a2 = a * a
    inside = [x * x + y * y < a2 for x, y in corners]
    if all(inside):
        return np.array(corners)
    if not any(inside):
        # the cell could still straddle the rim near its middle; cells are
        # small compared to the disk, so corner-outside means outside
        return None

    def circle_hits(p, q):
        # intersection parameters t in (0,1) of segment p+t(q-p) with the circle
        dx, dy = q[0] - p[0], q[1] - p[1]
        aa = dx * dx + dy * dy
        bb = 2.0 * (p[0] * dx + p[1] * dy)
        cc = p[0] * p[0] + p[1] * p[1] - a2
        disc = bb * bb - 4.0 * aa * cc
        if disc <= 0.0:
            return []
        sq = math.sqrt(disc)
        return sorted(t for t in ((-bb - sq) / (2 * aa), (-bb + sq) / (2 * aa))
                      if 0.0 < t < 1.0)

    poly = []
    for i in range(4):
        p = corners[i]
        q = corners[(i + 1) % 4]
        if inside[i]:
            poly.append(p)
        for t in circle_hits(p, q):
            poly.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    if len(poly) < 3:
        return None
    # connect consecutive on-circle vertices along the arc with chords
    out = []
    m = len(poly)
    for i in range(m):
        p = poly[i]
        q = poly[(i + 1) % m]
        out.append(p)
        on_p = abs(p[0] ** 2 + p[1] ** 2 - a2) < 1e-9 * a2
        on_q = abs(q[0] ** 2 + q[1] ** 2 - a2) < 1e-9 * a2
        if on_p and on_q:
            th_p = math.atan2(p[1], p[0])
            th_q = math.atan2(q[1], q[0])
            dth = (th_q - th_p + math.pi) % (2.0 * math.pi) - math.pi
            for k in range(1, n_arc + 1):
                th = th_p + dth * k / (n_arc + 1)
                out.append((a * math.cos(th), a * math.sin(th)))
    return np.array(out)


def _cell_fluxes_and_seeds(ev, center, e1, e2, half_width, clip_radius, n_grid):
    """Cell fluxes as vector-potential circulations around the clipped
    cell boundaries (exactly the B flux by Stokes, and immune to the
    winding ripple that pointwise B samples alias near the wall), plus
    one seed per cell at the clip polygon's centroid."""
    h = 2.0 * half_width / n_grid
    polys = []
    for iy in range(n_grid):
        for ix in range(n_grid):
            poly = _clip_cell_to_disk(-half_width + ix * h, -half_width + iy * h,
                                      h, clip_radius)
            if poly is not None and len(poly) >= 3:
                polys.append(poly)

    starts2 = np.concatenate([p for p in polys])
    counts = np.array([len(p) for p in polys])
    ends2 = np.concatenate([np.roll(p, -1, axis=0) for p in polys])
    # GL4 nodes on every edge of every polygon, one batch
    t_nodes = 0.5 * (_GL4_X + 1.0)
    pts2 = starts2[:, None, :] + t_nodes[None, :, None] * (ends2 - starts2)[:, None, :]
    edge_vec2 = ends2 - starts2
    pts3 = (center[None, None, :]
            + pts2[..., 0:1] * e1[None, None, :]
            + pts2[..., 1:2] * e2[None, None, :])
    a_vals = ev.a(pts3.reshape(-1, 3)).reshape(len(starts2), len(t_nodes), 3)
    tang3 = (edge_vec2[:, 0:1] * e1[None, :] + edge_vec2[:, 1:2] * e2[None, :])
    per_edge = 0.5 * np.einsum("ekx,k,ex->e", a_vals, _GL4_W, tang3)

    fluxes = np.empty(len(polys))
    seeds = np.empty((len(polys), 3))
    pos = 0
    for i, (poly, c) in enumerate(zip(polys, counts)):
        fluxes[i] = per_edge[pos:pos + c].sum()
        u = poly.mean(axis=0)
        seeds[i] = center + u[0] * e1 + u[1] * e2
        pos += c
    return fluxes, seeds, int(len(starts2) * len(t_nodes))


def _circle_circulations(ev, center, e1, e2, rhos, n_theta=512):
    """Vector-potential circulations around coaxial circles (periodic
    trapezoid nodes; spectrally accurate for the smooth A)."""
    th = (np.arange(n_theta) + 0.5) * 2.0 * math.pi / n_theta
    ct, st = np.cos(th), np.sin(th)
    ring = ct[:, None] * e1[None, :] + st[:, None] * e2[None, :]
    tang = -st[:, None] * e1[None, :] + ct[:, None] * e2[None, :]
    out = np.empty(len(rhos))
    for i, rho in enumerate(rhos):
        pts = center[None, :] + rho * ring
        a = ev.a(pts)
        out[i] = np.einsum("ij,ij->i", a, tang).sum() * rho * 2.0 * math.pi / n_theta
    return out


def shell_linking_phase(s: MagneticScenario, spec: QuadratureSpec | None = None,
                        n_grid: int = 32, diagnostics: bool = False,
                        trace_rel_tol: float = 1e-6,
                        closure_tol: float = 1e-3,
                        max_arclength: float | None = None) -> PhaseResult:
    """Assemble the phase from the source's own flux lines: seed an
    n_grid x n_grid flux-weighted family across the source cross-section,
    trace each line to closure, and sum delta_flux * linking(line, orbit)
    times q/hbar. Flux on lines that fail to close (arclength cap,
    field underflow) is reported as an unclassified bound, not silently
    dropped."""
    from .fieldlines import trace_field_lines

    spec = spec or QuadratureSpec()
    src = s.source
    tr = s.trajectory
    constants = s.constants
    ev = field_evaluator(src, constants)

    center, normal, radius = _seed_disk(src)
    e1, e2, n_hat = orthonormal_frame(normal)

    band_bound = 0.0
    if isinstance(src, FiniteSolenoid):
        # flux leaks through the winding gaps in a band around the wall
        # (and bulges just outside it); resolve that band with fine
        # annular cells so its lines are classified separately from the
        # clean bore flux
        spacing = src.length / src.n_loops
        w_band = min(1.5 * spacing, 0.45 * radius)
        r_in = radius - w_band
        r_out = radius + w_band
        seed_flux, seeds, n_flux_evals = _cell_fluxes_and_seeds(
            ev, center, e1, e2, radius, r_in, n_grid)
        n_inner_seeds = len(seeds)
        n_ann = max(4, int(math.ceil((r_out - r_in) / (0.25 * spacing))))
        rhos = np.linspace(r_in, r_out, n_ann + 1)
        gammas = _circle_circulations(ev, center, e1, e2, rhos)
        band_flux = np.diff(gammas)
        mids = 0.5 * (rhos[:-1] + rhos[1:])
        band_seeds = center[None, :] + mids[:, None] * e1[None, :]
        seeds = np.vstack([seeds, band_seeds])
        seed_flux = np.concatenate([seed_flux, band_flux])
        n_flux_evals += len(rhos) * 512
        # flux between r_out and where the gap leak has died off
        tail = _circle_circulations(ev, center, e1, e2,
                                    np.array([r_out, r_out + spacing]))
        band_bound = abs(tail[1] - tail[0])
        n_flux_evals += 2 * 512
    else:
        seed_flux, seeds, n_flux_evals = _cell_fluxes_and_seeds(
            ev, center, e1, e2, radius, radius, n_grid)
        n_inner_seeds = len(seeds)

    if max_arclength is None:
        if isinstance(src, FiniteSolenoid):
            # innermost seeds return at dipole distances ~ L*(r/rho)^2
            max_arclength = 40.0 * src.length * n_grid**2
        else:
            max_arclength = 1000.0 * ev.char_size

    kwargs = dict(constants=constants, closure_tol=closure_tol,
                  max_arclength=max_arclength, min_b_fraction=1e-16)
    lines = trace_field_lines(src, seeds[:n_inner_seeds],
                              rel_tol=trace_rel_tol, **kwargs)
    if n_inner_seeds < len(seeds):
        # the wall-band snake lines wiggle past every turn each circuit;
        # trace them at looser tolerance and a bounded step budget (their
        # flux is small and lands in the unclassified bound if they fail)
        lines += trace_field_lines(src, seeds[n_inner_seeds:], rel_tol=1e-5,
                                   max_steps_per_line=8000, **kwargs)

    orbit = tr.polyline(256)
    phase_sum = 0.0
    unclassified = 0.0
    n_closed = 0
    link_counts: dict[int, int] = {}
    n_evals = int(sum(ln.n_field_evals for ln in lines)) + n_flux_evals
    for ln, dphi in zip(lines, seed_flux):
        if not ln.closed:
            unclassified += abs(dphi)
            continue
        ln.flux_label = dphi
        link = linking_number(ln.points, orbit)
        # a line that only closed on its k-th circuit wraps its orbit k
        # times; the per-circuit linking is what the flux weight carries
        wraps = max(1, ln.n_seed_passes)
        if link % wraps == 0:
            link //= wraps
        else:
            unclassified += abs(dphi)
            continue
        link_counts[link] = link_counts.get(link, 0) + 1
        phase_sum += dphi * link
        n_closed += 1

    q_over_h = tr.q / constants.hbar
    windings = abs(getattr(tr, "windings", 1))
    max_link = max((abs(k) for k in link_counts), default=windings)
    bound = abs(q_over_h) * (unclassified + band_bound) * max(max_link, windings, 1)

    diag = {
        "n_seeds": len(seeds),
        "n_closed": n_closed,
        "n_open": len(seeds) - n_closed,
        "seeded_flux": float(seed_flux.sum()),
        "unclassified_flux": float(unclassified),
        "link_histogram": link_counts,
    }

    return PhaseResult(
        phase=q_over_h * phase_sum,
        abs_error_estimate=bound,
        method=Method.SHELL_LINKING,
        n_evaluations=n_evals,
        converged=True,
        diagnostics=diag,
    )


# --------------------------------------------------------------------------
# Electric engines
# --------------------------------------------------------------------------


def electric_potential_phase(s: ElectricScenario) -> PhaseResult:
    """Closed form -q*A0(r_q)*T/hbar from the external charges' potential
    at the (field-free) test-charge position."""
    cfg = s.config
    k = s.constants.coulomb
    rq = cfg.test_charge.position
    a0 = sum(
        k * c.charge / float(np.linalg.norm(rq - c.position))
        for c in cfg.external_charges
    )
    phase = -cfg.test_charge.charge * a0 * cfg.dwell_time / s.constants.hbar
    return PhaseResult(
        phase=phase,
        abs_error_estimate=abs(phase) * 1e-15,
        method=Method.ELECTRIC_POTENTIAL,
        n_evaluations=len(cfg.external_charges),
        converged=True,
    )


def _monopole_tail(charges_a, charges_b, r_t: float, constants) -> tuple[float, float]:
    """Analytic tail of eps0 * int_{r>R} E_a . E_b for two compact charge
    groups: k*(sum Q_a)(sum Q_b)/R to leading order. Returns (correction,
    residual bound) with the bound from the first neglected moments."""
    k = constants.coulomb
    qa = sum(c.charge for c in charges_a)
    qb = sum(c.charge for c in charges_b)
    origin = charges_b[0].position
    pa = sum(abs(c.charge) * np.linalg.norm(c.position - origin) for c in charges_a)
    pb = sum(abs(c.charge) * np.linalg.norm(c.position - origin) for c in charges_b)
    correction = k * qa * qb / r_t
    qa_abs = sum(abs(c.charge) for c in charges_a)
    qb_abs = sum(abs(c.charge) for c in charges_b)
    bound = 4.0 * k * (pa * qb_abs + pb * qa_abs) / r_t**2
    return correction, bound


def electric_field_overlap_phase(s: ElectricScenario,
                                 spec: QuadratureSpec | None = None,
                                 extrapolate_exclusions: bool = False) -> PhaseResult:
    """Gauge-invariant electric route: -(T/hbar) eps0 int d3x E_Q . dE,
    cubature in spherical coordinates around the test charge (whose 1/r^2
    singularity the Jacobian removes), exclusion balls at the external
    charges, truncation plus the analytic monopole tail beyond it."""
    spec = spec or QuadratureSpec(rel_tol=1e-5)
    cfg = s.config
    constants = s.constants
    rq = cfg.test_charge.position

    dists = [float(np.linalg.norm(c.position - rq)) for c in cfg.external_charges]
    scale = max(dists)
    r_t = spec.truncation_radius * scale
    excl = [(c.position, 1e-3 * scale) for c in cfg.external_charges]

    def integrand(x):
        e_q = e_field_point_charges(cfg, x, "external", constants)
        d_e = e_field_point_charges(cfg, x, "test", constants)
        return constants.eps0 * np.einsum("ij,ij->i", e_q, d_e)

    domain = Ball(center=rq, radius=r_t)
    res = integrate_3d(integrand, domain, spec, exclusions=excl,
                       extrapolate_exclusions=extrapolate_exclusions)
    tail, tail_bound = _monopole_tail(
        cfg.external_charges, (cfg.test_charge,), r_t, constants
    )

    pref = -cfg.dwell_time / constants.hbar
    return PhaseResult(
        phase=pref * (res.value + tail),
        abs_error_estimate=abs(pref) * (res.error + tail_bound),
        method=Method.ELECTRIC_FIELD_OVERLAP,
        n_evaluations=res.n_evaluations,
        converged=res.converged,
        diagnostics={"tail_correction": tail, "truncation_radius": r_t},
    )


@dataclass(frozen=True)
class CrossEnergyResult:
    """Both numerical forms of the two-charge interaction energy plus the
    analytic value k*q1*q2/d. ``direct`` integrates eps0*E1.E2;
    ``subtracted`` integrates (eps0/2)(E^2 - E1^2 - E2^2) on the same
    nodes, where the divergent self-energies cancel pointwise."""

    direct: float
    subtracted: float
    analytic: float
    error: float
    n_evaluations: int
    converged: bool


def coulomb_cross_energy(q1: float, x1, q2: float, x2,
                         spec: QuadratureSpec | None = None) -> CrossEnergyResult:
    """Electrostatic interaction energy of two point charges from the
    field overlap, in natural units (eps0 = 1)."""
    spec = spec or QuadratureSpec(rel_tol=1e-5)
    constants = NATURAL
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d = float(np.linalg.norm(x1 - x2))
    if d == 0.0:
        raise ValueError("charges coincide")
    k = constants.coulomb

    def e1_of(x):
        dd = x - x1[None, :]
        r2 = np.einsum("ij,ij->i", dd, dd)
        return (k * q1 / (r2 * np.sqrt(r2)))[:, None] * dd

    def e2_of(x):
        dd = x - x2[None, :]
        r2 = np.einsum("ij,ij->i", dd, dd)
        return (k * q2 / (r2 * np.sqrt(r2)))[:, None] * dd

    def f_direct(x):
        return constants.eps0 * np.einsum("ij,ij->i", e1_of(x), e2_of(x))

    def f_subtracted(x):
        e1 = e1_of(x)
        e2 = e2_of(x)
        tot = e1 + e2
        return 0.5 * constants.eps0 * (
            np.einsum("ij,ij->i", tot, tot)
            - np.einsum("ij,ij->i", e1, e1)
            - np.einsum("ij,ij->i", e2, e2)
        )

    r_t = spec.truncation_radius * d
    domain = Ball(center=x1, radius=r_t)
    excl = [(x2, 1e-3 * d)]

    region: list = []
    res = integrate_3d(f_direct, domain, spec, exclusions=excl,
                       region_cache=region)
    # same boxes, same nodes: the two forms may differ only by rounding
    res_sub = integrate_3d(f_subtracted, domain,
                           spec.with_tolerance(rel_tol=1e300, abs_tol=1e300),
                           exclusions=excl, region_cache=region)

    from .trajectories import PointCharge

    tail, _ = _monopole_tail(
        (PointCharge(q1, x1),), (PointCharge(q2, x2),), r_t, constants
    )
    return CrossEnergyResult(
        direct=res.value + tail,
        subtracted=res_sub.value + tail,
        analytic=k * q1 * q2 / d,
        error=res.error,
        n_evaluations=res.n_evaluations + res_sub.n_evaluations,
        converged=res.converged,
    )
