"""Adaptive quadrature: 1D panels, 3D cubature over mapped domains, and
triangulated surface integrals.

All drivers share a design point: integrands are *batched* (one call
receives every pending node as an (n,) or (n, 3) array), because the
dominant cost downstream is multi-loop Biot-Savart evaluation and
per-point Python dispatch would swamp it. Subdivision decisions are
made serially from the evaluated results, so results are bitwise
reproducible regardless of how the evaluation batches are chunked
across worker threads.

1D uses Gauss-Kronrod 7/15 panels with |K15 - G7| as the (conservative)
panel error. 3D uses the Genz-Malik degree-7 rule with its embedded
degree-5 error estimate on axis-aligned boxes in domain coordinates;
curved domains (cylinders, balls, torus tubes) are handled by mapping
with the appropriate Jacobian, which also regularizes 1/r^2 point
singularities at a ball center. Infinite extents are folded in by
tangent compactification in 1D and by truncation in 3D (callers add
analytic tail corrections where they know the far-field law).
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "QuadratureSpec",
    "QuadResult",
    "IntegrandError",
    "integrate_1d",
    "integrate_3d",
    "integrate_triangle_fan",
    "Box",
    "Cylinder",
    "Ball",
    "TorusTube",
]


class IntegrandError(RuntimeError):
    """Raised when an integrand returns NaN/Inf; carries the location."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and limits shared by all integration drivers.

    abs_tol defaults to a denormal-level floor so that convergence is
    effectively controlled by rel_tol alone and therefore independent of
    the unit system; set it explicitly for integrals that cancel.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-300
    max_subdivisions: int = 20000
    truncation_radius: float = 50.0
    exclusion_radius: float = 1e-9
    threads: int = 1

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("rel_tol and abs_tol must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    def with_tolerance(self, rel_tol=None, abs_tol=None) -> "QuadratureSpec":
        kw = {}
        if rel_tol is not None:
            kw["rel_tol"] = rel_tol
        if abs_tol is not None:
            kw["abs_tol"] = abs_tol
        return replace(self, **kw)


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    n_evaluations: int
    converged: bool
    #: sum of signed embedded-rule differences; unlike ``error`` (sum of
    #: magnitudes) this correlates across repeated integrals on a frozen
    #: subdivision, which phase engines exploit for cancelling integrals
    signed_error: float = 0.0


def _call_batched(f, x, threads):
    """Evaluate f on a batch, optionally fanning chunks out to threads.

    Chunk results are reassembled in order, so the output is identical
    for any thread count.
    """
    if threads <= 1 or len(x) < 64:
        out = np.asarray(f(x), dtype=float)
    else:
        chunks = np.array_split(x, threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(f, chunks))
        out = np.concatenate([np.asarray(p, dtype=float) for p in parts])
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise IntegrandError(
            f"integrand returned {out[bad]!r} at {np.asarray(x)[bad]!r}",
            where=np.asarray(x)[bad],
        )
    return out


# --- 1D: adaptive Gauss-Kronrod 7/15 ---------------------------------------

# Kronrod-15 abscissae on [-1, 1]; odd entries are the embedded Gauss-7 set.
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])
_G_IDX = np.arange(1, 15, 2)


def _gk_panels(f, lo, hi, threads):
    """Evaluate GK15 on panels [lo_i, hi_i]; returns (values, errors)."""
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * _XK[None, :]
    y = _call_batched(f, nodes.ravel(), threads).reshape(nodes.shape)
    k = half * (y @ _WK)
    g = half * (y[:, _G_IDX] @ _WG)
    return k, np.abs(k - g)


def integrate_1d(f, a, b, spec: QuadratureSpec | None = None, *,
                 breakpoints=(), scale=1.0) -> QuadResult:
    """Adaptive integral of batched f over [a, b]; limits may be infinite.

    Infinite limits are compactified with x = scale*tan(u), so ``scale``
    should be the length scale on which f decays. ``breakpoints`` become
    initial panel boundaries (GK nodes are interior, so an integrable
    endpoint singularity at a breakpoint is never evaluated).
    """
    spec = spec or QuadratureSpec()
    a = float(a)
    b = float(b)
    if a == b:
        return QuadResult(0.0, 0.0, 0, True)

    g, lo_u, hi_u, inner = _compactify(f, a, b, scale)
    cuts = sorted({lo_u, hi_u, *(inner(p) for p in breakpoints if a < p < b)})
    lo = np.array(cuts[:-1])
    hi = np.array(cuts[1:])

    vals, errs = _gk_panels(g, lo, hi, spec.threads)
    n_evals = 15 * len(lo)
    heap = []
    counter = 0
    store = {}
    for i in range(len(lo)):
        store[counter] = (lo[i], hi[i], vals[i], errs[i])
        heapq.heappush(heap, (-errs[i], counter))
        counter += 1

    n_splits = 0
    while True:
        total = math.fsum(v for (_, _, v, _) in store.values())
        err = math.fsum(e for (_, _, _, e) in store.values())
        if err <= max(spec.abs_tol, spec.rel_tol * abs(total)):
            return QuadResult(total, err, n_evals, True)
        if n_splits >= spec.max_subdivisions:
            return QuadResult(total, err, n_evals, False)

        batch = []
        while heap and len(batch) < 16:
            _, key = heapq.heappop(heap)
            if key in store:
                batch.append(key)
        if not batch:
            return QuadResult(total, err, n_evals, False)

        child_lo, child_hi = [], []
        for key in batch:
            plo, phi, _, _ = store.pop(key)
            pm = 0.5 * (plo + phi)
            child_lo += [plo, pm]
            child_hi += [pm, phi]
        cv, ce = _gk_panels(g, np.array(child_lo), np.array(child_hi), spec.threads)
        n_evals += 15 * len(child_lo)
        n_splits += len(batch)
        for i in range(len(child_lo)):
            store[counter] = (child_lo[i], child_hi[i], cv[i], ce[i])
            heapq.heappush(heap, (-ce[i], counter))
            counter += 1


def _compactify(f, a, b, scale):
    """Map (possibly infinite) [a, b] to a finite u-interval."""
    if math.isfinite(a) and math.isfinite(b):
        return f, a, b, lambda p: p
    s = float(scale)

    if not math.isfinite(a) and not math.isfinite(b):
        def g(u):
            x = s * np.tan(u)
            return f(x) * s / np.cos(u) ** 2
        return g, -0.5 * math.pi, 0.5 * math.pi, lambda p: math.atan(p / s)

    if math.isfinite(a):  # [a, inf)
        def g(u):
            x = a + s * np.tan(u)
            return f(x) * s / np.cos(u) ** 2
        return g, 0.0, 0.5 * math.pi, lambda p: math.atan((p - a) / s)

    # (-inf, b]
    def g(u):
        x = b + s * np.tan(u)
        return f(x) * s / np.cos(u) ** 2
    return g, -0.5 * math.pi, 0.0, lambda p: math.atan((p - b) / s)


# --- 3D: Genz-Malik degree-7 rule with embedded degree-5 --------------------

_L2 = math.sqrt(9.0 / 70.0)
_L4 = math.sqrt(9.0 / 10.0)
_L5 = math.sqrt(9.0 / 19.0)
_N = 3
_W1 = (12824.0 - 9120.0 * _N + 400.0 * _N**2) / 19683.0
_W2 = 980.0 / 6561.0
_W3 = (1820.0 - 400.0 * _N) / 19683.0
_W4 = 200.0 / 19683.0
_W5 = (6859.0 / 19683.0) / 2.0**_N
_E1 = (729.0 - 950.0 * _N + 50.0 * _N**2) / 729.0
_E2 = 245.0 / 486.0
_E3 = (265.0 - 100.0 * _N) / 1458.0
_E4 = 25.0 / 729.0
_DIFF_RATIO = (_L2 / _L4) ** 2


def _gm_unit_points():
    pts = [np.zeros(3)]
    for lam in (_L2, _L4):
        for ax in range(3):
            for sgn in (+1.0, -1.0):
                p = np.zeros(3)
                p[ax] = sgn * lam
                pts.append(p)
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (+1.0, -1.0):
                for sj in (+1.0, -1.0):
                    p = np.zeros(3)
                    p[i] = si * _L4
                    p[j] = sj * _L4
                    pts.append(p)
    for sx in (+1.0, -1.0):
        for sy in (+1.0, -1.0):
            for sz in (+1.0, -1.0):
                pts.append(np.array([sx * _L5, sy * _L5, sz * _L5]))
    return np.array(pts)


_GM_PTS = _gm_unit_points()          # (33, 3) on [-1, 1]^3
_GM_N = len(_GM_PTS)
_SL_CENTER = 0
_SL_L2 = slice(1, 7)
_SL_L4AX = slice(7, 13)
_SL_L4PAIR = slice(13, 25)
_SL_CORNER = slice(25, 33)


def _gm_eval(g, lo, hi, threads):
    """Genz-Malik on boxes: returns (value7, |value7-value5|, axis_diffs)."""
    mid = 0.5 * (lo + hi)                       # (nb, 3)
    half = 0.5 * (hi - lo)
    vol = np.prod(2.0 * half, axis=1)
    nodes = mid[:, None, :] + half[:, None, :] * _GM_PTS[None, :, :]
    y = _call_batched(g, nodes.reshape(-1, 3), threads).reshape(len(lo), _GM_N)

    s_c = y[:, _SL_CENTER]
    s_2 = y[:, _SL_L2].sum(axis=1)
    s_3 = y[:, _SL_L4AX].sum(axis=1)
    s_4 = y[:, _SL_L4PAIR].sum(axis=1)
    s_5 = y[:, _SL_CORNER].sum(axis=1)

    i7 = vol * (_W1 * s_c + _W2 * s_2 + _W3 * s_3 + _W4 * s_4 + _W5 * s_5)
    i5 = vol * (_E1 * s_c + _E2 * s_2 + _E3 * s_3 + _E4 * s_4)
    signed = i7 - i5
    err = np.abs(signed)

    # fourth-difference proxy per axis picks the split direction
    f2 = y[:, _SL_L2].reshape(len(lo), 3, 2).sum(axis=2)
    f4 = y[:, _SL_L4AX].reshape(len(lo), 3, 2).sum(axis=2)
    diffs = np.abs(f2 - 2.0 * s_c[:, None] - _DIFF_RATIO * (f4 - 2.0 * s_c[:, None]))
    # tie-break by box aspect so degenerate integrands still split evenly
    diffs = diffs * half
    return i7, err, diffs, signed


def integrate_3d(f, domain, spec: QuadratureSpec | None = None, *,
                 exclusions=(), extrapolate_exclusions=False,
                 region_cache=None, freeze=False) -> QuadResult:
    """Adaptive cubature of batched f(points (n,3)) -> (n,) over a domain.

    ``exclusions`` is a sequence of (center, radius) balls zeroed out of
    the integrand (singular points). With ``extrapolate_exclusions`` the
    integral is evaluated at radius r and r/2 and Richardson-extrapolated
    linearly in r, for integrands whose excluded mass is O(r).

    ``region_cache`` (a plain list) warm-starts the subdivision from the
    boxes a previous closely-related integrand ended with and stores the
    final boxes back; repeated integrals of a slowly changing integrand
    (the time nodes of an overlap phase) then re-use the same nodes,
    which makes memoizing the expensive field factor effective. With
    ``freeze`` the cached subdivision is evaluated as-is (no refinement),
    making the result an exactly linear functional of the integrand, so
    errors correlate (and cancel) across a family of integrands.
    """
    spec = spec or QuadratureSpec()
    if not exclusions or not extrapolate_exclusions:
        return _integrate_3d_once(f, domain, spec, exclusions, region_cache,
                                  freeze)

    halved = [(c, 0.5 * r) for (c, r) in exclusions]
    full = _integrate_3d_once(f, domain, spec, exclusions, None, False)
    half = _integrate_3d_once(f, domain, spec, halved, None, False)
    value = 2.0 * half.value - full.value
    err = half.error + full.error + abs(half.value - full.value)
    return QuadResult(value, err, full.n_evaluations + half.n_evaluations,
                      full.converged and half.converged,
                      half.signed_error + full.signed_error)


def _integrate_3d_once(f, domain, spec, exclusions, region_cache=None,
                       freeze=False):
    if exclusions:
        centers = np.array([np.asarray(c, dtype=float) for c, _ in exclusions])
        radii = np.array([float(r) for _, r in exclusions])

        def fx(x):
            vals = np.asarray(f(x), dtype=float)
            d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            inside = (d2 < (radii**2)[None, :]).any(axis=1)
            if inside.any():
                vals = np.where(inside, 0.0, vals)
            return vals
    else:
        fx = f

    def g(u):
        x, jac = domain.map(u)
        return fx(x) * jac

    if region_cache:
        lo = np.array([b[0] for b in region_cache])
        hi = np.array([b[1] for b in region_cache])
    else:
        lo0, hi0 = domain.ubox()
        lo = lo0[None, :].copy()
        hi = hi0[None, :].copy()
    vals, errs, diffs, signed = _gm_eval(g, lo, hi, spec.threads)
    n_evals = _GM_N * len(lo)

    if freeze and region_cache:
        total = math.fsum(vals)
        err = math.fsum(errs)
        sgn = math.fsum(signed)
        ok = err <= max(spec.abs_tol, spec.rel_tol * abs(total))
        return QuadResult(total, err, n_evals, ok, sgn)

    store = {}
    heap = []
    counter = 0
    for i in range(len(lo)):
        store[counter] = (lo[i], hi[i], vals[i], errs[i], diffs[i], signed[i])
        heapq.heappush(heap, (-errs[i], counter))
        counter += 1
    n_splits = 0

    def _finish(total, err, converged):
        sgn = math.fsum(s for (_, _, _, _, _, s) in store.values())
        if region_cache is not None:
            region_cache.clear()
            region_cache.extend((b[0], b[1]) for b in store.values())
        return QuadResult(total, err, n_evals, converged, sgn)

    while True:
        total = math.fsum(v for (_, _, v, _, _, _) in store.values())
        err = math.fsum(e for (_, _, _, e, _, _) in store.values())
        if err <= max(spec.abs_tol, spec.rel_tol * abs(total)):
            return _finish(total, err, True)
        if n_splits >= spec.max_subdivisions:
            return _finish(total, err, False)

        batch = []
        while heap and len(batch) < 32:
            _, key = heapq.heappop(heap)
            if key in store:
                batch.append(key)
        if not batch:
            return _finish(total, err, False)

        child_lo, child_hi = [], []
        for key in batch:
            blo, bhi, _, _, bdiff, _ = store.pop(key)
            ax = int(np.argmax(bdiff))
            m = 0.5 * (blo[ax] + bhi[ax])
            l1, h1 = blo.copy(), bhi.copy()
            l2, h2 = blo.copy(), bhi.copy()
            h1[ax] = m
            l2[ax] = m
            child_lo += [l1, l2]
            child_hi += [h1, h2]
        cl = np.array(child_lo)
        ch = np.array(child_hi)
        cv, ce, cd, cs = _gm_eval(g, cl, ch, spec.threads)
        n_evals += _GM_N * len(cl)
        n_splits += len(batch)
        for i in range(len(cl)):
            store[counter] = (cl[i], ch[i], cv[i], ce[i], cd[i], cs[i])
            heapq.heappush(heap, (-ce[i], counter))
            counter += 1


# --- domains ----------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    def ubox(self):
        return self.lo, self.hi

    def map(self, u):
        return u, np.ones(len(u))


def _frame(axis):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = int(np.argmin(np.abs(axis)))
    helper = np.zeros(3)
    helper[k] = 1.0
    e1 = np.cross(helper, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2, axis


@dataclass(frozen=True)
class Cylinder:
    """Cylindrical domain (rho, phi, z) around an axis; z may be infinite,
    in which case it is tangent-compactified on ``z_scale``."""

    center: np.ndarray
    axis: np.ndarray
    radius: float
    z_min: float = -math.inf
    z_max: float = math.inf
    inner_radius: float = 0.0
    z_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float))

    @property
    def _infinite(self):
        return not (math.isfinite(self.z_min) and math.isfinite(self.z_max))

    def ubox(self):
        if self._infinite:
            zl, zh = -0.5 * math.pi, 0.5 * math.pi
        else:
            zl, zh = self.z_min, self.z_max
        return (np.array([self.inner_radius, 0.0, zl]),
                np.array([self.radius, 2.0 * math.pi, zh]))

    def map(self, u):
        e1, e2, ez = _frame(self.axis)
        rho, phi, w = u[:, 0], u[:, 1], u[:, 2]
        if self._infinite:
            z = self.z_scale * np.tan(w)
            dz = self.z_scale / np.cos(w) ** 2
        else:
            z = w
            dz = 1.0
        x = (self.center[None, :]
             + rho[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
             + z[:, None] * ez)
        return x, rho * dz


@dataclass(frozen=True)
class Ball:
    """Spherical domain; the r^2 Jacobian regularizes a 1/r^2 singularity
    at the center."""

    center: np.ndarray
    radius: float
    inner_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def ubox(self):
        return (np.array([self.inner_radius, -1.0, 0.0]),
                np.array([self.radius, 1.0, 2.0 * math.pi]))

    def map(self, u):
        s, mu, phi = u[:, 0], u[:, 1], u[:, 2]
        sin_th = np.sqrt(np.maximum(0.0, 1.0 - mu**2))
        x = self.center[None, :] + np.stack(
            [s * sin_th * np.cos(phi), s * sin_th * np.sin(phi), s * mu], axis=1
        )
        return x, s**2


@dataclass(frozen=True)
class TorusTube:
    """Solid torus: poloidal radius/angle plus toroidal angle. A wedge
    (restricted toroidal range) supports discrete-symmetry reductions."""

    center: np.ndarray
    normal: np.ndarray
    major_radius: float
    minor_radius: float
    phi_min: float = 0.0
    phi_max: float = 2.0 * math.pi

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))

    def ubox(self):
        return (np.array([0.0, 0.0, self.phi_min]),
                np.array([self.minor_radius, 2.0 * math.pi, self.phi_max]))

    def map(self, u):
        e1, e2, n = _frame(self.normal)
        rp, alpha, phi = u[:, 0], u[:, 1], u[:, 2]
        rho = self.major_radius + rp * np.cos(alpha)
        rho_hat = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        x = (self.center[None, :]
             + rho[:, None] * rho_hat
             + (rp * np.sin(alpha))[:, None] * n)
        return x, rp * rho


# --- adaptive surface integral over a triangle fan --------------------------

# degree-5 rule on the reference triangle (7 points, barycentric)
_SQ15 = math.sqrt(15.0)
_TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [(6 - _SQ15) / 21, (6 - _SQ15) / 21, 1 - 2 * (6 - _SQ15) / 21],
    [(6 - _SQ15) / 21, 1 - 2 * (6 - _SQ15) / 21, (6 - _SQ15) / 21],
    [1 - 2 * (6 - _SQ15) / 21, (6 - _SQ15) / 21, (6 - _SQ15) / 21],
    [(6 + _SQ15) / 21, (6 + _SQ15) / 21, 1 - 2 * (6 + _SQ15) / 21],
    [(6 + _SQ15) / 21, 1 - 2 * (6 + _SQ15) / 21, (6 + _SQ15) / 21],
    [1 - 2 * (6 + _SQ15) / 21, (6 + _SQ15) / 21, (6 + _SQ15) / 21],
])
_TRI_W = np.array(
    [9 / 40]
    + [(155 - _SQ15) / 1200] * 3
    + [(155 + _SQ15) / 1200] * 3
)


def _tri_rule(f_flux, tris):
    """Degree-5 rule on flat triangles (nt, 3, 3) -> (nt,) values."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    cross = np.cross(b - a, c - a)
    area2 = np.linalg.norm(cross, axis=1)      # 2*area
    n_hat = cross / np.where(area2[:, None] == 0.0, 1.0, area2[:, None])
    pts = np.einsum("kb,tbx->tkx", _TRI_BARY, tris)     # (nt, 7, 3)
    flat = pts.reshape(-1, 3)
    normals = np.repeat(n_hat, len(_TRI_BARY), axis=0)
    y = _call_batched(lambda x: f_flux(x, normals[: len(x)]), flat, 1)
    y = y.reshape(len(tris), len(_TRI_BARY))
    return 0.5 * area2 * (y @ _TRI_W)


def _tri_children(tris):
    """Midpoint 4-way subdivision: (nt, 3, 3) -> (nt, 4, 3, 3)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab = 0.5 * (a + b)
    bc = 0.5 * (b + c)
    ca = 0.5 * (c + a)
    return np.stack([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([ab, bc, ca], axis=1),
    ], axis=1)


def _tri_eval(f_flux, tris):
    """Deferred-error evaluation: integrate each triangle directly and as
    its four midpoint children; the child sum is the value, the parent
    disagreement the error, and the child values are kept so a split
    costs only the grandchildren. Returns (vals, errs, child_tris,
    child_vals)."""
    direct = _tri_rule(f_flux, tris)
    kids = _tri_children(tris)
    kid_vals = _tri_rule(f_flux, kids.reshape(-1, 3, 3)).reshape(len(tris), 4)
    vals = kid_vals.sum(axis=1)
    errs = np.abs(direct - vals)
    return vals, errs, kids, kid_vals


def integrate_triangle_fan(f_flux, loop_points, spec: QuadratureSpec | None = None,
                           n_bands: int = 8) -> QuadResult:
    """Flux integral over the fan surface spanning a closed loop.

    ``f_flux(points (n,3), normals (n,3)) -> (n,)`` returns the normal
    component of the field; normals follow the right-hand rule of the
    loop's orientation. The fan apex is the loop centroid. The initial
    fan is cut into ``n_bands`` radial bands (crowded toward the apex):
    flux is often concentrated near the apex, and without the bands no
    quadrature node of the level-0 fan would land there, so the error
    indicator would never notice. Triangles are then split adaptively at
    their longest edge.
    """
    spec = spec or QuadratureSpec()
    pts = np.asarray(loop_points, dtype=float)
    if not np.allclose(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[0]])
    apex = pts[:-1].mean(axis=0)
    keep = ~np.all(np.isclose(pts[:-1], pts[1:]), axis=1)
    p0 = pts[:-1][keep]
    p1 = pts[1:][keep]

    s = (np.arange(n_bands + 1) / n_bands) ** 1.5
    tri_list = []
    inner0 = apex + s[1] * (p0 - apex)
    inner1 = apex + s[1] * (p1 - apex)
    tri_list.append(np.stack(
        [np.broadcast_to(apex, p0.shape), inner0, inner1], axis=1))
    for k in range(1, n_bands):
        a0 = apex + s[k] * (p0 - apex)
        a1 = apex + s[k] * (p1 - apex)
        b0 = apex + s[k + 1] * (p0 - apex)
        b1 = apex + s[k + 1] * (p1 - apex)
        tri_list.append(np.stack([a0, b0, b1], axis=1))
        tri_list.append(np.stack([a0, b1, a1], axis=1))
    tris = np.concatenate(tri_list, axis=0)

    vals, errs, kids, kid_vals = _tri_eval(f_flux, tris)
    n_evals = 7 * 5 * len(tris)
    store = {}
    heap = []
    counter = 0
    for i in range(len(tris)):
        store[counter] = (vals[i], errs[i], kids[i], kid_vals[i])
        heapq.heappush(heap, (-errs[i], counter))
        counter += 1

    n_splits = 0
    while True:
        total = math.fsum(v for (v, _, _, _) in store.values())
        err = math.fsum(e for (_, e, _, _) in store.values())
        if err <= max(spec.abs_tol, spec.rel_tol * abs(total)):
            return QuadResult(total, err, n_evals, True)
        if n_splits >= spec.max_subdivisions:
            return QuadResult(total, err, n_evals, False)

        batch = []
        while heap and len(batch) < 64:
            _, key = heapq.heappop(heap)
            if key in store:
                batch.append(key)
        if not batch:
            return QuadResult(total, err, n_evals, False)

        # each popped cell promotes its four children to cells: their
        # direct values are known, only the grandchildren need evaluating
        ctris = np.concatenate([store[key][2] for key in batch], axis=0)
        cdirect = np.concatenate([store[key][3] for key in batch])
        for key in batch:
            store.pop(key)
        gkids = _tri_children(ctris.reshape(-1, 3, 3)).reshape(-1, 4, 3, 3)
        gvals = _tri_rule(f_flux, gkids.reshape(-1, 3, 3)).reshape(-1, 4)
        n_evals += 7 * 4 * len(ctris)
        n_splits += len(batch)
        cv = gvals.sum(axis=1)
        ce = np.abs(cdirect - cv)
        for i in range(len(ctris)):
            store[counter] = (cv[i], ce[i], gkids[i], gvals[i])
            heapq.heappush(heap, (-ce[i], counter))
            counter += 1
