"""Numba kernels for filament field sums and curve-pair integrals.

These are the only hot loops in the package. Each output row is
accumulated sequentially by a single worker, so results are independent
of the thread count.

Circular-loop line integrals use the midpoint (periodic trapezoid) rule,
whose error for this integrand decays like exp(-M*v) with
v = arccosh((rho^2 + a^2 + z^2) / (2*a*rho)) the distance of the nearest
complex pole; M is chosen per (point, loop) pair from that rate, with a
safety margin, so the node budget lands where the geometry needs it.
Straight polyline segments use 8-point Gauss-Legendre panels with
adaptive bisection.
"""

from __future__ import annotations

import math
import os

# the default TBB probe warns on older TBB; OpenMP is always present here
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba as nb
import numpy as np

# Node tables for the periodic midpoint rule at power-of-two counts
# 8..32768: theta_j = (j + 1/2) * 2*pi / M. Table lookups keep the inner
# loop free of serial trig recurrences, so it vectorizes.
_M_MIN_LOG2 = 3
_M_MAX_LOG2 = 15


def _build_node_tables():
    offs = np.zeros(_M_MAX_LOG2 - _M_MIN_LOG2 + 2, dtype=np.int64)
    cs, sn = [], []
    total = 0
    for lvl in range(_M_MIN_LOG2, _M_MAX_LOG2 + 1):
        m = 1 << lvl
        th = (np.arange(m) + 0.5) * (2.0 * np.pi / m)
        cs.append(np.cos(th))
        sn.append(np.sin(th))
        total += m
        offs[lvl - _M_MIN_LOG2 + 1] = total
    return np.concatenate(cs), np.concatenate(sn), offs


_CT, _ST, _OFFS = _build_node_tables()

_GL8_X = np.array([
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
    -0.1834346424956498, 0.1834346424956498, 0.5255324099163290,
    0.7966664774136267, 0.9602898564975363,
])
_GL8_W = np.array([
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
    0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
    0.2223810344533745, 0.1012285362903763,
])


@nb.njit(cache=True, inline="always")
def _level_for_pair(log_tol, rho2, a, rho, z2, max_log2):
    """Table level (log2 of node count) for one (point, loop) pair."""
    arg = (rho2 + a * a + z2) / (2.0 * a * rho) if rho > 0.0 else 1e300
    if arg < 1.0 + 1e-15:
        arg = 1.0 + 1e-15
    v = math.acosh(arg)
    m = -log_tol / v + 8.0
    lvl = _M_MIN_LOG2
    while (1 << lvl) < m and lvl < max_log2:
        lvl += 1
    return lvl


@nb.njit(cache=True, parallel=True, fastmath=True)
def loop_family_field(pts, centers, e1, e2, radii, currents, rel_tol,
                      max_log2, want_potential):
    """Biot-Savart field (or vector potential integrand sum) of a family
    of circular loops at many points.

    The node count per (point, loop) pair follows the analytic
    convergence rate of the periodic midpoint rule (see module
    docstring), quantized to the precomputed tables. Returns the raw
    line-integral sum: multiply by mu0/(4*pi) for B, and likewise for A.
    ``want_potential`` switches the kernel between cross(dl, d)/|d|^3
    (field) and dl/|d| (potential).
    """
    n_pts = pts.shape[0]
    n_loops = centers.shape[0]
    out = np.zeros((n_pts, 3))
    log_tol = math.log(rel_tol / max(1.0, math.sqrt(n_loops))) - 2.0

    for i in nb.prange(n_pts):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        accx = accy = accz = 0.0
        for n in range(n_loops):
            a = radii[n]
            cur = currents[n]
            cx, cy, cz = centers[n, 0], centers[n, 1], centers[n, 2]
            dx = px - cx
            dy = py - cy
            dz = pz - cz
            e1x, e1y, e1z = e1[n, 0], e1[n, 1], e1[n, 2]
            e2x, e2y, e2z = e2[n, 0], e2[n, 1], e2[n, 2]
            xi = dx * e1x + dy * e1y + dz * e1z
            eta = dx * e2x + dy * e2y + dz * e2z
            rho2 = xi * xi + eta * eta
            zz = (dx * dx + dy * dy + dz * dz) - rho2
            if zz < 0.0:
                zz = 0.0
            lvl = _level_for_pair(log_tol, rho2, a, math.sqrt(rho2), zz, max_log2)
            m = 1 << lvl
            off = _OFFS[lvl - _M_MIN_LOG2]
            w = a * (2.0 * math.pi / m) * cur
            sx = sy = sz = 0.0
            for j in range(m):
                ct = _CT[off + j]
                st = _ST[off + j]
                # node position and tangent in world coordinates
                yx = cx + a * (e1x * ct + e2x * st)
                yy = cy + a * (e1y * ct + e2y * st)
                yz = cz + a * (e1z * ct + e2z * st)
                tx = -e1x * st + e2x * ct
                ty = -e1y * st + e2y * ct
                tz = -e1z * st + e2z * ct
                rx = px - yx
                ry = py - yy
                rz = pz - yz
                r2 = rx * rx + ry * ry + rz * rz
                if want_potential:
                    wr = 1.0 / math.sqrt(r2)
                    sx += tx * wr
                    sy += ty * wr
                    sz += tz * wr
                else:
                    wr = 1.0 / (r2 * math.sqrt(r2))
                    sx += (ty * rz - tz * ry) * wr
                    sy += (tz * rx - tx * rz) * wr
                    sz += (tx * ry - ty * rx) * wr
            accx += w * sx
            accy += w * sy
            accz += w * sz
        out[i, 0] = accx
        out[i, 1] = accy
        out[i, 2] = accz
    return out


@nb.njit(cache=True, parallel=True, fastmath=True)
def symmetrized_moving_charge_field(pts, center, axis_e1, axis_e2, axis_n,
                                    cos_k, sin_k, pos, vel, pref):
    """sum_k R(-phi_k) dB(R(phi_k) x) for rotations about an axis.

    dB is the quasi-static moving-charge field pref * v x d / |d|^3
    (pref = mu0*q/4pi). Used to fold an N-fold discrete rotational
    symmetry of the source into the moving charge's field, reducing a
    full-revolution integral to one wedge.
    """
    n_pts = pts.shape[0]
    n_rot = cos_k.shape[0]
    out = np.zeros((n_pts, 3))
    for i in nb.prange(n_pts):
        dx = pts[i, 0] - center[0]
        dy = pts[i, 1] - center[1]
        dz = pts[i, 2] - center[2]
        xi = dx * axis_e1[0] + dy * axis_e1[1] + dz * axis_e1[2]
        eta = dx * axis_e2[0] + dy * axis_e2[1] + dz * axis_e2[2]
        zeta = dx * axis_n[0] + dy * axis_n[1] + dz * axis_n[2]
        ax = ay = az = 0.0
        for k in range(n_rot):
            c = cos_k[k]
            s = sin_k[k]
            xr = c * xi - s * eta
            yr = s * xi + c * eta
            # rotated world point
            wx = center[0] + xr * axis_e1[0] + yr * axis_e2[0] + zeta * axis_n[0]
            wy = center[1] + xr * axis_e1[1] + yr * axis_e2[1] + zeta * axis_n[1]
            wz = center[2] + xr * axis_e1[2] + yr * axis_e2[2] + zeta * axis_n[2]
            rx = wx - pos[0]
            ry = wy - pos[1]
            rz = wz - pos[2]
            r2 = rx * rx + ry * ry + rz * rz
            wgt = pref / (r2 * math.sqrt(r2))
            bx = (vel[1] * rz - vel[2] * ry) * wgt
            by = (vel[2] * rx - vel[0] * rz) * wgt
            bz = (vel[0] * ry - vel[1] * rx) * wgt
            # rotate the field back by -phi_k: components along the frame
            fxi = bx * axis_e1[0] + by * axis_e1[1] + bz * axis_e1[2]
            feta = bx * axis_e2[0] + by * axis_e2[1] + bz * axis_e2[2]
            fzeta = bx * axis_n[0] + by * axis_n[1] + bz * axis_n[2]
            fxi_r = c * fxi + s * feta
            feta_r = -s * fxi + c * feta
            ax += fxi_r * axis_e1[0] + feta_r * axis_e2[0] + fzeta * axis_n[0]
            ay += fxi_r * axis_e1[1] + feta_r * axis_e2[1] + fzeta * axis_n[1]
            az += fxi_r * axis_e1[2] + feta_r * axis_e2[2] + fzeta * axis_n[2]
        out[i, 0] = ax
        out[i, 1] = ay
        out[i, 2] = az
    return out


@nb.njit(cache=True, inline="always")
def _segment_gl8(px, py, pz, ax, ay, az, ux, uy, uz, s0, s1, want_potential):
    """GL8 panel of the segment kernel over parameter [s0, s1] of
    y = a + s*u; returns panel (vx, vy, vz)."""
    mid = 0.5 * (s0 + s1)
    half = 0.5 * (s1 - s0)
    vx = vy = vz = 0.0
    for k in range(8):
        s = mid + half * _GL8_X[k]
        w = half * _GL8_W[k]
        rx = px - (ax + s * ux)
        ry = py - (ay + s * uy)
        rz = pz - (az + s * uz)
        r2 = rx * rx + ry * ry + rz * rz
        if want_potential:
            wr = w / math.sqrt(r2)
            vx += ux * wr
            vy += uy * wr
            vz += uz * wr
        else:
            wr = w / (r2 * math.sqrt(r2))
            vx += (uy * rz - uz * ry) * wr
            vy += (uz * rx - ux * rz) * wr
            vz += (ux * ry - uy * rx) * wr
    return vx, vy, vz


@nb.njit(cache=True, parallel=True, fastmath=True)
def polyline_field(pts, starts, ends, current, rel_tol, want_potential):
    """Adaptive Biot-Savart (or potential) sum over straight segments.

    Returns the raw line-integral sum, as in ``loop_family_field``.
    """
    n_pts = pts.shape[0]
    n_seg = starts.shape[0]
    out = np.zeros((n_pts, 3))
    max_depth = 48

    for i in nb.prange(n_pts):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        accx = accy = accz = 0.0
        stack0 = np.empty(max_depth + 2)
        stack1 = np.empty(max_depth + 2)
        depth_s = np.empty(max_depth + 2, dtype=np.int64)
        for n in range(n_seg):
            ax, ay, az = starts[n, 0], starts[n, 1], starts[n, 2]
            ux = ends[n, 0] - ax
            uy = ends[n, 1] - ay
            uz = ends[n, 2] - az
            # rough scale for the absolute acceptance threshold
            v0x, v0y, v0z = _segment_gl8(px, py, pz, ax, ay, az,
                                         ux, uy, uz, 0.0, 1.0, want_potential)
            scale = abs(v0x) + abs(v0y) + abs(v0z) + 1e-300
            tol_seg = rel_tol * scale / max(1.0, float(n_seg))
            top = 0
            stack0[0] = 0.0
            stack1[0] = 1.0
            depth_s[0] = 0
            while top >= 0:
                s0 = stack0[top]
                s1 = stack1[top]
                dep = depth_s[top]
                top -= 1
                vx, vy, vz = _segment_gl8(px, py, pz, ax, ay, az,
                                          ux, uy, uz, s0, s1, want_potential)
                sm = 0.5 * (s0 + s1)
                lx, ly, lz = _segment_gl8(px, py, pz, ax, ay, az,
                                          ux, uy, uz, s0, sm, want_potential)
                rx_, ry_, rz_ = _segment_gl8(px, py, pz, ax, ay, az,
                                             ux, uy, uz, sm, s1, want_potential)
                ex = vx - (lx + rx_)
                ey = vy - (ly + ry_)
                ez = vz - (lz + rz_)
                errv = abs(ex) + abs(ey) + abs(ez)
                if errv <= tol_seg * (s1 - s0) or dep >= max_depth:
                    accx += lx + rx_
                    accy += ly + ry_
                    accz += lz + rz_
                else:
                    top += 1
                    stack0[top] = s0
                    stack1[top] = sm
                    depth_s[top] = dep + 1
                    top += 1
                    stack0[top] = sm
                    stack1[top] = s1
                    depth_s[top] = dep + 1
        out[i, 0] = accx * current
        out[i, 1] = accy * current
        out[i, 2] = accz * current
    return out


@nb.njit(cache=True, parallel=True, fastmath=True)
def loop_family_min_distance(pts, centers, e1, e2, radii):
    """Distance from each point to the nearest filament circle."""
    n_pts = pts.shape[0]
    n_loops = centers.shape[0]
    out = np.empty(n_pts)
    for i in nb.prange(n_pts):
        best = 1e300
        for n in range(n_loops):
            dx = pts[i, 0] - centers[n, 0]
            dy = pts[i, 1] - centers[n, 1]
            dz = pts[i, 2] - centers[n, 2]
            xi = dx * e1[n, 0] + dy * e1[n, 1] + dz * e1[n, 2]
            eta = dx * e2[n, 0] + dy * e2[n, 1] + dz * e2[n, 2]
            rho = math.sqrt(xi * xi + eta * eta)
            zz2 = dx * dx + dy * dy + dz * dz - rho * rho
            if zz2 < 0.0:
                zz2 = 0.0
            dr = rho - radii[n]
            d = math.sqrt(dr * dr + zz2)
            if d < best:
                best = d
        out[i] = best
    return out


@nb.njit(cache=True, parallel=True, fastmath=True)
def segment_min_distance(pts, starts, ends):
    """Distance from each point to the nearest polyline segment."""
    n_pts = pts.shape[0]
    n_seg = starts.shape[0]
    out = np.empty(n_pts)
    for i in nb.prange(n_pts):
        best = 1e300
        for n in range(n_seg):
            ux = ends[n, 0] - starts[n, 0]
            uy = ends[n, 1] - starts[n, 1]
            uz = ends[n, 2] - starts[n, 2]
            wx = pts[i, 0] - starts[n, 0]
            wy = pts[i, 1] - starts[n, 1]
            wz = pts[i, 2] - starts[n, 2]
            uu = ux * ux + uy * uy + uz * uz
            t = (wx * ux + wy * uy + wz * uz) / uu
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            dx = wx - t * ux
            dy = wy - t * uy
            dz = wz - t * uz
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < best:
                best = d
        out[i] = best
    return out


@nb.njit(cache=True, parallel=True, fastmath=True)
def gauss_linking_sum(p1, p2):
    """Discrete Gauss linking integral of two closed polylines.

    Curves are vertex lists with the last vertex equal to the first.
    Uses segment midpoints and tangents; the caller refines until the
    result is near an integer.
    """
    n1 = p1.shape[0] - 1
    n2 = p2.shape[0] - 1
    partial = np.zeros(n1)
    for i in nb.prange(n1):
        m1x = 0.5 * (p1[i, 0] + p1[i + 1, 0])
        m1y = 0.5 * (p1[i, 1] + p1[i + 1, 1])
        m1z = 0.5 * (p1[i, 2] + p1[i + 1, 2])
        t1x = p1[i + 1, 0] - p1[i, 0]
        t1y = p1[i + 1, 1] - p1[i, 1]
        t1z = p1[i + 1, 2] - p1[i, 2]
        acc = 0.0
        for j in range(n2):
            m2x = 0.5 * (p2[j, 0] + p2[j + 1, 0])
            m2y = 0.5 * (p2[j, 1] + p2[j + 1, 1])
            m2z = 0.5 * (p2[j, 2] + p2[j + 1, 2])
            t2x = p2[j + 1, 0] - p2[j, 0]
            t2y = p2[j + 1, 1] - p2[j, 1]
            t2z = p2[j + 1, 2] - p2[j, 2]
            rx = m1x - m2x
            ry = m1y - m2y
            rz = m1z - m2z
            r2 = rx * rx + ry * ry + rz * rz
            cx = t1y * t2z - t1z * t2y
            cy = t1z * t2x - t1x * t2z
            cz = t1x * t2y - t1y * t2x
            acc += (rx * cx + ry * cy + rz * cz) / (r2 * math.sqrt(r2))
        partial[i] = acc
    return partial.sum() / (4.0 * math.pi)
