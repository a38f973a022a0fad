"""Small 3-vector helpers on top of numpy.

Vectors are plain float64 arrays of shape (3,); batches are (n, 3).
Positions are meters, B tesla, E volt/meter unless a caller says
otherwise.
"""

from __future__ import annotations

import numpy as np

Vec3 = np.ndarray


def vec(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=float)


def norm(v) -> float:
    return float(np.linalg.norm(v))


def unit(v) -> Vec3:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return np.asarray(v, dtype=float) / n


def is_unit(v, tol: float = 1e-12) -> bool:
    return abs(np.linalg.norm(v) - 1.0) <= tol


def orthonormal_frame(n) -> tuple[Vec3, Vec3, Vec3]:
    """Right-handed frame (e1, e2, n) with n the given unit vector.

    The in-plane pair is chosen deterministically from the smallest
    component of n, so equal inputs give identical frames.
    """
    n = unit(n)
    k = int(np.argmin(np.abs(n)))
    helper = np.zeros(3)
    helper[k] = 1.0
    e1 = unit(np.cross(helper, n))
    e2 = np.cross(n, e1)
    return e1, e2, n


def rotate_about(v, axis, angle: float) -> Vec3:
    """Rodrigues rotation of v about a unit axis."""
    axis = unit(axis)
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)
