"""Polynomial manufactured solution with exactly divergence-free velocity.

The velocity is the curl of (psi, psi, psi) with
psi = (x y z (1-x)(1-y)(1-z))^2, which vanishes to second order on the
boundary of the unit cube, so u is an admissible Stokes solution for the
load f = -laplace(u).  Degrees: u is 11, grad u is 10, f is 9.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp

VELOCITY_DEGREE = 11
GRAD_DEGREE = 10
LOAD_DEGREE = 9


@lru_cache(maxsize=1)
def _callables():
    x, y, z = sp.symbols("x y z")
    psi = (x * y * z * (1 - x) * (1 - y) * (1 - z)) ** 2
    u = sp.Matrix([sp.diff(psi, y) - sp.diff(psi, z),
                   sp.diff(psi, z) - sp.diff(psi, x),
                   sp.diff(psi, x) - sp.diff(psi, y)])

    def lap(g):
        return sp.diff(g, x, 2) + sp.diff(g, y, 2) + sp.diff(g, z, 2)

    f = sp.Matrix([-lap(u[i]) for i in range(3)])
    grad = sp.Matrix([[sp.diff(u[i], v) for v in (x, y, z)] for i in range(3)])
    u_fn = sp.lambdify((x, y, z), u.T.tolist()[0], "numpy")
    f_fn = sp.lambdify((x, y, z), f.T.tolist()[0], "numpy")
    g_fn = sp.lambdify((x, y, z), grad.tolist(), "numpy")
    return u_fn, f_fn, g_fn


def _stack3(fn, pts):
    pts = np.asarray(pts, dtype=float)
    vals = fn(pts[..., 0], pts[..., 1], pts[..., 2])
    return np.stack([np.broadcast_to(v, pts.shape[:-1]) for v in vals], axis=-1)


def velocity(pts: np.ndarray) -> np.ndarray:
    """Exact velocity, shape ``pts.shape[:-1] + (3,)``."""
    return _stack3(_callables()[0], pts)


def load(pts: np.ndarray) -> np.ndarray:
    """Forcing term -laplace(u), shape ``pts.shape[:-1] + (3,)``."""
    return _stack3(_callables()[1], pts)


def velocity_grad(pts: np.ndarray) -> np.ndarray:
    """Exact velocity gradient, shape ``pts.shape[:-1] + (3, 3)`` with
    entry [..., i, j] = d u_i / d x_j."""
    pts = np.asarray(pts, dtype=float)
    rows = _callables()[2](pts[..., 0], pts[..., 1], pts[..., 2])
    out = np.empty(pts.shape[:-1] + (3, 3))
    for i in range(3):
        for j in range(3):
            out[..., i, j] = np.broadcast_to(rows[i][j], pts.shape[:-1])
    return out
