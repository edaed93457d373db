"""Reference elements and quadrature rules on the unit tetrahedron.

Families provided:

* nodal Lagrange ``P_k`` (continuous or broken, 1 <= k <= 4),
* Raviart-Thomas ``RT_m`` (H(div)-conforming, 0 <= m <= 2),
* Crouzeix-Raviart nonconforming P1 (face-barycenter nodes).

Quadrature is built by conical (Duffy) products of Gauss-Jacobi rules, so
any requested polynomial order is integrated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import roots_jacobi

TET_VERTICES = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)
# Local face ``l`` is opposite local vertex ``l``; vertices in ascending order.
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
TET_VOLUME = 1.0 / 6.0

_SQ3 = np.sqrt(3.0)
TET_FACE_NORMALS = np.array(
    [[1 / _SQ3, 1 / _SQ3, 1 / _SQ3], [-1, 0, 0], [0, -1, 0], [0, 0, -1]],
    dtype=float,
)

MAX_QUAD_ORDER = 8


# ---------------------------------------------------------------------------
# monomial helpers


def monomial_exponents(degree: int, homogeneous: bool = False) -> np.ndarray:
    """Exponent triples of the 3-variable monomials up to (or of) ``degree``."""
    out = []
    totals = [degree] if homogeneous else range(degree + 1)
    for t in totals:
        for a in range(t, -1, -1):
            for b in range(t - a, -1, -1):
                out.append((a, b, t - a - b))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def monomial_exponents_2d(degree: int) -> np.ndarray:
    out = []
    for t in range(degree + 1):
        for a in range(t, -1, -1):
            out.append((a, t - a))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def monomial_values(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate monomials at ``pts``; shape ``pts.shape[:-1] + (nmono,)``."""
    return np.prod(pts[..., None, :] ** exps[None, :, :], axis=-1)


def monomial_gradients(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Gradients of monomials; shape ``pts.shape[:-1] + (nmono, ndim)``."""
    ndim = exps.shape[1]
    out = np.zeros(pts.shape[:-1] + (exps.shape[0], ndim))
    for d in range(ndim):
        e = exps.copy()
        mask = e[:, d] > 0
        e[mask, d] -= 1
        vals = np.prod(pts[..., None, :] ** e[None, :, :], axis=-1)
        out[..., d] = vals * np.where(mask, exps[:, d], 0)
    return out


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference tetrahedron.

    ``points`` holds barycentric coordinates (n, 4); weights sum to the
    reference volume 1/6 and the rule is exact for polynomials of total
    degree up to ``order``.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def cartesian(self) -> np.ndarray:
        return self.points[:, 1:]


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature on the reference triangle; weights sum to 1/2."""

    points: np.ndarray  # barycentric, (n, 3)
    weights: np.ndarray
    order: int

    @property
    def cartesian(self) -> np.ndarray:
        return self.points[:, 1:]


def _gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def _jacobi01(n: int, alpha: int):
    # nodes/weights for \int_0^1 (1-t)^alpha f(t) dt
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def tet_rule(order: int) -> QuadratureRule:
    """Conical-product rule, exact for total degree <= ``order``."""
    if order < 0:
        raise ValueError("quadrature order must be non-negative")
    n = order // 2 + 1
    xi, wi = _jacobi01(n, 2)
    eta, wj = _jacobi01(n, 1)
    zeta, wk = _gauss01(n)
    X, H, Z = np.meshgrid(xi, eta, zeta, indexing="ij")
    x = X
    y = H * (1 - X)
    z = Z * (1 - X) * (1 - H)
    w = (wi[:, None, None] * wj[None, :, None] * wk[None, None, :]).ravel()
    cart = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    bary = np.column_stack([1 - cart.sum(axis=1), cart])
    return QuadratureRule(points=bary, weights=w, order=order)


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> TriangleRule:
    if order < 0:
        raise ValueError("quadrature order must be non-negative")
    n = order // 2 + 1
    xi, wi = _jacobi01(n, 1)
    eta, wj = _gauss01(n)
    X, H = np.meshgrid(xi, eta, indexing="ij")
    x = X
    y = H * (1 - X)
    w = (wi[:, None] * wj[None, :]).ravel()
    cart = np.stack([x.ravel(), y.ravel()], axis=1)
    bary = np.column_stack([1 - cart.sum(axis=1), cart])
    return TriangleRule(points=bary, weights=w, order=order)


def quadrature(order: int) -> QuadratureRule:
    """Tetrahedron rule exact for all monomials of total degree <= ``order``.

    Orders above 8 are rejected; 8 covers every bilinear form assembled by
    this package (P3 x P3 products and RT_2 mass terms).  Internal error
    oracles use :func:`tet_rule` directly when they need more.
    """
    if order > MAX_QUAD_ORDER:
        raise ValueError(f"unsupported quadrature order {order} (max {MAX_QUAD_ORDER})")
    return tet_rule(order)


# ---------------------------------------------------------------------------
# reference elements


class ReferenceElement:
    """Basis evaluators on the reference tetrahedron.

    For Lagrange/CR families ``eval`` returns scalar basis values of shape
    (npts, ndof) and ``grad`` their gradients (npts, ndof, 3).  For RT,
    ``eval`` returns vector values (npts, ndof, 3) and ``div`` the
    divergences (npts, ndof).
    """

    def __init__(self, family, degree, ndof, dof_entities, evaluator,
                 gradient=None, divergence=None, nodes=None, node_multi=None):
        self.family = family
        self.degree = degree
        self.ndof = ndof
        self.dof_entities = dof_entities
        self._eval = evaluator
        self._grad = gradient
        self._div = divergence
        self.nodes = nodes
        self.node_multi = node_multi

    def eval(self, points: np.ndarray) -> np.ndarray:
        return self._eval(np.asarray(points, dtype=float))

    def grad(self, points: np.ndarray) -> np.ndarray:
        if self._grad is None:
            raise AttributeError(f"{self.family} element has no gradient evaluator")
        return self._grad(np.asarray(points, dtype=float))

    def div(self, points: np.ndarray) -> np.ndarray:
        if self._div is None:
            raise AttributeError(f"{self.family} element has no divergence evaluator")
        return self._div(np.asarray(points, dtype=float))

    def __repr__(self):  # pragma: no cover
        return f"ReferenceElement({self.family}, degree={self.degree}, ndof={self.ndof})"


def _nodal_element(family, degree, nodes, entities, node_multi=None):
    exps = monomial_exponents(degree)
    V = monomial_values(exps, nodes)
    C = np.linalg.inv(V)

    def evaluator(pts):
        return monomial_values(exps, pts) @ C

    def gradient(pts):
        return np.einsum("...md,mj->...jd", monomial_gradients(exps, pts), C)

    return ReferenceElement(family, degree, len(nodes), entities, evaluator,
                            gradient=gradient, nodes=nodes, node_multi=node_multi)


@lru_cache(maxsize=None)
def lagrange_element(k: int) -> ReferenceElement:
    """Nodal P_k element with the standard order-k lattice nodes."""
    if not 1 <= k <= 4:
        raise ValueError(f"unsupported Lagrange degree {k} (supported: 1..4)")
    multi = []
    for a1 in range(k + 1):
        for a2 in range(k + 1 - a1):
            for a3 in range(k + 1 - a1 - a2):
                multi.append((k - a1 - a2 - a3, a1, a2, a3))
    multi = np.array(multi, dtype=np.int64)
    nodes = multi[:, 1:].astype(float) / k
    entities = []
    for m in multi:
        nz = np.nonzero(m)[0]
        if len(nz) == 1:
            entities.append(("vertex", int(nz[0]), 0))
        elif len(nz) == 2:
            entities.append(("edge", (int(nz[0]), int(nz[1])), int(m[nz[1]])))
        elif len(nz) == 3:
            zero = int(np.where(m == 0)[0][0])
            entities.append(("face", zero, (int(m[nz[1]]), int(m[nz[2]]))))
        else:
            entities.append(("interior", 0, tuple(int(v) for v in m)))
    return _nodal_element("lagrange", k, nodes, entities, node_multi=multi)


@lru_cache(maxsize=None)
def cr_element() -> ReferenceElement:
    """Crouzeix-Raviart P1 element, nodal at the four face barycenters."""
    nodes = TET_VERTICES[TET_FACES].mean(axis=1)
    entities = [("face", i, 0) for i in range(4)]
    return _nodal_element("cr", 1, nodes, entities)


def _rt_counts(m: int):
    npf = comb(m + 2, 2)          # face moments against P_m(face)
    nint = 3 * comb(m + 2, 3)     # interior moments against (P_{m-1})^3
    ndof = 4 * npf + nint
    return npf, nint, ndof


def _rt_span_values(exps_full, exps_hom, pts):
    """Vector values of the RT spanning set {e_d * mono} | {x * mono_hom}."""
    nm = len(exps_full)
    nh = len(exps_hom)
    vals = np.zeros(pts.shape[:-1] + (3 * nm + nh, 3))
    Vm = monomial_values(exps_full, pts)
    for d in range(3):
        vals[..., d * nm:(d + 1) * nm, d] = Vm
    if nh:
        Vh = monomial_values(exps_hom, pts)
        vals[..., 3 * nm:, :] = Vh[..., :, None] * pts[..., None, :]
    return vals


def _rt_span_divs(exps_full, exps_hom, pts, m):
    nm = len(exps_full)
    nh = len(exps_hom)
    divs = np.zeros(pts.shape[:-1] + (3 * nm + nh,))
    G = monomial_gradients(exps_full, pts)
    for d in range(3):
        divs[..., d * nm:(d + 1) * nm] = G[..., d]
    if nh:
        # div(x * q) = (3 + m) q for q homogeneous of degree m
        divs[..., 3 * nm:] = (3 + m) * monomial_values(exps_hom, pts)
    return divs


@lru_cache(maxsize=None)
def rt_element(m: int) -> ReferenceElement:
    """Raviart-Thomas element of index ``m`` on the reference tetrahedron.

    Local space (P_m)^3 + x * \\tilde P_m; degrees of freedom are normal
    moments against P_m on each face (outward normals, monomials in the
    barycentric coordinates of the two lowest-index face vertices) plus
    interior moments against (P_{m-1})^3.
    """
    if not 0 <= m <= 2:
        raise ValueError(f"unsupported Raviart-Thomas index {m} (supported: 0..2)")
    npf, nint, ndof = _rt_counts(m)
    exps_full = monomial_exponents(m)
    exps_hom = monomial_exponents(m, homogeneous=True)
    face_exps = monomial_exponents_2d(m)

    A = np.zeros((ndof, ndof))
    entities = []
    tri = triangle_rule(2 * m + 2)
    row = 0
    for lf in range(4):
        fv = TET_VERTICES[TET_FACES[lf]]
        e1, e2 = fv[1] - fv[0], fv[2] - fv[0]
        area = 0.5 * np.linalg.norm(np.cross(e1, e2))
        pts = fv[0] + tri.cartesian[:, :1] * e1 + tri.cartesian[:, 1:2] * e2
        # face barycentric pair (lambda_a, lambda_b) for the first two vertices
        lam = np.column_stack([tri.points[:, 0], tri.points[:, 1]])
        qvals = monomial_values(face_exps, lam)
        span = _rt_span_values(exps_full, exps_hom, pts)
        pn = span @ TET_FACE_NORMALS[lf]
        A[row:row + npf] = np.einsum("q,qj,qs->js", 2 * area * tri.weights, qvals, pn)
        entities.extend(("face", lf, j) for j in range(npf))
        row += npf
    if nint:
        rule = tet_rule(2 * m + 2)
        pts = rule.cartesian
        span = _rt_span_values(exps_full, exps_hom, pts)
        mono = monomial_values(monomial_exponents(m - 1), pts)
        for d in range(3):
            blk = np.einsum("q,qj,qs->js", rule.weights, mono, span[..., d])
            A[row:row + blk.shape[0]] = blk
            entities.extend(("interior", d, j) for j in range(blk.shape[0]))
            row += blk.shape[0]
    C = np.linalg.inv(A)

    def evaluator(pts):
        return np.einsum("...sd,sj->...jd", _rt_span_values(exps_full, exps_hom, pts), C)

    def divergence(pts):
        return np.einsum("...s,sj->...j", _rt_span_divs(exps_full, exps_hom, pts, m), C)

    return ReferenceElement("rt", m, ndof, entities, evaluator, divergence=divergence)


# ---------------------------------------------------------------------------
# affine / Piola mapping helpers


def affine_map(B: np.ndarray, c: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ np.asarray(B, dtype=float).T + np.asarray(c, dtype=float)


def piola_values(B: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Contravariant Piola transform of vector values: v -> B v / det B."""
    B = np.asarray(B, dtype=float)
    return values @ B.T / np.linalg.det(B)
