"""Sparse assembly of the bilinear and linear forms.

Every vector/tensor form is assembled from a scalar kernel and expanded
by Kronecker products over components, so all component blocks are
bit-identical.  Quadrature orders are chosen per form to integrate the
polynomial integrands exactly (stiffness 2k-2, mass 2k, RT mass 2m+2,
div/grad couplings k+d); element loops run in fixed chunks, which keeps
assembly deterministic and memory bounded.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse

from .elements import tet_rule
from .spaces import FieldVector, FunctionSpace, _jacobians

_CHUNK = 512


def _chunks(n):
    for start in range(0, n, _CHUNK):
        yield np.arange(start, min(start + _CHUNK, n))


def _scatter(rows_sp, cols_sp, build_local, nrows, ncols):
    """Accumulate local matrices into a CSR matrix on the full scalar dofs."""
    nt = len(rows_sp.mesh.tets)
    data, ri, ci = [], [], []
    for eids in _chunks(nt):
        loc = build_local(eids)                       # (ne, nr, nc)
        r = rows_sp.elem_dofs[eids]
        c = cols_sp.elem_dofs[eids]
        ne, nr, nc = loc.shape
        ri.append(np.repeat(r, nc, axis=1).reshape(-1))
        ci.append(np.tile(c, (1, nr)).reshape(-1))
        data.append(loc.reshape(-1))
    mat = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
        shape=(nrows, ncols))
    out = mat.tocsr()
    out.sum_duplicates()
    return out


def _reduce(mat, rows_sp=None, cols_sp=None):
    if rows_sp is not None and rows_sp.n_free_scalar != rows_sp.n_scalar:
        mat = mat[rows_sp.free_scalar]
    if cols_sp is not None and cols_sp.n_free_scalar != cols_sp.n_scalar:
        mat = mat[:, cols_sp.free_scalar]
    return mat.tocsr()


def _expand(mat, components):
    if components == 1:
        return mat.tocsr()
    return sparse.kron(sparse.eye(components, format="csr"), mat, format="csr")


def _detJ(mesh, eids):
    return 6.0 * np.abs(mesh.tet_volumes[eids])


def _poly_degree(space):
    # the enriched CR basis is quadratic although the space is indexed by 1
    return space.degree + 1 if space.family == "ecr" else space.degree


# ---------------------------------------------------------------------------
# scalar kernels


def _scalar_stiffness(space, order=None):
    mesh = space.mesh
    rule = tet_rule(order if order is not None
                    else max(2 * _poly_degree(space) - 2, 0))

    def local(eids):
        g = space.scalar_grads(eids, rule.points)     # (ne, nq, nloc, 3)
        return np.einsum("q,eqla,eqma,e->elm", rule.weights, g, g,
                         _detJ(mesh, eids))

    n = space.n_scalar
    return _scatter(space, space, local, n, n)


def _scalar_mass(space, order=None):
    mesh = space.mesh
    rule = tet_rule(order if order is not None else 2 * _poly_degree(space))

    def local(eids):
        v = space.scalar_values(eids, rule.points)
        if space.family == "rt":
            return np.einsum("q,eqld,eqmd,e->elm", rule.weights, v, v,
                             _detJ(mesh, eids))
        return np.einsum("q,eql,eqm,e->elm", rule.weights, v, v,
                         _detJ(mesh, eids))

    n = space.n_scalar
    return _scatter(space, space, local, n, n)


def _scalar_mixed_mass(rows_sp, cols_sp, order=None):
    mesh = rows_sp.mesh
    rule = tet_rule(order if order is not None
                    else _poly_degree(rows_sp) + _poly_degree(cols_sp))

    def local(eids):
        a = rows_sp.scalar_values(eids, rule.points)
        b = cols_sp.scalar_values(eids, rule.points)
        return np.einsum("q,eql,eqm,e->elm", rule.weights, a, b,
                         _detJ(mesh, eids))

    return _scatter(rows_sp, cols_sp, local, rows_sp.n_scalar, cols_sp.n_scalar)


def _scalar_grad_block(test_sp, trial_sp, component, order=None):
    """(d trial / d x_component, test) with a broken test space."""
    mesh = test_sp.mesh
    rule = tet_rule(order if order is not None
                    else _poly_degree(test_sp) + max(_poly_degree(trial_sp) - 1, 0))

    def local(eids):
        g = trial_sp.scalar_grads(eids, rule.points)[..., component]
        v = test_sp.scalar_values(eids, rule.points)
        return np.einsum("q,eql,eqm,e->elm", rule.weights, v, g,
                         _detJ(mesh, eids))

    return _scatter(test_sp, trial_sp, local, test_sp.n_scalar, trial_sp.n_scalar)


def _scalar_div_rt_block(test_sp, rt_sp, order=None):
    """(div rt_trial, test) with a broken test space."""
    mesh = test_sp.mesh
    rule = tet_rule(order if order is not None
                    else test_sp.degree + rt_sp.degree)

    def local(eids):
        dv = rt_sp.scalar_divs(eids, rule.points)
        v = test_sp.scalar_values(eids, rule.points)
        return np.einsum("q,eql,eqm,e->elm", rule.weights, v, dv,
                         _detJ(mesh, eids))

    return _scatter(test_sp, rt_sp, local, test_sp.n_scalar, rt_sp.n_scalar)


# ---------------------------------------------------------------------------
# public forms


def assemble_stiffness(V: FunctionSpace, order=None) -> sparse.csr_matrix:
    """(grad u, grad v) on a Lagrange or Crouzeix-Raviart space (reduced)."""
    A = _reduce(_scalar_stiffness(V, order), V, V)
    return _expand(A, V.components)


def assemble_mass(space: FunctionSpace, order=None) -> sparse.csr_matrix:
    """(u, v) on any space (reduced)."""
    M = _reduce(_scalar_mass(space, order), space, space)
    return _expand(M, space.components)


def assemble_div_pressure(V: FunctionSpace, Q: FunctionSpace,
                          order=None) -> sparse.csr_matrix:
    """B[q, v] = (div v, q); rows on the broken scalar space Q (full), columns
    on the vector space V (reduced)."""
    if V.components != 3 or Q.components != 1:
        raise ValueError("expects vector velocity and scalar pressure spaces")
    blocks = [_reduce(_scalar_grad_block(Q, V, d, order), None, V)
              for d in range(3)]
    return sparse.hstack(blocks, format="csr")


def assemble_rt_mass(RT: FunctionSpace, order=None) -> sparse.csr_matrix:
    """(p, q) on an RT space; block-diagonal over tensor rows."""
    if RT.family != "rt":
        raise ValueError("expects an RT space")
    M = _scalar_mass(RT, order if order is not None else 2 * RT.degree + 2)
    return _expand(M, RT.components)


def assemble_div_rt(RT: FunctionSpace, X: FunctionSpace,
                    order=None) -> sparse.csr_matrix:
    """D[x, p] = (div p, x) with rows on vector X and columns on tensor RT."""
    if RT.components != X.components:
        raise ValueError("row count of RT must match components of X")
    D = _scalar_div_rt_block(X, RT, order)
    return _expand(D, X.components)


def assemble_grad_coupling(U: FunctionSpace, X: FunctionSpace,
                           order=None) -> sparse.csr_matrix:
    """G[x, psi] = (grad psi, x) with rows on vector X, columns on scalar U."""
    if U.components != 1 or X.components != 3:
        raise ValueError("expects scalar potential and vector broken spaces")
    blocks = [_scalar_grad_block(X, U, d, order) for d in range(3)]
    return sparse.vstack(blocks, format="csr")


def assemble_mixed_mass(V: FunctionSpace, X: FunctionSpace,
                        order=None) -> sparse.csr_matrix:
    """W[v, x] = (v, x) between two value-mapped spaces of equal components;
    rows reduced, columns full."""
    if V.components != X.components:
        raise ValueError("component mismatch")
    W = _reduce(_scalar_mixed_mass(V, X, order), V, None)
    return _expand(W, V.components)


def assemble_load(f, V: FunctionSpace, order=None) -> np.ndarray:
    """Load vector (f, v_i) for a callable ``f(points) -> (..., components)``."""
    mesh = V.mesh
    rule = tet_rule(order if order is not None else 2 * V.degree + 2)
    nt = len(mesh.tets)
    out = np.zeros((V.components, V.n_scalar))
    corners = mesh.vertices[mesh.tets]
    for eids in _chunks(nt):
        pts = np.einsum("qk,eki->eqi", rule.points, corners[eids])
        fv = np.asarray(f(pts.reshape(-1, 3)), dtype=float)
        fv = fv.reshape(len(eids), len(rule.weights), -1)
        if fv.shape[2] != V.components:
            raise ValueError(f"f has {fv.shape[2]} components, expected {V.components}")
        v = V.scalar_values(eids, rule.points)
        loc = np.einsum("q,eql,eqc,e->ecl", rule.weights, v, fv,
                        _detJ(mesh, eids))
        for c in range(V.components):
            np.add.at(out[c], V.elem_dofs[eids].reshape(-1), loc[:, c].reshape(-1))
    return np.concatenate([out[c, V.free_scalar] for c in range(V.components)])


# ---------------------------------------------------------------------------
# quadrature-based functionals of fields


def integrate(mesh, order, integrand) -> float:
    """Integrate ``integrand(eids, bary, X) -> (ne, nq)`` over the mesh."""
    rule = tet_rule(order)
    total = 0.0
    corners = mesh.vertices[mesh.tets]
    for eids in _chunks(len(mesh.tets)):
        X = np.einsum("qk,eki->eqi", rule.points, corners[eids])
        vals = integrand(eids, rule.points, X)
        total += np.einsum("q,eq,e->", rule.weights, vals, _detJ(mesh, eids))
    return float(total)


def l2_norm(field: FieldVector, order=None) -> float:
    sp = field.space
    order = order if order is not None else 2 * sp.degree + (2 if sp.family == "rt" else 0)

    def integrand(eids, bary, X):
        v = field.values(eids, bary)
        return (v**2).sum(axis=tuple(range(2, v.ndim)))

    return np.sqrt(max(integrate(sp.mesh, order, integrand), 0.0))


def l2_diff(field: FieldVector, fn, order: int) -> float:
    """L2 norm of (field - fn); ``fn(points)`` matches the field's value shape."""
    sp = field.space

    def integrand(eids, bary, X):
        v = field.values(eids, bary)
        fv = np.asarray(fn(X.reshape(-1, 3)), dtype=float).reshape(v.shape)
        return ((v - fv)**2).sum(axis=tuple(range(2, v.ndim)))

    return np.sqrt(max(integrate(sp.mesh, order, integrand), 0.0))


def h1_semi_diff(field: FieldVector, grad_fn, order: int) -> float:
    """Energy-seminorm distance ||grad field - G|| for vector fields;
    ``grad_fn(points) -> (n, components, 3)``."""
    sp = field.space

    def integrand(eids, bary, X):
        g = field.grads(eids, bary)
        gv = np.asarray(grad_fn(X.reshape(-1, 3)), dtype=float).reshape(g.shape)
        return ((g - gv)**2).sum(axis=(2, 3))

    return np.sqrt(max(integrate(sp.mesh, order, integrand), 0.0))


def flux_gap_norm(flux: FieldVector, vel: FieldVector, order=None) -> float:
    """|| p - grad u || for a tensor RT field p and a vector velocity u."""
    mesh = flux.space.mesh
    order = order if order is not None else 2 * max(flux.space.degree + 1,
                                                    vel.space.degree)

    def integrand(eids, bary, X):
        p = flux.values(eids, bary)                   # (ne, nq, rows, 3)
        g = vel.grads(eids, bary)                     # (ne, nq, comp, 3)
        return ((p - g)**2).sum(axis=(2, 3))

    return np.sqrt(max(integrate(mesh, order, integrand), 0.0))
