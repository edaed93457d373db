"""Global finite element spaces on a tetrahedral mesh.

Families: continuous Lagrange ("lagrange"), broken Lagrange
("discontinuous"), Raviart-Thomas ("rt", H(div)-conforming) and
Crouzeix-Raviart ("cr").  Vector spaces store ``components`` copies of a
scalar space in component-major (block) coefficient layout; a tensor RT
space is three independent RT row spaces.

Continuous Lagrange degrees of freedom are deduplicated through exact
integer node keys derived from the mesh lattice, so shared entities map to
identical global indices without floating-point matching.  RT bases are
constructed per element by solving the local moment system against
globally oriented face functionals (sorted-vertex normals), which makes
normal traces match across interior faces by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb

import numpy as np

from .elements import (
    TET_FACES,
    cr_element,
    lagrange_element,
    monomial_exponents,
    monomial_exponents_2d,
    monomial_gradients,
    monomial_values,
    rt_element,
    tet_rule,
    triangle_rule,
)
from .mesh import Mesh


class SpaceError(ValueError):
    """Unsupported family/degree combination or invalid space usage."""


def _jacobians(mesh: Mesh, eids: np.ndarray):
    v = mesh.vertices[mesh.tets[eids]]
    J = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # columns are edge vectors
    detJ = np.linalg.det(J)
    return J, detJ


class FunctionSpace:
    """Scalar-structured space replicated over ``components``.

    Coefficients of fields live on the free (unconstrained) dofs only, in
    component-major order; ``dim`` is the total free count.
    """

    family = "abstract"

    def __init__(self, mesh: Mesh, degree: int, components: int, constraint: str):
        if constraint not in ("none", "zero_boundary", "zero_mean"):
            raise SpaceError(f"unknown constraint {constraint!r}")
        if components not in (1, 3):
            raise SpaceError("components must be 1 or 3")
        self.mesh = mesh
        self.degree = degree
        self.components = components
        self.constraint = constraint
        # subclasses fill in:
        self.n_scalar = 0
        self.elem_dofs = None           # (nt, nloc) global scalar dof per element
        self.node_coords = None         # (n_scalar, 3) or None
        self._boundary_scalar = np.empty(0, dtype=np.int64)

    def _finalize(self):
        if self.constraint == "zero_boundary":
            mask = np.ones(self.n_scalar, dtype=bool)
            mask[self._boundary_scalar] = False
            self.free_scalar = np.nonzero(mask)[0]
        else:
            self.free_scalar = np.arange(self.n_scalar)
        self.scalar_to_free = -np.ones(self.n_scalar, dtype=np.int64)
        self.scalar_to_free[self.free_scalar] = np.arange(len(self.free_scalar))

    @property
    def n_free_scalar(self) -> int:
        return len(self.free_scalar)

    @property
    def dim(self) -> int:
        return self.components * self.n_free_scalar

    @property
    def n_local(self) -> int:
        return self.elem_dofs.shape[1]

    # ---- local basis tabulation (scalar structure) ----------------------

    def scalar_values(self, eids, bary):
        """Physical basis values; (ne, nq, nloc) or (ne, nq, nloc, 3) for RT."""
        raise NotImplementedError

    def scalar_grads(self, eids, bary):
        raise NotImplementedError

    def scalar_divs(self, eids, bary):
        raise NotImplementedError

    def __repr__(self):  # pragma: no cover
        return (f"{type(self).__name__}(degree={self.degree}, "
                f"components={self.components}, constraint={self.constraint!r}, "
                f"dim={self.dim})")


class _MappedNodalSpace(FunctionSpace):
    """Common machinery for value-mapped (non-Piola) nodal families."""

    def __init__(self, mesh, degree, components, constraint, ref):
        super().__init__(mesh, degree, components, constraint)
        self.ref = ref

    def scalar_values(self, eids, bary):
        vals = self.ref.eval(np.asarray(bary)[:, 1:])
        return np.broadcast_to(vals, (len(eids),) + vals.shape)

    def scalar_grads(self, eids, bary):
        gref = self.ref.grad(np.asarray(bary)[:, 1:])          # (nq, nloc, 3)
        J, _ = _jacobians(self.mesh, np.asarray(eids))
        JinvT = np.swapaxes(np.linalg.inv(J), 1, 2)
        return np.einsum("eab,qlb->eqla", JinvT, gref)

    def interpolate(self, f) -> "FieldVector":
        """Nodal interpolation of a callable ``f(points) -> (..., components)``."""
        vals = np.asarray(f(self.node_coords), dtype=float)
        if self.components == 1:
            vals = vals.reshape(self.n_scalar, 1)
        coeffs = np.concatenate([vals[self.free_scalar, c]
                                 for c in range(self.components)])
        return FieldVector(self, coeffs)


class LagrangeSpace(_MappedNodalSpace):
    family = "lagrange"

    def __init__(self, mesh, degree, components=1, constraint="none"):
        if constraint == "zero_mean":
            raise SpaceError("zero_mean is handled by multiplier rows, not spaces")
        ref = lagrange_element(degree)
        super().__init__(mesh, degree, components, constraint, ref)
        multi = ref.node_multi                              # (nloc, 4)
        lat = mesh.lattice[mesh.tets]                       # (nt, 4, 3)
        keys = np.einsum("la,eax->elx", multi, lat)         # ints, coord * degree
        flat = keys.reshape(-1, 3)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        self.n_scalar = len(uniq)
        self.elem_dofs = inv.reshape(len(mesh.tets), -1)
        self.node_coords = uniq * (mesh.lattice_unit / degree)
        bset = set()
        for t, lf in mesh.boundary_faces:
            on_face = np.nonzero(multi[:, lf] == 0)[0]
            bset.update(int(d) for d in self.elem_dofs[t, on_face])
        self._boundary_scalar = np.array(sorted(bset), dtype=np.int64)
        self._finalize()


class DiscontinuousSpace(_MappedNodalSpace):
    family = "discontinuous"

    def __init__(self, mesh, degree, components=1, constraint="none"):
        if constraint == "zero_boundary":
            raise SpaceError("zero_boundary is not meaningful for broken spaces")
        ref = lagrange_element(degree) if degree >= 1 else _p0_element()
        super().__init__(mesh, degree, components, constraint, ref)
        nt = len(mesh.tets)
        nloc = ref.ndof
        self.n_scalar = nt * nloc
        self.elem_dofs = np.arange(nt * nloc, dtype=np.int64).reshape(nt, nloc)
        v = mesh.vertices[mesh.tets]
        bary4 = np.column_stack([1 - ref.nodes.sum(axis=1), ref.nodes])
        self.node_coords = np.einsum("la,eax->elx", bary4, v).reshape(-1, 3)
        self._finalize()


def _p0_element():
    from .elements import ReferenceElement

    nodes = np.array([[0.25, 0.25, 0.25]])

    def evaluator(pts):
        return np.ones(pts.shape[:-1] + (1,))

    def gradient(pts):
        return np.zeros(pts.shape[:-1] + (1, 3))

    return ReferenceElement("lagrange", 0, 1, [("interior", 0, 0)], evaluator,
                            gradient=gradient, nodes=nodes)


class CRSpace(_MappedNodalSpace):
    family = "cr"

    def __init__(self, mesh, degree=1, components=1, constraint="none"):
        if degree != 1:
            raise SpaceError("Crouzeix-Raviart is only defined for degree 1")
        super().__init__(mesh, 1, components, constraint, cr_element())
        fd = mesh.face_data
        self.n_scalar = len(fd.faces)
        self.elem_dofs = fd.elem_faces.copy()
        self.node_coords = mesh.vertices[fd.faces].mean(axis=1)
        self._boundary_scalar = np.nonzero(fd.is_boundary)[0]
        self._finalize()


class ECRSpace(FunctionSpace):
    """Bubble-enriched Crouzeix-Raviart space: P1 + span{|x - c|^2} per
    element, with face-mean dofs (shared across faces) followed by one
    cell-mean dof per element.  Continuity holds in the mean across faces,
    which is the nonconforming coupling used for guaranteed eigenvalue
    lower bounds."""

    family = "ecr"

    def __init__(self, mesh, degree=1, components=1, constraint="none"):
        if degree != 1:
            raise SpaceError("the enriched Crouzeix-Raviart space has degree 1")
        super().__init__(mesh, 1, components, constraint)
        fd = mesh.face_data
        nt, nf = len(mesh.tets), len(fd.faces)
        self.n_scalar = nf + nt
        self.elem_dofs = np.concatenate(
            [fd.elem_faces, nf + np.arange(nt)[:, None]], axis=1)
        self._boundary_scalar = np.nonzero(fd.is_boundary)[0]
        self._finalize()
        self._build_local_bases()

    def _monomials(self, xc):
        shape = xc.shape[:-1]
        return np.concatenate([np.ones(shape + (1,)), xc,
                               (xc**2).sum(-1, keepdims=True)], axis=-1)

    def _monomial_grads(self, xc):
        out = np.zeros(xc.shape[:-1] + (5, 3))
        for d in range(3):
            out[..., 1 + d, d] = 1.0
            out[..., 4, d] = 2 * xc[..., d]
        return out

    def _build_local_bases(self):
        mesh = self.mesh
        fd = mesh.face_data
        verts, tets = mesh.vertices, mesh.tets
        corners = verts[tets]
        self._centers = corners.mean(axis=1)
        tri = triangle_rule(4)
        rule = tet_rule(4)
        nt = len(tets)
        D = np.zeros((nt, 5, 5))
        for lf in range(4):
            fverts = verts[fd.faces[fd.elem_faces[:, lf]]]
            e1 = fverts[:, 1] - fverts[:, 0]
            e2 = fverts[:, 2] - fverts[:, 0]
            pts = (fverts[:, None, 0] + tri.cartesian[None, :, :1] * e1[:, None]
                   + tri.cartesian[None, :, 1:2] * e2[:, None])
            mono = self._monomials(pts - self._centers[:, None])
            D[:, lf] = 2 * np.einsum("q,eqm->em", tri.weights, mono)
        pts = np.einsum("qk,eki->eqi", rule.points, corners)
        mono = self._monomials(pts - self._centers[:, None])
        D[:, 4] = 6 * np.einsum("q,eqm->em", rule.weights, mono)
        self._coeffs = np.linalg.inv(D)

    def scalar_values(self, eids, bary):
        eids = np.asarray(eids)
        corners = self.mesh.vertices[self.mesh.tets[eids]]
        pts = np.einsum("qk,eki->eqi", np.asarray(bary), corners)
        mono = self._monomials(pts - self._centers[eids, None])
        return np.einsum("eqm,emj->eqj", mono, self._coeffs[eids])

    def scalar_grads(self, eids, bary):
        eids = np.asarray(eids)
        corners = self.mesh.vertices[self.mesh.tets[eids]]
        pts = np.einsum("qk,eki->eqi", np.asarray(bary), corners)
        g = self._monomial_grads(pts - self._centers[eids, None])
        return np.einsum("eqmd,emj->eqjd", g, self._coeffs[eids])


class RTSpace(FunctionSpace):
    """H(div)-conforming Raviart-Thomas space of index ``degree``.

    Scalar dofs: ``npf`` normal moments per mesh face (polynomials in the
    barycentric coordinates of the two lowest-numbered face vertices,
    normal fixed by the sorted vertex order) followed by interior moments
    per element.  ``components=3`` stacks three such row spaces (tensor).
    """

    family = "rt"

    def __init__(self, mesh, degree, components=1, constraint="none"):
        if not 0 <= degree <= 2:
            raise SpaceError(f"unsupported Raviart-Thomas index {degree}")
        if constraint != "none":
            raise SpaceError("constraints are not supported on RT spaces")
        super().__init__(mesh, degree, components, constraint)
        m = degree
        self.npf = comb(m + 2, 2)
        self.nint = 3 * comb(m + 2, 3)
        fd = mesh.face_data
        nt, nf = len(mesh.tets), len(fd.faces)
        self.n_scalar = nf * self.npf + nt * self.nint
        dofs = np.empty((nt, 4 * self.npf + self.nint), dtype=np.int64)
        for lf in range(4):
            base = fd.elem_faces[:, lf] * self.npf
            dofs[:, lf * self.npf:(lf + 1) * self.npf] = (
                base[:, None] + np.arange(self.npf)[None, :])
        if self.nint:
            base = nf * self.npf + np.arange(nt) * self.nint
            dofs[:, 4 * self.npf:] = base[:, None] + np.arange(self.nint)[None, :]
        self.elem_dofs = dofs
        self._finalize()
        self._exps_full = monomial_exponents(m)
        self._exps_hom = monomial_exponents(m, homogeneous=True)
        self._face_exps = monomial_exponents_2d(m)
        self._build_local_bases()

    # -- local dual solve against the global functionals ------------------

    def _span_values(self, xs):
        nm, nh = len(self._exps_full), len(self._exps_hom)
        vals = np.zeros(xs.shape[:-1] + (3 * nm + nh, 3))
        Vm = monomial_values(self._exps_full, xs)
        for d in range(3):
            vals[..., d * nm:(d + 1) * nm, d] = Vm
        if nh:
            Vh = monomial_values(self._exps_hom, xs)
            vals[..., 3 * nm:, :] = Vh[..., :, None] * xs[..., None, :]
        return vals

    def _span_divs(self, xs, scale):
        nm, nh = len(self._exps_full), len(self._exps_hom)
        divs = np.zeros(xs.shape[:-1] + (3 * nm + nh,))
        G = monomial_gradients(self._exps_full, xs)
        for d in range(3):
            divs[..., d * nm:(d + 1) * nm] = G[..., d]
        if nh:
            divs[..., 3 * nm:] = (3 + self.degree) * monomial_values(self._exps_hom, xs)
        return divs / scale[..., None]

    def _build_local_bases(self):
        mesh = self.mesh
        fd = mesh.face_data
        verts = mesh.vertices
        tets = mesh.tets
        nt = len(tets)
        ndof = self.n_local
        m = self.degree

        corners = verts[tets]
        self._centers = corners.mean(axis=1)
        self._scales = np.max(np.linalg.norm(
            corners - self._centers[:, None, :], axis=2), axis=1)

        A = np.zeros((nt, ndof, ndof))
        tri = triangle_rule(2 * m + 2)
        row = 0
        for lf in range(4):
            fids = fd.elem_faces[:, lf]
            fverts = verts[fd.faces[fids]]                 # (nt, 3, 3), sorted order
            e1 = fverts[:, 1] - fverts[:, 0]
            e2 = fverts[:, 2] - fverts[:, 0]
            cr = np.cross(e1, e2)
            area2 = np.linalg.norm(cr, axis=1)             # = 2 * area
            normal = cr / area2[:, None]
            pts = (fverts[:, None, 0]
                   + tri.cartesian[None, :, :1] * e1[:, None]
                   + tri.cartesian[None, :, 1:2] * e2[:, None])
            xs = (pts - self._centers[:, None]) / self._scales[:, None, None]
            span = self._span_values(xs)                   # (nt, nq, nspan, 3)
            pn = np.einsum("eqsd,ed->eqs", span, normal)
            lam = np.column_stack([tri.points[:, 0], tri.points[:, 1]])
            qv = monomial_values(self._face_exps, lam)     # (nq, npf)
            A[:, row:row + self.npf] = np.einsum(
                "q,e,qj,eqs->ejs", tri.weights, area2, qv, pn)
            row += self.npf
        if self.nint:
            rule = tet_rule(2 * m + 2)
            bary = rule.points
            pts = np.einsum("qk,eki->eqi", bary, corners)
            xs = (pts - self._centers[:, None]) / self._scales[:, None, None]
            span = self._span_values(xs)
            mono = monomial_values(monomial_exponents(m - 1), xs)
            detJ = 6.0 * np.abs(mesh.tet_volumes)
            nmono = mono.shape[-1]
            for d in range(3):
                A[:, row:row + nmono] = np.einsum(
                    "q,e,eqj,eqs->ejs", rule.weights, detJ, mono, span[..., d])
                row += nmono
        self._coeffs = np.linalg.inv(A)

    def scalar_values(self, eids, bary):
        eids = np.asarray(eids)
        corners = self.mesh.vertices[self.mesh.tets[eids]]
        pts = np.einsum("qk,eki->eqi", np.asarray(bary), corners)
        xs = (pts - self._centers[eids, None]) / self._scales[eids, None, None]
        span = self._span_values(xs)
        return np.einsum("eqsd,esj->eqjd", span, self._coeffs[eids])

    def scalar_divs(self, eids, bary):
        eids = np.asarray(eids)
        corners = self.mesh.vertices[self.mesh.tets[eids]]
        pts = np.einsum("qk,eki->eqi", np.asarray(bary), corners)
        xs = (pts - self._centers[eids, None]) / self._scales[eids, None, None]
        divs = self._span_divs(xs, self._scales[eids, None])
        return np.einsum("eqs,esj->eqj", divs, self._coeffs[eids])

    def interpolate(self, f) -> "FieldVector":
        """Interpolate ``f(points) -> (..., 3)`` (one row) or
        ``(..., components, 3)`` via the moment functionals."""
        mesh = self.mesh
        fd = mesh.face_data
        m = self.degree
        rows = self.components
        dofs = np.zeros((rows, self.n_scalar))
        tri = triangle_rule(max(2 * m + 2, 6))

        fverts = mesh.vertices[fd.faces]
        e1 = fverts[:, 1] - fverts[:, 0]
        e2 = fverts[:, 2] - fverts[:, 0]
        cr = np.cross(e1, e2)
        area2 = np.linalg.norm(cr, axis=1)
        normal = cr / area2[:, None]
        pts = (fverts[:, None, 0] + tri.cartesian[None, :, :1] * e1[:, None]
               + tri.cartesian[None, :, 1:2] * e2[:, None])
        fv = np.asarray(f(pts.reshape(-1, 3)), dtype=float)
        fv = fv.reshape(pts.shape[:2] + ((rows, 3) if rows > 1 else (3,)))
        if rows == 1:
            fv = fv[:, :, None, :]
        pn = np.einsum("fqrd,fd->fqr", fv, normal)
        lam = np.column_stack([tri.points[:, 0], tri.points[:, 1]])
        qv = monomial_values(self._face_exps, lam)
        face_dofs = np.einsum("q,f,qj,fqr->rfj", tri.weights, area2, qv, pn)
        dofs[:, :len(fd.faces) * self.npf] = face_dofs.reshape(rows, -1)

        if self.nint:
            rule = tet_rule(max(2 * m + 2, 6))
            corners = mesh.vertices[mesh.tets]
            pts = np.einsum("qk,eki->eqi", rule.points, corners)
            xs = (pts - self._centers[:, None]) / self._scales[:, None, None]
            fv = np.asarray(f(pts.reshape(-1, 3)), dtype=float)
            fv = fv.reshape(pts.shape[:2] + ((rows, 3) if rows > 1 else (3,)))
            if rows == 1:
                fv = fv[:, :, None, :]
            mono = monomial_values(monomial_exponents(m - 1), xs)
            detJ = 6.0 * np.abs(mesh.tet_volumes)
            blocks = [np.einsum("q,e,eqj,eqr->erj", rule.weights, detJ, mono,
                                fv[..., d]) for d in range(3)]
            interior = np.concatenate(blocks, axis=2)      # (nt, rows, nint)
            start = len(fd.faces) * self.npf
            dofs[:, start:] = np.transpose(interior, (1, 0, 2)).reshape(rows, -1)
        return FieldVector(self, dofs.reshape(-1))


_FAMILIES = {
    "lagrange": LagrangeSpace,
    "discontinuous": DiscontinuousSpace,
    "rt": RTSpace,
    "cr": CRSpace,
    "ecr": ECRSpace,
}


def build_space(mesh: Mesh, family: str, degree: int, components: int = 1,
                constraint: str = "none") -> FunctionSpace:
    """Construct a global space; see module docstring for the families."""
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise SpaceError(f"unknown family {family!r}; choices: {sorted(_FAMILIES)}")
    return cls(mesh, degree, components=components, constraint=constraint)


# ---------------------------------------------------------------------------
# fields


@dataclass
class FieldVector:
    """Coefficients of a finite element field on ``space`` (free dofs only,
    component-major)."""

    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dim,):
            raise SpaceError(
                f"coefficient length {self.coeffs.shape} != space dim {self.space.dim}")

    def full_scalar_coeffs(self) -> np.ndarray:
        """(components, n_scalar) with constrained dofs set to zero."""
        sp = self.space
        out = np.zeros((sp.components, sp.n_scalar))
        nf = sp.n_free_scalar
        for c in range(sp.components):
            out[c, sp.free_scalar] = self.coeffs[c * nf:(c + 1) * nf]
        return out

    def values(self, eids, bary) -> np.ndarray:
        """Evaluate on elements at barycentric points.

        Shapes: (ne, nq, components) for nodal families, and
        (ne, nq, components, 3) for RT (vector value per row).
        """
        sp = self.space
        eids = np.asarray(eids)
        full = self.full_scalar_coeffs()
        loc = full[:, sp.elem_dofs[eids]]                  # (comp, ne, nloc)
        basis = sp.scalar_values(eids, bary)
        if sp.family == "rt":
            return np.einsum("eqld,cel->eqcd", basis, loc)
        return np.einsum("eql,cel->eqc", basis, loc)

    def grads(self, eids, bary) -> np.ndarray:
        """(ne, nq, components, 3) gradients (nodal families only)."""
        sp = self.space
        eids = np.asarray(eids)
        full = self.full_scalar_coeffs()
        loc = full[:, sp.elem_dofs[eids]]
        basis = sp.scalar_grads(eids, bary)
        return np.einsum("eqld,cel->eqcd", basis, loc)

    def divs(self, eids, bary) -> np.ndarray:
        """(ne, nq, components) row divergences (RT only)."""
        sp = self.space
        eids = np.asarray(eids)
        full = self.full_scalar_coeffs()
        loc = full[:, sp.elem_dofs[eids]]
        basis = sp.scalar_divs(eids, bary)
        return np.einsum("eql,cel->eqc", basis, loc)

    # -- stable element-major export/import -------------------------------

    def export_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.export_dict(), fh)

    def export_dict(self) -> dict:
        sp = self.space
        full = self.full_scalar_coeffs()
        local = full[:, sp.elem_dofs]                      # (comp, nt, nloc)
        return {"schema": 1, "family": sp.family, "degree": sp.degree,
                "components": sp.components, "constraint": sp.constraint,
                "ordering": "element-major, local index, component-major",
                "values": np.transpose(local, (1, 0, 2)).reshape(-1).tolist()}

    @classmethod
    def import_dict(cls, space: FunctionSpace, payload: dict) -> "FieldVector":
        vals = np.asarray(payload["values"], dtype=float)
        nt, nloc, comp = len(space.mesh.tets), space.n_local, space.components
        local = vals.reshape(nt, comp, nloc)
        full = np.zeros((comp, space.n_scalar))
        for c in range(comp):
            full[c, space.elem_dofs.reshape(-1)] = local[:, c, :].reshape(-1)
        # consistency of shared dofs
        check = full[:, space.elem_dofs]
        if not np.allclose(np.transpose(check, (1, 0, 2)), local,
                           rtol=1e-10, atol=1e-12):
            raise SpaceError("element-major values disagree on shared dofs")
        coeffs = np.concatenate([full[c, space.free_scalar] for c in range(comp)])
        return cls(space, coeffs)


def l2_project(f, target: FunctionSpace, order: int | None = None) -> FieldVector:
    """Element-local L2 projection onto a broken space.

    ``f`` is a callable ``points -> (..., components)`` (or scalar) or a
    FieldVector on the same mesh.  ``order`` must make the moment
    integrals exact; default assumes polynomial ``f`` of the target degree.
    """
    if target.family != "discontinuous":
        raise SpaceError("l2_project targets broken (discontinuous) spaces")
    mesh = target.mesh
    d = target.degree
    rule = tet_rule(order if order is not None else 2 * d)
    eids = np.arange(len(mesh.tets))
    basis = target.ref.eval(rule.cartesian)                # (nq, nloc)
    Mhat = np.einsum("q,ql,qm->lm", rule.weights, basis, basis)

    if isinstance(f, FieldVector):
        fv = f.values(eids, rule.points)                   # (ne, nq, comp)
    else:
        corners = mesh.vertices[mesh.tets]
        pts = np.einsum("qk,eki->eqi", rule.points, corners)
        fv = np.asarray(f(pts.reshape(-1, 3)), dtype=float)
        fv = fv.reshape(pts.shape[0], pts.shape[1], -1)
    if fv.shape[2] != target.components:
        raise SpaceError(f"f has {fv.shape[2]} components, expected {target.components}")
    rhs = np.einsum("q,ql,eqc->ecl", rule.weights, basis, fv)
    nloc = Mhat.shape[0]
    loc = np.linalg.solve(Mhat, rhs.reshape(-1, nloc).T).T
    loc = loc.reshape(len(eids), target.components, nloc)
    full = np.zeros((target.components, target.n_scalar))
    for c in range(target.components):
        full[c, target.elem_dofs.reshape(-1)] = loc[:, c, :].reshape(-1)
    coeffs = np.concatenate([full[c, target.free_scalar]
                             for c in range(target.components)])
    return FieldVector(target, coeffs)


def mean_vector(space: FunctionSpace) -> np.ndarray:
    """Vector ``w`` with ``w @ coeffs = integral of the (scalar) field``.

    This is the Lagrange-multiplier row enforcing the zero-mean constraint
    in saddle systems.
    """
    if space.components != 1:
        raise SpaceError("mean functional is defined for scalar spaces")
    mesh = space.mesh
    rule = tet_rule(space.degree)
    eids = np.arange(len(mesh.tets))
    vals = space.scalar_values(eids, rule.points)
    detJ = 6.0 * np.abs(mesh.tet_volumes)
    loc = np.einsum("q,eql,e->el", rule.weights, vals, detJ)
    w = np.zeros(space.n_scalar)
    np.add.at(w, space.elem_dofs.reshape(-1), loc.reshape(-1))
    return w[space.free_scalar]


def enforce_zero_mean(space: FunctionSpace) -> np.ndarray:
    """Constraint metadata for a scalar broken space: the mean functional."""
    if space.family != "discontinuous":
        raise SpaceError("zero-mean constraints target scalar broken spaces")
    return mean_vector(space)


def reference_coords(mesh: Mesh, eid: int, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of physical ``points`` w.r.t. tet ``eid``."""
    v = mesh.vertices[mesh.tets[eid]]
    T = np.vstack([np.ones(4), v.T])                       # (4, 4)
    rhs = np.column_stack([np.ones(len(points)), points]).T
    return np.linalg.solve(T, rhs).T
