"""Discrete Stokes solves, equilibrated flux reconstruction and the
explicit error-estimation quantities.

The velocity is approximated in the Scott-Vogelius pair (continuous
vector P_k with broken P_{k-1} pressure tests) on a barycentric-refined
mesh, which makes the discrete solution exactly divergence-free.  The
companion flux problem reconstructs a tensor Raviart-Thomas field p_h and
a scalar potential phi_h with

    div p_h + grad phi_h + f_h = 0

exactly in the broken space, so the Prager-Synge hypercircle gives the
guaranteed a posteriori bound  ||grad(u - u_h)|| <= ||p_h - grad u_h|| +
C0h * ||f - f_h||.  The a priori constant is C_h = sqrt(C0h^2 + kappa_h^2)
where kappa_h is the largest eigenvalue of the load-to-gap quadratic form
over discrete loads, computed matrix-free by Lanczos iteration (each
operator application solves the two saddle systems).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sparse

from . import assembly
from .assembly import (
    assemble_div_pressure,
    assemble_div_rt,
    assemble_grad_coupling,
    assemble_load,
    assemble_mass,
    assemble_mixed_mass,
    assemble_rt_mass,
    assemble_stiffness,
)
from .elements import tet_rule
from .linalg import EigenResult, SaddleFactor, SaddleSystem, eig_largest
from .mesh import Mesh
from .spaces import FieldVector, build_space, l2_project, mean_vector

# Projection-error constant ||u - pi_h u|| <= 0.284 h ||grad u|| for the
# barycentric-refined sub-cube meshes produced by this package.
C0H_COEFF = 0.284


@dataclass
class StokesSolution:
    """Velocity, pressure multiplier and diagnostics of a Stokes solve."""

    u: FieldVector
    eta: FieldVector
    c: float
    energy: float
    load_work: float
    div_residual: float
    galerkin_residual: float
    k: int

    @property
    def velocity(self) -> FieldVector:
        return self.u


@dataclass
class FluxSolution:
    """Equilibrated tensor flux with potential and multiplier."""

    p: FieldVector
    phi: FieldVector
    eta: FieldVector
    t: float
    equilibration_residual: float
    flux_identity_residual: float
    m: int


@dataclass
class KappaEstimate:
    kappa: float
    lambda_max: float
    n_ops: int
    eig_residual: float
    identity_rel_err: float
    dof: int
    stability: str


@dataclass
class ErrorCertificate:
    """All explicit error-estimation quantities for one mesh/degree pair."""

    C0h: float
    kappa_h: float
    Ch: float
    aposteriori_bound: float | None = None
    l2_bound: float | None = None
    provenance: dict = field(default_factory=dict)


class StokesOperators:
    """Spaces, matrices and factorizations for one (mesh, k) pair.

    Everything is built lazily and cached, so a single instance can serve
    the Stokes solve, the flux reconstruction, the kappa eigenvalue and the
    Stokes eigenproblem without re-assembly or re-factorization.
    """

    def __init__(self, mesh: Mesh, k: int, solver_tol: float = 1e-12):
        if k not in (2, 3):
            raise ValueError(f"velocity degree k must be 2 or 3, got {k}")
        self.mesh = mesh
        self.k = k
        self.d = self.m = k - 1
        self.solver_tol = solver_tol
        if k == 2:
            warnings.warn(
                "k=2 is outside the proven stability regime (k >= 3); "
                "saddle systems may be singular and are solved in "
                "pivot-perturbation mode", stacklevel=3)

    # -- spaces ------------------------------------------------------------

    @cached_property
    def V(self):
        return build_space(self.mesh, "lagrange", self.k, 3, "zero_boundary")

    @cached_property
    def Q(self):
        return build_space(self.mesh, "discontinuous", self.d, 1)

    @cached_property
    def X(self):
        return build_space(self.mesh, "discontinuous", self.m, 3)

    @cached_property
    def U(self):
        return build_space(self.mesh, "lagrange", self.k, 1)

    @cached_property
    def RT(self):
        return build_space(self.mesh, "rt", self.m, 3)

    # -- matrices ----------------------------------------------------------

    @cached_property
    def A(self):
        return assemble_stiffness(self.V)

    @cached_property
    def MV(self):
        return assemble_mass(self.V)

    @cached_property
    def B(self):
        return assemble_div_pressure(self.V, self.Q)

    @cached_property
    def mq(self):
        return mean_vector(self.Q)

    @cached_property
    def W(self):
        return assemble_mixed_mass(self.V, self.X)

    @cached_property
    def MX(self):
        return assemble_mass(self.X)

    @cached_property
    def MRT(self):
        return assemble_rt_mass(self.RT)

    @cached_property
    def D(self):
        return assemble_div_rt(self.RT, self.X)

    @cached_property
    def G(self):
        return assemble_grad_coupling(self.U, self.X)

    @cached_property
    def wU(self):
        return mean_vector(self.U)

    # -- saddle systems ----------------------------------------------------

    @cached_property
    def stokes_layout(self):
        return [("u", self.V.dim), ("eta", self.Q.dim), ("c", 1)]

    @cached_property
    def stokes_matrix(self):
        mq = sparse.csr_matrix(self.mq[:, None])
        return sparse.bmat([[self.A, self.B.T, None],
                            [self.B, None, mq],
                            [None, mq.T, None]], format="csc")

    @cached_property
    def stokes_factor(self):
        return SaddleFactor(self.stokes_matrix, tol=self.solver_tol)

    @cached_property
    def flux_layout(self):
        return [("p", self.RT.dim), ("phi", self.U.dim),
                ("eta", self.X.dim), ("t", 1)]

    @cached_property
    def flux_matrix(self):
        w = sparse.csr_matrix(self.wU[:, None])
        return sparse.bmat(
            [[self.MRT, None, self.D.T, None],
             [None, None, self.G.T, w],
             [self.D, self.G, None, None],
             [None, w.T, None, None]], format="csc")

    @cached_property
    def flux_factor(self):
        return SaddleFactor(self.flux_matrix, tol=self.solver_tol)

    @cached_property
    def MX_factor(self):
        return SaddleFactor(self.MX.tocsc(), tol=self.solver_tol)

    # -- block solves --------------------------------------------------

    def solve_stokes_blocks(self, rhs_u: np.ndarray):
        rhs = np.concatenate([rhs_u, np.zeros(self.Q.dim + 1)])
        x = self.stokes_factor.solve(rhs)
        nV, nQ = self.V.dim, self.Q.dim
        return x[:nV], x[nV:nV + nQ], float(x[-1])

    def solve_flux_blocks(self, fvec: np.ndarray):
        rhs = np.concatenate([np.zeros(self.RT.dim + self.U.dim),
                              -(self.MX @ fvec), np.zeros(1)])
        x = self.flux_factor.solve(rhs)
        nP, nU, nX = self.RT.dim, self.U.dim, self.X.dim
        return (x[:nP], x[nP:nP + nU], x[nP + nU:nP + nU + nX], float(x[-1]))

    # -- public operations ---------------------------------------------

    def solve(self, f, order: int | None = None) -> StokesSolution:
        """Solve the Stokes saddle problem for a callable or broken-space load."""
        if isinstance(f, FieldVector):
            sp = f.space
            if (sp.family != "discontinuous" or sp.components != 3
                    or sp.degree != self.m or sp.mesh is not self.mesh):
                raise ValueError(
                    "FieldVector loads must live in the vector broken space "
                    f"of degree {self.m} on the same mesh")
            rhs_u = self.W @ f.coeffs
        else:
            rhs_u = assemble_load(f, self.V, order)
        u, eta, c = self.solve_stokes_blocks(rhs_u)
        uf = FieldVector(self.V, u)
        ef = FieldVector(self.Q, eta)
        energy = float(u @ (self.A @ u))
        work = float(rhs_u @ u)
        div_vec = self.B @ u
        scale = np.sqrt(max(energy, np.finfo(float).tiny))
        chi_norm = np.sqrt(self.MQ_diag)
        div_res = float(np.max(np.abs(div_vec) / (scale * chi_norm))) if energy else 0.0
        gal_res = abs(energy - work) / max(abs(energy), np.finfo(float).tiny)
        return StokesSolution(u=uf, eta=ef, c=c, energy=energy, load_work=work,
                              div_residual=div_res, galerkin_residual=gal_res,
                              k=self.k)

    @cached_property
    def MQ_diag(self):
        return assemble_mass(self.Q).diagonal()

    def reconstruct(self, f_h: FieldVector) -> FluxSolution:
        """Equilibrated flux for a load in the vector broken space."""
        if f_h.space.family != "discontinuous" or f_h.space.components != 3:
            raise ValueError("f_h must live in the vector broken space")
        if f_h.space.degree != self.m:
            raise ValueError(f"f_h degree {f_h.space.degree} != m = {self.m}")
        fvec = f_h.coeffs
        p, phi, eta, t = self.solve_flux_blocks(fvec)
        pf = FieldVector(self.RT, p)
        phif = FieldVector(self.U, phi)
        etaf = FieldVector(self.X, eta)

        fnorm = np.sqrt(max(fvec @ (self.MX @ fvec), 0.0))
        eq_res = self._equilibration_norm(pf, phif, f_h)
        pp = float(p @ (self.MRT @ p))
        fe = float(fvec @ (self.MX @ eta))
        id_res = abs(pp - fe) / max(abs(pp), np.finfo(float).tiny) if fnorm else 0.0
        return FluxSolution(p=pf, phi=phif, eta=etaf, t=t,
                            equilibration_residual=eq_res,
                            flux_identity_residual=id_res, m=self.m)

    def _equilibration_norm(self, p: FieldVector, phi: FieldVector,
                            f_h: FieldVector) -> float:
        def integrand(eids, bary, X):
            dv = p.divs(eids, bary)
            gp = phi.grads(eids, bary)[:, :, 0, :]
            fv = f_h.values(eids, bary)
            return ((dv + gp + fv)**2).sum(axis=2)

        return np.sqrt(max(assembly.integrate(self.mesh, 2 * self.m + 2,
                                              integrand), 0.0))

    # -- kappa -----------------------------------------------------------

    def kappa_operator(self):
        """Matrix-free symmetric form T with (f, T f) = ||grad u_h - p_h||^2."""
        def apply_T(fvec):
            u, _, _ = self.solve_stokes_blocks(self.W @ fvec)
            _, _, eta, _ = self.solve_flux_blocks(fvec)
            return self.MX @ eta - self.W.T @ u

        return apply_T

    def kappa(self, eig_tol: float = 1e-8, max_ops: int = 200,
              ncv: int = 20) -> KappaEstimate:
        apply_T = self.kappa_operator()
        result = eig_largest(apply_T, self.MX, tol=eig_tol, max_iter=max_ops,
                             ncv=ncv)
        lam = float(result.values[0])
        kappa = float(np.sqrt(max(lam, 0.0)))

        # independent check of the gap identity at the maximizer
        f = result.vectors[:, 0]
        fh = FieldVector(self.X, f)
        u, _, _ = self.solve_stokes_blocks(self.W @ f)
        flux = self.reconstruct(fh)
        gap = assembly.flux_gap_norm(flux.p, FieldVector(self.V, u))
        s2 = float(f @ (self.MX @ flux.eta.coeffs) - f @ (self.W.T @ u))
        identity_rel = abs(gap**2 - s2) / max(gap**2, np.finfo(float).tiny)

        return KappaEstimate(kappa=kappa, lambda_max=lam,
                             n_ops=result.n_ops,
                             eig_residual=float(result.residuals[0]),
                             identity_rel_err=identity_rel,
                             dof=self.dof_report()["max"],
                             stability="proven" if self.k >= 3 else "unproven")

    def dof_report(self) -> dict:
        n_flux = self.RT.dim + self.U.dim + self.X.dim + 1
        n_stokes = self.V.dim + self.Q.dim + 1
        return {"flux_system": n_flux, "stokes_system": n_stokes,
                "max": max(n_flux, n_stokes)}


# ---------------------------------------------------------------------------
# module-level operations


def solve_stokes(mesh: Mesh, k: int, f, order: int | None = None,
                 solver_tol: float = 1e-12) -> StokesSolution:
    """Solve the discrete Stokes problem with velocity degree ``k``."""
    return StokesOperators(mesh, k, solver_tol).solve(f, order)


def reconstruct_flux(mesh: Mesh, m: int, f_h: FieldVector,
                     solver_tol: float = 1e-12) -> FluxSolution:
    """Reconstruct the equilibrated Raviart-Thomas flux for a broken load."""
    return StokesOperators(mesh, m + 1, solver_tol).reconstruct(f_h)


def compute_C0h(h: float) -> float:
    """Projection-error constant 0.284 h of the sub-cube mesh family."""
    if h <= 0:
        raise ValueError("h must be positive")
    return C0H_COEFF * h


def kappa_estimate(mesh: Mesh, k: int, eig_tol: float = 1e-8,
                   max_ops: int = 200, solver_tol: float = 1e-12,
                   ncv: int = 20) -> KappaEstimate:
    return StokesOperators(mesh, k, solver_tol).kappa(eig_tol, max_ops, ncv)


def compute_kappa(mesh: Mesh, k: int, **kwargs) -> float:
    """Worst-case gap-to-load ratio kappa_h over discrete loads."""
    return kappa_estimate(mesh, k, **kwargs).kappa


def compute_Ch(kappa: float, C0h: float) -> float:
    """A priori constant sqrt(C0h^2 + kappa^2)."""
    if kappa < 0 or C0h < 0:
        raise ValueError("inputs must be non-negative")
    return float(np.hypot(kappa, C0h))


def aposteriori_bound(u_sol: StokesSolution, flux: FluxSolution, f,
                      f_h: FieldVector, C0h: float,
                      osc_order: int | None = None) -> float:
    """Guaranteed energy-error bound ||p_h - grad u_h|| + C0h ||f - f_h||."""
    if flux.p.space.mesh is not u_sol.u.space.mesh:
        raise ValueError("flux and velocity live on different meshes")
    gap = assembly.flux_gap_norm(flux.p, u_sol.u)
    order = osc_order if osc_order is not None else 2 * u_sol.k + 2
    osc = assembly.l2_diff(f_h, f, order)
    return gap + C0h * osc


def l2_error_bound(Ch: float, energy_bound: float) -> float:
    """L2 bound by duality: Ch times an energy-norm bound."""
    if Ch < 0 or energy_bound < 0:
        raise ValueError("inputs must be non-negative")
    return Ch * energy_bound


def certify(mesh: Mesh, k: int, f=None, f_order: int | None = None,
            eig_tol: float = 1e-8, max_ops: int = 200,
            solver_tol: float = 1e-12, provenance: dict | None = None,
            ops: StokesOperators | None = None) -> ErrorCertificate:
    """Compute C0h, kappa_h, C_h and (optionally, for a given load f) the
    a posteriori and L2 bounds."""
    ops = ops if ops is not None else StokesOperators(mesh, k, solver_tol)
    est = ops.kappa(eig_tol, max_ops)
    C0h = compute_C0h(mesh.h)
    Ch = compute_Ch(est.kappa, C0h)
    apost = l2b = None
    if f is not None:
        order = f_order if f_order is not None else 2 * k + 2
        sol = ops.solve(f, order)
        f_h = l2_project(f, ops.X, order=order)
        flux = ops.reconstruct(f_h)
        apost = aposteriori_bound(sol, flux, f, f_h, C0h, osc_order=order)
        l2b = l2_error_bound(Ch, apost)
    prov = {"h": mesh.h, "k": k, "d": k - 1, "m": k - 1,
            "solver_tol": solver_tol, "eig_tol": eig_tol,
            "stability": est.stability, "kappa_ops": est.n_ops,
            "kappa_residual": est.eig_residual,
            "gap_identity_rel_err": est.identity_rel_err,
            "dof": est.dof}
    prov.update(provenance or {})
    return ErrorCertificate(C0h=C0h, kappa_h=est.kappa, Ch=Ch,
                            aposteriori_bound=apost, l2_bound=l2b,
                            provenance=prov)
