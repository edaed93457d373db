"""Two-sided bounds for Stokes-operator eigenvalues and the divergence-free
Poincare constant.

Conforming eigenvalues bound the exact ones from above by min-max; the
projection-error constant C_h turns them into guaranteed lower bounds

    lam_k >= lam_{h,k} / (1 + C_h^2 lam_{h,k}).

The Crouzeix-Raviart nonconforming discretization gives an alternative
lower bound with the explicit constant 0.3804 h in place of C_h.  The
first eigenvalue encloses the Poincare constant: C_p = 1 / sqrt(lam_1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .assembly import assemble_div_pressure, assemble_mass, assemble_stiffness
from .linalg import EigenResult, eig_smallest_constrained
from .mesh import Mesh
from .spaces import FieldVector, build_space, mean_vector
from .stokes import StokesOperators

# constant of the Crouzeix-Raviart eigenvalue lower bound on tet meshes
CR_COEFF = 0.3804


@dataclass
class EigenBound:
    """Two-sided bound for one Stokes eigenvalue."""

    index: int
    upper: float
    lower: float
    method: str                 # "conforming_Ch" | "CR_nonconforming"
    constant: float             # C_h or 0.3804 h
    cp_interval: tuple | None = None

    def __post_init__(self):
        if not 0 < self.lower <= self.upper * (1 + 1e-12):
            raise ValueError(f"invalid bound pair ({self.lower}, {self.upper})")
        if self.index == 1 and self.cp_interval is None:
            self.cp_interval = (1.0 / np.sqrt(self.upper),
                                1.0 / np.sqrt(self.lower))


def solve_stokes_eigen(mesh: Mesh, k: int, count: int, tol: float = 1e-8,
                       solver_tol: float = 1e-12, max_iter: int = 400,
                       ops: StokesOperators | None = None):
    """Smallest ``count`` eigenvalues of the conforming Stokes pencil on the
    discretely divergence-free subspace; returns (values, modes, result).

    The shift-invert applications reuse the Stokes saddle factorization
    (divergence rows plus the zero-mean multiplier), whose velocity block
    inverts the pencil on the constraint kernel.
    """
    ops = ops if ops is not None else StokesOperators(mesh, k, solver_tol)
    result = eig_smallest_constrained(ops.A, ops.MV, ops.B, count, tol=tol,
                                      max_iter=max_iter, solver_tol=solver_tol,
                                      factor=ops.stokes_factor)
    modes = [FieldVector(ops.V, result.vectors[:, i]) for i in range(count)]
    return result.values, modes, result


def lower_bound(lambda_h: float, Ch: float) -> float:
    """Guaranteed eigenvalue lower bound lam_h / (1 + Ch^2 lam_h)."""
    if lambda_h <= 0 or Ch < 0:
        raise ValueError("lambda_h must be positive and Ch non-negative")
    return lambda_h / (1.0 + Ch**2 * lambda_h)


def cr_stokes_matrices(mesh: Mesh, family: str = "ecr"):
    """Broken-gradient stiffness, mass and divergence constraints of the
    nonconforming velocity / piecewise-constant pressure pair, plus the
    stabilized saddle (divergence rows and a zero-mean pressure
    multiplier).  ``family`` selects the plain face-barycenter element
    ("cr") or its bubble-enriched variant ("ecr", default)."""
    Vnc = build_space(mesh, family, 1, 3, "zero_boundary")
    P0 = build_space(mesh, "discontinuous", 0, 1)
    A = assemble_stiffness(Vnc)
    M = assemble_mass(Vnc)
    B = assemble_div_pressure(Vnc, P0)
    w = sparse.csr_matrix(mean_vector(P0)[:, None])
    K = sparse.bmat([[A, B.T, None],
                     [B, None, w],
                     [None, w.T, None]], format="csc")
    return Vnc, A, M, B, K


def solve_cr_eigen(mesh: Mesh, count: int, tol: float = 1e-8,
                   solver_tol: float = 1e-12, max_iter: int = 400,
                   family: str = "ecr") -> np.ndarray:
    """Nonconforming Stokes eigenvalues, ascending.

    The velocity element is the bubble-enriched Crouzeix-Raviart space by
    default; the enrichment is what the published lower-bound tables for
    this mesh family are built on (the plain face-barycenter element gives
    noticeably stiffer coarse-mesh eigenvalues).  Pass ``family="cr"`` for
    the plain element.
    """
    from .linalg import SaddleFactor

    _, A, M, B, K = cr_stokes_matrices(mesh, family)
    factor = SaddleFactor(K, tol=solver_tol)
    result: EigenResult = eig_smallest_constrained(
        A, M, B, count, tol=tol, max_iter=max_iter, solver_tol=solver_tol,
        factor=factor)
    return result.values


def lower_bound_nc(lambda_nc: float, h: float) -> float:
    """Nonconforming lower bound lam / (1 + (0.3804 h)^2 lam)."""
    if lambda_nc <= 0 or h <= 0:
        raise ValueError("inputs must be positive")
    return lambda_nc / (1.0 + (CR_COEFF * h)**2 * lambda_nc)


def conforming_bound(index: int, lambda_h: float, Ch: float) -> EigenBound:
    return EigenBound(index=index, upper=lambda_h,
                      lower=lower_bound(lambda_h, Ch),
                      method="conforming_Ch", constant=Ch)


def nonconforming_bound(index: int, lambda_nc: float, h: float) -> EigenBound:
    return EigenBound(index=index, upper=lambda_nc,
                      lower=lower_bound_nc(lambda_nc, h),
                      method="CR_nonconforming", constant=CR_COEFF * h)


def poincare_bounds(eig_bound: EigenBound) -> tuple:
    """Interval [1/sqrt(upper_1), 1/sqrt(lower_1)] enclosing C_p."""
    if eig_bound.index != 1:
        raise ValueError("the Poincare constant derives from the first eigenvalue")
    return (1.0 / np.sqrt(eig_bound.upper), 1.0 / np.sqrt(eig_bound.lower))
