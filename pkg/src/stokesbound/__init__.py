"""Guaranteed error bounds for conforming FEM solutions of the Stokes
equation on 3D block domains, with two-sided Stokes eigenvalue bounds."""

from .elements import (
    QuadratureRule,
    ReferenceElement,
    cr_element,
    lagrange_element,
    quadrature,
    rt_element,
)
from .mesh import (
    DomainSpec,
    Mesh,
    MeshError,
    MeshStats,
    ValidationReport,
    builtin_domain,
    domain_refinement,
    generate_mesh,
    mesh_statistics,
    validate_mesh,
)
from .spaces import (
    FieldVector,
    FunctionSpace,
    SpaceError,
    build_space,
    enforce_zero_mean,
    l2_project,
    mean_vector,
)
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
from .linalg import (
    EigenResult,
    InconsistentSystem,
    NonConvergence,
    SaddleFactor,
    SaddleSystem,
    eig_largest,
    eig_smallest_constrained,
    solve_saddle,
)
from .stokes import (
    ErrorCertificate,
    FluxSolution,
    KappaEstimate,
    StokesOperators,
    StokesSolution,
    aposteriori_bound,
    certify,
    compute_C0h,
    compute_Ch,
    compute_kappa,
    kappa_estimate,
    l2_error_bound,
    reconstruct_flux,
    solve_stokes,
)
from .eigenbounds import (
    EigenBound,
    conforming_bound,
    lower_bound,
    lower_bound_nc,
    nonconforming_bound,
    poincare_bounds,
    solve_cr_eigen,
    solve_stokes_eigen,
)

__version__ = "0.1.0"
