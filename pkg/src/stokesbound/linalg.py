"""Saddle-point solves and symmetric generalized eigenvalue computations.

Direct sparse LU is the workhorse at desk scale.  Singular-but-consistent
saddle systems (they arise for velocity degree 2, where the pressure space
carries spurious modes) are handled by a pivot-perturbation factorization
of the multiplier blocks followed by iterative refinement against the
unperturbed matrix; every returned solution is certified by its true
relative residual.

Eigenvalue problems use ARPACK (implicitly restarted Lanczos with full
reorthogonalization) through scipy; each returned pair is re-verified
post hoc against the requested tolerance, independently of the iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla


class NonConvergence(RuntimeError):
    """Solver failed to meet the requested residual tolerance."""


class InconsistentSystem(RuntimeError):
    """Singular system whose right-hand side is not in the range."""


@dataclass
class SaddleSystem:
    """Symmetric block system, its right-hand side and block layout
    (list of (name, size) pairs, in row order)."""

    K: sparse.spmatrix
    rhs: np.ndarray
    layout: list

    def split(self, x: np.ndarray) -> dict:
        out = {}
        start = 0
        for name, size in self.layout:
            out[name] = x[start:start + size]
            start += size
        return out


class SaddleFactor:
    """Reusable factorization of a symmetric (possibly singular) matrix.

    ``solve`` guarantees a relative residual below ``tol`` or raises; for
    consistent singular systems it falls back to a perturbed factorization
    refined against the true matrix.
    """

    def __init__(self, K, tol: float = 1e-10, reg_eps: float = 1e-9,
                 max_refine: int = 60):
        self.K = K.tocsc()
        self.tol = tol
        self.reg_eps = reg_eps
        self.max_refine = max_refine
        self.n = K.shape[0]
        self._lu = None
        self._lu_reg = None
        self._direct_bad = False
        self.solves = 0

    def _factor_direct(self):
        if self._lu is None and not self._direct_bad:
            try:
                self._lu = spla.splu(self.K)
            except RuntimeError:
                self._direct_bad = True
        return self._lu

    def _factor_regularized(self):
        if self._lu_reg is None:
            scale = np.abs(self.K.data).max() if self.K.nnz else 1.0
            diag = self.K.diagonal()
            # perturb only the structurally zero diagonal (multiplier rows),
            # on the negative-definite side of the saddle
            pert = np.where(diag == 0.0, -self.reg_eps * scale, 0.0)
            Kreg = (self.K + sparse.diags(pert)).tocsc()
            self._lu_reg = spla.splu(Kreg)
        return self._lu_reg

    def _residual(self, x, b, bnorm):
        r = b - self.K @ x
        return r, np.linalg.norm(r) / bnorm

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        self.solves += 1
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros(self.n)

        lu = self._factor_direct()
        if lu is not None:
            x = lu.solve(b)
            if np.all(np.isfinite(x)):
                r, rel = self._residual(x, b, bnorm)
                for _ in range(3):
                    if rel <= self.tol:
                        return x
                    x = x + lu.solve(r)
                    r, rel = self._residual(x, b, bnorm)
                if rel <= self.tol:
                    return x
            self._direct_bad = True

        lu = self._factor_regularized()
        x = lu.solve(b)
        if not np.all(np.isfinite(x)):
            x = np.zeros(self.n)
        r, rel = self._residual(x, b, bnorm)
        history = [rel]
        for _ in range(self.max_refine):
            if rel <= self.tol:
                return x
            x = x + lu.solve(r)
            r, rel = self._residual(x, b, bnorm)
            history.append(rel)
        if rel <= self.tol:
            return x

        # small systems: decide consistency by a dense minimum-norm solve
        if self.n <= 4000:
            xd, *_ = np.linalg.lstsq(self.K.toarray(), b, rcond=None)
            _, rel_d = self._residual(xd, b, bnorm)
            if rel_d <= self.tol:
                return xd
            raise InconsistentSystem(
                f"least-squares residual {rel_d:.2e} exceeds tol {self.tol:.1e}")
        stagnated = len(history) > 10 and history[-1] > 0.9 * history[-11]
        if stagnated and rel > 1e3 * self.tol:
            raise InconsistentSystem(
                f"refinement stagnated at relative residual {rel:.2e}")
        raise NonConvergence(
            f"saddle solve stalled at relative residual {rel:.2e}")


def solve_saddle(system: SaddleSystem, tol: float = 1e-10) -> np.ndarray:
    """Solve a symmetric saddle system to relative residual ``tol``."""
    return SaddleFactor(system.K, tol=tol).solve(system.rhs)


# ---------------------------------------------------------------------------
# eigenvalue computations


@dataclass
class EigenResult:
    """Eigenpairs with post-hoc certified residuals.

    ``residuals[i]`` is the relative pencil residual of pair i (constrained
    to the admissible subspace when constraints are present) and is
    guaranteed <= the requested tolerance.  ``n_ops`` counts operator or
    inverse applications.
    """

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    n_ops: int
    history: list = field(default_factory=list)


def _default_v0(n: int, seed: int = 20200604) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n)


def eig_largest(apply_A, M, tol: float = 1e-8, max_iter: int = 200,
                ncv: int = 20, seed: int = 20200604) -> EigenResult:
    """Largest eigenvalue of the symmetric pencil ``A x = lam M x``.

    ``apply_A`` maps a coefficient vector to ``A @ x`` (A symmetric, PSD on
    its range w.r.t. the M inner product); M is SPD.  ``max_iter`` bounds
    the number of operator applications.
    """
    n = M.shape[0]
    count = {"ops": 0}
    history = []

    def matvec(x):
        count["ops"] += 1
        return apply_A(x)

    Aop = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    ncv = min(max(ncv, 4), n)
    restarts = max(2, max_iter // max(ncv - 1, 1))
    try:
        vals, vecs = spla.eigsh(Aop, k=1, M=M.tocsc(), which="LA",
                                tol=tol * 1e-2, maxiter=restarts, ncv=ncv,
                                v0=_default_v0(n, seed))
    except spla.ArpackNoConvergence as exc:
        raise NonConvergence(f"Lanczos did not converge: {exc}") from exc
    lam = float(vals[0])
    x = vecs[:, 0]
    Ax = apply_A(x)
    Mx = M @ x
    res = np.linalg.norm(Ax - lam * Mx) / max(abs(lam) * np.linalg.norm(Mx),
                                              np.finfo(float).tiny)
    history.append((lam, res))
    if res > tol:
        raise NonConvergence(
            f"eigenpair residual {res:.2e} exceeds tolerance {tol:.1e}")
    return EigenResult(values=np.array([lam]), vectors=x[:, None],
                       residuals=np.array([res]), n_ops=count["ops"],
                       history=history)


def eig_smallest_constrained(A, M, constraints, count: int, tol: float = 1e-8,
                             max_iter: int = 200, ncv: int | None = None,
                             solver_tol: float = 1e-12, seed: int = 20200604,
                             factor: "SaddleFactor | None" = None) -> EigenResult:
    """``count`` smallest eigenvalues of ``A v = lam M v`` on ``{C v = 0}``.

    A must be SPD on the constraint kernel; the inverse is applied through
    the saddle extension [[A, C^T], [C, 0]] (shift-invert at zero), so a
    rank-deficient C is tolerated as long as the systems stay consistent.
    An already-factored saddle extension of A (possibly with extra
    stabilizing multiplier rows) can be passed as ``factor``; its first
    block must be A.
    """
    n = A.shape[0]
    C = constraints.tocsr()
    nc = C.shape[0]
    rank_bound = min(nc, n)
    if count > n - 1 or count < 1:
        raise ValueError(f"cannot compute {count} constrained eigenpairs in "
                         f"dimension {n} with {rank_bound} constraint rows")
    if factor is None:
        K = sparse.bmat([[A, C.T], [C, None]], format="csc")
        factor = SaddleFactor(K, tol=solver_tol)
    npad = factor.n - n

    def opinv(b):
        rhs = np.concatenate([b, np.zeros(npad)])
        return factor.solve(rhs)[:n]

    OPinv = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    v0 = opinv(M @ _default_v0(n, seed))
    ncv = min(n, ncv if ncv is not None else max(20, 2 * count + 1))
    restarts = max(2, max_iter // max(ncv - count, 1))
    try:
        vals, vecs = spla.eigsh(A, k=count, M=M.tocsc(), sigma=0.0,
                                which="LM", OPinv=OPinv, tol=tol * 1e-2,
                                maxiter=restarts, ncv=ncv, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise NonConvergence(f"shift-invert Lanczos did not converge: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]

    residuals = []
    for i in range(count):
        lam, x = float(vals[i]), vecs[:, i]
        r0 = A @ x - lam * (M @ x)
        # constrained residual: distance of the full residual to range(C^T)
        mu = spla.lsqr(C.T, -r0, atol=1e-14, btol=1e-14, iter_lim=10000)[0]
        rnorm = np.linalg.norm(r0 + C.T @ mu)
        rel = rnorm / max(abs(lam) * np.linalg.norm(M @ x), np.finfo(float).tiny)
        residuals.append(rel)
    residuals = np.array(residuals)
    if np.any(residuals > tol):
        raise NonConvergence(
            f"constrained eigen residuals {residuals} exceed tolerance {tol:.1e}")
    return EigenResult(values=vals, vectors=vecs, residuals=residuals,
                       n_ops=factor.solves)
