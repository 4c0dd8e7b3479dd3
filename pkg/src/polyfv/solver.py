"""Two-point system assembly, DIC-preconditioned CG and the deferred
correction outer loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import NotConverged, PreconditionerBreakdown
from .mesh import _fan_triangles
from .operators import (
    GRAD_SCHEMES,
    LeastSquaresStencil,
    correction_fluxes,
    face_coefficients,
    flux_divergence,
    two_point_fluxes,
)

log = logging.getLogger(__name__)


@dataclass
class SparseSystem:
    """Symmetric matrix in CSR layout (ascending columns per row) and a RHS."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    b: np.ndarray

    @property
    def n(self):
        return self.b.size

    def to_scipy(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def diagonal(self):
        return self.to_scipy().diagonal()

    def matvec(self, x):
        out = np.empty(self.n)
        kernels.csr_matvec(self.indptr, self.indices, self.data, np.ascontiguousarray(x, float), out)
        return out

    def with_rhs(self, b):
        return SparseSystem(self.indptr, self.indices, self.data, np.ascontiguousarray(b, float))

    @classmethod
    def from_dense(cls, A, b):
        m = sp.csr_matrix(np.asarray(A, dtype=float))
        m.sort_indices()
        return cls(
            m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.copy(),
            np.ascontiguousarray(b, dtype=float),
        )


def cell_source_integrals(mesh, f, quadrature="midpoint"):
    """Approximate integral of ``f`` over every cell.

    ``f`` maps an (N, 3) array of points to N values.  ``midpoint`` uses
    f(x_K)|K|; ``subdivided`` sums centroid samples over the fan tets
    joining x_K to every face triangle.
    """
    if f is None:
        return np.zeros(mesh.n_cells)
    if quadrature == "midpoint":
        return np.asarray(f(mesh.cell_centers), dtype=float) * mesh.cell_volume
    if quadrature != "subdivided":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    face_of_slot, avec, tcen, centre = _fan_triangles(
        mesh.points, mesh.face_offsets, mesh.face_vertices
    )
    out = np.zeros(mesh.n_cells)
    ni = mesh.n_internal
    for cells, sign, slots in (
        (mesh.owner, 1.0, slice(None)),
        (mesh.neighbour, -1.0, face_of_slot < ni),
    ):
        fs = face_of_slot[slots]
        c = cells[fs]
        xk = mesh.cell_centers[c]
        vol = sign * np.einsum("ij,ij->i", avec[slots], centre[fs] - xk) / 3.0
        pts = 0.25 * xk + 0.75 * tcen[slots]
        out += np.bincount(c, weights=vol * np.asarray(f(pts), dtype=float), minlength=mesh.n_cells)
    return out


def assemble_tpfa(mesh, alpha=1.0, f=None, quadrature="midpoint", coeffs=None):
    """Assemble the two-point matrix and the source vector.

    A[K, K] = sum over faces of alpha_sigma tau, A[K, L] = -alpha_sigma tau.
    """
    c = face_coefficients(mesh, alpha) if coeffs is None else coeffs
    ni = mesh.n_internal
    nc = mesh.n_cells
    t = c.alpha * c.tau
    diag = np.bincount(mesh.owner, weights=t, minlength=nc) + np.bincount(
        mesh.neighbour, weights=t[:ni], minlength=nc
    )
    own, nb = mesh.owner[:ni], mesh.neighbour
    rows = np.concatenate([np.arange(nc), own, nb])
    cols = np.concatenate([np.arange(nc), nb, own])
    vals = np.concatenate([diag, -t[:ni], -t[:ni]])
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(nc + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=nc), out=indptr[1:])
    b = cell_source_integrals(mesh, f, quadrature)
    return SparseSystem(indptr, cols.astype(np.int64), vals, np.ascontiguousarray(b))


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    residual: float
    true_residual: float
    preconditioner: str
    converged: bool

    def __iter__(self):
        return iter((self.x, self.iterations, self.residual))


def dic_pcg(system, x0=None, tol=1e-16, max_it=10000, backend=None):
    """Conjugate gradients with the diagonal incomplete Cholesky preconditioner.

    The stopping test uses the CG recurrence residual ||r_k|| / ||b||; the
    explicitly recomputed ||b - A x|| / ||b|| is reported as
    ``true_residual``.  A non-positive DIC pivot switches to Jacobi
    preconditioning.  Hitting ``max_it`` returns the last iterate with
    ``converged=False``.

    Raises
    ------
    NotConverged
        If a search direction with p^T A p <= 0 appears (matrix not SPD).
    """
    k = kernels if backend is None else backend
    A = system
    x = np.zeros(A.n) if x0 is None else np.array(x0, dtype=float)
    d, bad = k.dic_factor(A.indptr, A.indices, A.data)
    precond = "dic"
    if bad >= 0:
        err = PreconditionerBreakdown(f"non-positive DIC pivot at row {bad}")
        log.warning("%s; falling back to Jacobi preconditioning", err)
        d = A.diagonal().copy()
        precond = "jacobi"
    it, res, status = k.pcg(
        A.indptr, A.indices, A.data, d, A.b, x, float(tol), int(max_it), precond == "jacobi"
    )
    if status == 2:
        raise NotConverged(f"p^T A p <= 0 after {it} iterations; matrix is not SPD")
    bnorm = np.linalg.norm(A.b)
    true = float(np.linalg.norm(A.b - A.matvec(x)) / bnorm) if bnorm > 0 else 0.0
    return PCGResult(x, int(it), float(res), true, precond, status == 0)


@dataclass
class SolveLog:
    outer_iters: int = 0
    inner_iters: list = field(default_factory=list)
    changes: list = field(default_factory=list)
    final_residual: float = np.nan
    final_true_residual: float = np.nan
    converged: bool = False
    stagnated: bool = False
    preconditioner: str = "dic"

    def as_dict(self):
        return {
            "outer_iters": self.outer_iters,
            "inner_iters": list(self.inner_iters),
            "changes": [float(c) for c in self.changes],
            "final_residual": self.final_residual,
            "final_true_residual": self.final_true_residual,
            "converged": self.converged,
            "stagnated": self.stagnated,
            "preconditioner": self.preconditioner,
        }


def flux_residual(mesh, u, b, coeffs, grad_scheme="gauss", stencil=None):
    """Relative max-norm of div F(u) - b."""
    F = two_point_fluxes(mesh, u, coeffs) - correction_fluxes(mesh, u, coeffs, grad_scheme, stencil)
    r = flux_divergence(mesh, F) - b
    return float(np.abs(r).max() / max(np.abs(b).max(), np.finfo(float).tiny))


def solve_deferred(
    mesh, alpha=1.0, f=None, grad_scheme="gauss", outer_tol=1e-4, max_outer=1000,
    inner_tol=1e-16, quadrature="midpoint", metric="increment", max_inner=10000,
    backend=None,
):
    """Deferred-correction solve of the corrected scheme.

    Each outer step solves A u^{k+1} = b + c(u^k), where c collects the
    explicit non-orthogonal corrections.  With ``metric="increment"`` the loop
    stops when ||u^{k+1} - u^k||_inf / ||u^{k+1}||_inf <= outer_tol; with
    ``metric="residual"`` it stops when the full flux balance residual does.
    When the correction is identically zero the first solve is final.

    Returns
    -------
    u : (n_cells,) array
    log : SolveLog
        ``stagnated`` is set when ``max_outer`` is reached or the iterates
        stop being finite.
    """
    if grad_scheme not in GRAD_SCHEMES:
        raise ValueError(f"grad_scheme must be one of {GRAD_SCHEMES}")
    if metric not in ("increment", "residual"):
        raise ValueError("metric must be 'increment' or 'residual'")
    coeffs = face_coefficients(mesh, alpha)
    system = assemble_tpfa(mesh, f=f, quadrature=quadrature, coeffs=coeffs)
    stencil = LeastSquaresStencil(mesh, coeffs) if grad_scheme == "ls" else None
    orthogonal = not np.any(coeffs.k)

    def correction(u):
        return flux_divergence(mesh, correction_fluxes(mesh, u, coeffs, grad_scheme, stencil))

    slog = SolveLog()
    u = np.zeros(mesh.n_cells)
    c = np.zeros(mesh.n_cells)
    eps = np.finfo(float).tiny
    while slog.outer_iters < max_outer:
        res = dic_pcg(system.with_rhs(system.b + c), x0=u, tol=inner_tol, max_it=max_inner,
                      backend=backend)
        u_new = res.x
        slog.outer_iters += 1
        slog.inner_iters.append(res.iterations)
        slog.final_residual = res.residual
        slog.final_true_residual = res.true_residual
        slog.preconditioner = res.preconditioner
        if not np.all(np.isfinite(u_new)):
            slog.stagnated = True
            break
        change = np.abs(u_new - u).max() / max(np.abs(u_new).max(), eps)
        slog.changes.append(float(change))
        u = u_new
        if orthogonal:
            slog.converged = True
            break
        if metric == "increment":
            done = change <= outer_tol
        else:
            done = flux_residual(mesh, u, system.b, coeffs, grad_scheme, stencil) <= outer_tol
        if done:
            slog.converged = True
            break
        c = correction(u)
    if not slog.converged:
        slog.stagnated = True
        log.warning("deferred correction stopped after %d outer iterations", slog.outer_iters)
    return u, slog
