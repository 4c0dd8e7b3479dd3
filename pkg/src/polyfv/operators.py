"""Discrete operators of the cell-centred finite volume scheme.

All functions act on plain numpy arrays: a cell field is an ``(n_cells,)``
array and a cell vector field an ``(n_cells, 3)`` array.  Face quantities
are stored once per face and oriented from owner to neighbour, with the
boundary faces after the internal ones.  Boundary conditions are
homogeneous Dirichlet throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import FaceDegenerate, SingularStencil

DEGENERATE_NI = 1e-12
ORTHO_TOL = 1e-11
GRAD_SCHEMES = ("gauss", "ls")


@dataclass
class FaceCoefficients:
    """Per-face scheme coefficients.

    Attributes
    ----------
    area, tau, lam, alpha, n_dot_i : (n_faces,) arrays
        Face area, transmissivity, interpolation weight on the owner value
        (1 on boundary faces), face diffusivity and n.i.
    normal, i, k : (n_faces, 3) arrays
        Unit normal, cell-to-cell (or cell-to-face) unit vector and the
        correction vector k = n - i / (n.i).
    d_kl : (n_faces,) array
        d_K + d_L on internal faces, d_K on boundary faces.
    n_internal : int
    """

    area: np.ndarray
    normal: np.ndarray
    i: np.ndarray
    n_dot_i: np.ndarray
    k: np.ndarray
    d_kl: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    n_internal: int

    @property
    def n_faces(self):
        return self.area.size

    def j_tensor(self, f):
        """Non-orthogonality tensor J = I - i i^T / (i.n)^2 of face ``f``."""
        i = self.i[f]
        return np.eye(3) - np.outer(i, i) / self.n_dot_i[f] ** 2

    def gamma_parallel(self, f):
        i = self.i[f]
        return self.alpha[f] * np.outer(i, i) / self.n_dot_i[f] ** 2

    def gamma_nonparallel(self, f):
        return self.alpha[f] * self.j_tensor(f)

    # The a- and b-vectors are cheap to rebuild, so they are not stored.
    def a_owner(self):
        """a_{K,L} on internal faces followed by a_{K,sigma} on boundary faces."""
        return (self.area * self.lam)[:, None] * self.normal

    def a_neighbour(self):
        """a_{L,K} on internal faces."""
        ni = self.n_internal
        return -(self.area[:ni] * (1.0 - self.lam[:ni]))[:, None] * self.normal[:ni]

    def b_owner(self):
        """b_{K,L} = |sigma| lambda^2 J n on internal faces (J n equals k)."""
        ni = self.n_internal
        return (self.area[:ni] * self.lam[:ni] ** 2)[:, None] * self.k[:ni]

    def b_neighbour(self):
        """b_{L,K} = |sigma| (1 - lambda)^2 J n_L on internal faces."""
        ni = self.n_internal
        return -(self.area[:ni] * (1.0 - self.lam[:ni]) ** 2)[:, None] * self.k[:ni]


def _cell_alpha(mesh, alpha):
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (mesh.n_cells,))
    if np.any(a <= 0.0):
        raise ValueError("diffusivity must be positive in every cell")
    return a


def face_coefficients(mesh, alpha=1.0, mode="linear"):
    """Build the face coefficients for a per-cell (or constant) diffusivity.

    Parameters
    ----------
    mesh : Mesh
    alpha : float or (n_cells,) array
    mode : {"linear", "diamond"}
        Face diffusivity by linear interpolation with the owner weight
        d_L / d_KL, or by the volume average over the two half-diamonds.

    Raises
    ------
    FaceDegenerate
        If n.i <= 1e-12 on some face.
    """
    if mode not in ("linear", "diamond"):
        raise ValueError(f"unknown face diffusivity mode {mode!r}")
    ni = mesh.n_internal
    a_cell = _cell_alpha(mesh, alpha)
    own, nb = mesh.owner, mesh.neighbour
    xk = mesh.cell_centers[own]

    vec = mesh.face_centroid - xk
    vec[:ni] = mesh.cell_centers[nb] - xk[:ni]
    i = vec / np.linalg.norm(vec, axis=1)[:, None]
    n = mesh.face_normal
    ndi = np.einsum("ij,ij->i", n, i)
    bad = np.flatnonzero(ndi <= DEGENERATE_NI)
    if bad.size:
        f = int(bad[0])
        raise FaceDegenerate(f"face {f}: n.i = {ndi[f]:.3e}, correction vector unbounded")
    k = n - i / ndi[:, None]
    # faces orthogonal up to round-off in the centroids get an exact zero
    k[np.linalg.norm(k, axis=1) <= ORTHO_TOL] = 0.0

    d_kl = mesh.d_cell_to_cell
    lam = np.ones(mesh.n_faces)
    lam[:ni] = mesh.d_neighbour / d_kl[:ni]

    alpha_f = a_cell[own].copy()
    if mode == "linear":
        alpha_f[:ni] = lam[:ni] * a_cell[own[:ni]] + (1.0 - lam[:ni]) * a_cell[nb]
    else:
        alpha_f[:ni] = (
            mesh.d_owner[:ni] * a_cell[own[:ni]] + mesh.d_neighbour * a_cell[nb]
        ) / d_kl[:ni]

    return FaceCoefficients(
        area=mesh.face_area, normal=n, i=i, n_dot_i=ndi, k=k, d_kl=d_kl,
        tau=mesh.face_area / d_kl, lam=lam, alpha=alpha_f, n_internal=ni,
    )


def _coeffs(mesh, coeffs, alpha=1.0):
    return face_coefficients(mesh, alpha) if coeffs is None else coeffs


def _scatter_vec(mesh, owner_part, neighbour_part):
    """Sum per-face vectors into cells: owner_part goes to owners (all
    faces), neighbour_part to neighbours (internal faces)."""
    nc = mesh.n_cells
    out = np.empty((nc, 3))
    nb = mesh.neighbour
    for c in range(3):
        out[:, c] = np.bincount(mesh.owner, weights=owner_part[:, c], minlength=nc)
        out[:, c] += np.bincount(nb, weights=neighbour_part[:, c], minlength=nc)
    return out


def _scatter_scalar(mesh, owner_part, neighbour_part):
    nc = mesh.n_cells
    return np.bincount(mesh.owner, weights=owner_part, minlength=nc) + np.bincount(
        mesh.neighbour, weights=neighbour_part, minlength=nc
    )


def gauss_gradient(mesh, u, coeffs=None):
    """Gauss cell gradient with linear face interpolation and zero boundary values.

    grad_K u = (1/|K|) sum_sigma |sigma| (I_sigma u - u_K) n_{K,sigma}
    """
    c = _coeffs(mesh, coeffs)
    ni = mesh.n_internal
    u = np.asarray(u, dtype=float)
    uk = u[mesh.owner]
    face_val = np.zeros(mesh.n_faces)
    face_val[:ni] = c.lam[:ni] * uk[:ni] + (1.0 - c.lam[:ni]) * u[mesh.neighbour]
    w_own = c.area * (face_val - uk)
    w_nb = -c.area[:ni] * (face_val[:ni] - u[mesh.neighbour])
    g = _scatter_vec(mesh, w_own[:, None] * c.normal, w_nb[:, None] * c.normal[:ni])
    return g / mesh.cell_volume[:, None]


class LeastSquaresStencil:
    """Precomputed least-squares gradient vectors v_{K,sigma}.

    The weights are (d_K/d_KL) |sigma| / |dx|^2 on internal faces and
    |sigma| / |x_sigma - x_K|^2 on boundary faces.
    """

    def __init__(self, mesh, coeffs=None):
        c = _coeffs(mesh, coeffs)
        ni = mesh.n_internal
        own, nb = mesh.owner, mesh.neighbour
        dx_own = mesh.face_centroid - mesh.cell_centers[own]
        dx_own[:ni] = mesh.cell_centers[nb] - mesh.cell_centers[own[:ni]]
        dx_nb = -dx_own[:ni]
        r2 = np.einsum("ij,ij->i", dx_own, dx_own)
        w_own = mesh.face_area / r2
        w_own[:ni] *= mesh.d_owner[:ni] / c.d_kl[:ni]
        w_nb = mesh.face_area[:ni] / r2[:ni] * mesh.d_neighbour / c.d_kl[:ni]

        nc = mesh.n_cells
        W = np.zeros((nc, 3, 3))
        for a in range(3):
            for b in range(a, 3):
                col = _scatter_scalar(
                    mesh, w_own * dx_own[:, a] * dx_own[:, b], w_nb * dx_nb[:, a] * dx_nb[:, b]
                )
                W[:, a, b] = col
                W[:, b, a] = col
        det = np.linalg.det(W)
        scale = (np.trace(W, axis1=1, axis2=2) / 3.0) ** 3
        bad = np.flatnonzero(~(det > 1e-14 * scale))
        if bad.size:
            raise SingularStencil(f"cell {int(bad[0])}: least-squares weighting tensor is singular")
        Winv = np.linalg.inv(W)
        self.mesh = mesh
        self.v_own = w_own[:, None] * np.einsum("fij,fj->fi", Winv[own], dx_own)
        self.v_nb = w_nb[:, None] * np.einsum("fij,fj->fi", Winv[nb], dx_nb)
        self.weight_tensor = W

    def gradient(self, u, boundary_values=None):
        m = self.mesh
        ni = m.n_internal
        u = np.asarray(u, dtype=float)
        uk = u[m.owner]
        other = np.zeros(m.n_faces)
        other[:ni] = u[m.neighbour]
        if boundary_values is not None:
            other[ni:] = boundary_values
        du = other - uk
        return _scatter_vec(m, du[:, None] * self.v_own, -du[:ni, None] * self.v_nb)


def least_squares_gradient(mesh, u, boundary_values=None, stencil=None):
    """Weighted least-squares cell gradient.

    Parameters
    ----------
    boundary_values : array of length n_boundary, optional
        Values u_sigma at the boundary face centroids (zero by default).
    stencil : LeastSquaresStencil, optional
        Reuse precomputed vectors.
    """
    st = LeastSquaresStencil(mesh) if stencil is None else stencil
    return st.gradient(u, boundary_values)


def face_gradient(mesh, cell_grads, u, face=None, coeffs=None, midpoint=False):
    """Face gradients from cell gradients.

    Internal faces interpolate lambda grad_K + (1 - lambda) grad_L (or the plain
    average with ``midpoint=True``).  Boundary faces replace the normal
    component of grad_K by -u_K / d_{K,sigma}.

    Returns an ``(n_faces, 3)`` array, or a 3-vector if ``face`` is given.
    """
    c = _coeffs(mesh, coeffs)
    ni = mesh.n_internal
    g = np.asarray(cell_grads, dtype=float)
    u = np.asarray(u, dtype=float)
    gk = g[mesh.owner]
    lam = np.full(ni, 0.5) if midpoint else c.lam[:ni]
    out = np.empty((mesh.n_faces, 3))
    out[:ni] = lam[:, None] * gk[:ni] + (1.0 - lam)[:, None] * g[mesh.neighbour]
    n = c.normal[ni:]
    gb = gk[ni:]
    gn = np.einsum("ij,ij->i", gb, n)
    out[ni:] = gb - gn[:, None] * n - (u[mesh.owner[ni:]] / mesh.d_owner[ni:])[:, None] * n
    return out if face is None else out[face]


def cell_gradient(mesh, u, grad_scheme="gauss", coeffs=None, stencil=None):
    if grad_scheme == "gauss":
        return gauss_gradient(mesh, u, coeffs)
    if grad_scheme == "ls":
        return least_squares_gradient(mesh, u, stencil=stencil)
    raise ValueError(f"grad_scheme must be one of {GRAD_SCHEMES}, got {grad_scheme!r}")


def two_point_fluxes(mesh, u, coeffs):
    u = np.asarray(u, dtype=float)
    ni = mesh.n_internal
    du = u[mesh.owner].copy()
    du[:ni] -= u[mesh.neighbour]
    return coeffs.alpha * coeffs.tau * du


def correction_fluxes(mesh, u, coeffs, grad_scheme="gauss", stencil=None):
    """The explicit part alpha_sigma |sigma| k.grad_sigma u of every face flux."""
    g = cell_gradient(mesh, u, grad_scheme, coeffs, stencil)
    gf = face_gradient(mesh, g, u, coeffs=coeffs)
    return coeffs.alpha * coeffs.area * np.einsum("ij,ij->i", coeffs.k, gf)


def corrected_fluxes(mesh, u, alpha=1.0, grad_scheme="gauss", coeffs=None, stencil=None):
    """Owner-to-neighbour face fluxes F = alpha tau (u_K - u_L) - alpha |sigma| k.grad_sigma u.

    On boundary faces u_L is replaced by the zero boundary value.
    """
    c = _coeffs(mesh, coeffs, alpha)
    return two_point_fluxes(mesh, u, c) - correction_fluxes(mesh, u, c, grad_scheme, stencil)


def flux_divergence(mesh, F):
    """Net outward flux sum_sigma F_{K,sigma} of every cell."""
    F = np.asarray(F, dtype=float)
    return _scatter_scalar(mesh, F, -F[: mesh.n_internal])


def parallel_inner_product(mesh, u, v, alpha=1.0, coeffs=None):
    """[u, v]_{D,alpha,par}: the symmetric two-point bilinear form."""
    c = _coeffs(mesh, coeffs, alpha)
    ni = mesh.n_internal
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    du = u[mesh.owner].copy()
    dv = v[mesh.owner].copy()
    du[:ni] -= u[mesh.neighbour]
    dv[:ni] -= v[mesh.neighbour]
    return float(np.sum(c.alpha * c.tau * du * dv))


def discrete_norm(mesh, u, coeffs=None):
    """||u||_D, the two-point norm with unit diffusivity."""
    if coeffs is not None and not np.all(coeffs.alpha == 1.0):
        coeffs = None
    return float(np.sqrt(parallel_inner_product(mesh, u, u, 1.0, coeffs)))


def _biased(mesh, u, c_own, c_nb):
    """(1/|K|) (sum_L c_{K,L} (u_L - u_K) - sum_ext c_{K,sigma} u_K)."""
    ni = mesh.n_internal
    u = np.asarray(u, dtype=float)
    du = -u[mesh.owner]
    du[:ni] += u[mesh.neighbour]
    g = _scatter_vec(mesh, du[:, None] * c_own, -du[:ni, None] * c_nb)
    return g / mesh.cell_volume[:, None]


def biased_gradients(mesh, u, alpha=1.0, coeffs=None):
    """The alpha-, parallel- and non-parallel-biased cell gradients.

    Returns
    -------
    (grad_alpha, grad_par, grad_npar) : three (n_cells, 3) arrays
        Built from alpha a, Gamma_par a and Gamma_npar a respectively, so
        that grad_npar = grad_alpha - grad_par up to round-off.
    """
    c = _coeffs(mesh, coeffs, alpha)
    ni = mesh.n_internal
    a_own = c.a_owner()
    a_nb = c.a_neighbour()
    al = c.alpha[:, None]
    full = _biased(mesh, u, al * a_own, al[:ni] * a_nb)
    # Gamma_par a = alpha (i.a) / (i.n)^2 i
    ia_own = np.einsum("ij,ij->i", c.i, a_own) / c.n_dot_i**2
    ia_nb = np.einsum("ij,ij->i", c.i[:ni], a_nb) / c.n_dot_i[:ni] ** 2
    p_own = (c.alpha * ia_own)[:, None] * c.i
    p_nb = (c.alpha[:ni] * ia_nb)[:, None] * c.i[:ni]
    # on faces treated as orthogonal (k = 0) Gamma_par a is alpha a exactly
    ortho = ~np.any(c.k, axis=1)
    p_own[ortho] = (al * a_own)[ortho]
    p_nb[ortho[:ni]] = (al[:ni] * a_nb)[ortho[:ni]]
    par = _biased(mesh, u, p_own, p_nb)
    # Gamma_npar a = alpha J a, and J n = k
    s_own = c.alpha * c.area * c.lam
    s_nb = -c.alpha[:ni] * c.area[:ni] * (1.0 - c.lam[:ni])
    npar = _biased(mesh, u, s_own[:, None] * c.k, s_nb[:, None] * c.k[:ni])
    return full, par, npar


def nonparallel_bilinear(mesh, u, v, alpha=1.0, coeffs=None, grad=None):
    """<grad u, grad v>_{D,alpha,npar} = sum_K |K| grad_K u . (Gamma_npar grad v)_K.

    ``grad`` defaults to the Gauss gradient of ``u``.
    """
    c = _coeffs(mesh, coeffs, alpha)
    g = gauss_gradient(mesh, u, c) if grad is None else grad
    npar = biased_gradients(mesh, v, coeffs=c)[2]
    return float(np.sum(mesh.cell_volume * np.einsum("ij,ij->i", g, npar)))


class Distortion(NamedTuple):
    lhs: float
    rhs: float
    satisfied: bool
    margin: float


def distortion_condition(mesh, u, coeffs=None):
    """Small gradient distortion test sum |K| grad u . grad_1 u >= sum |K| grad u . grad_1,par u."""
    if coeffs is not None and not np.all(coeffs.alpha == 1.0):
        coeffs = None
    c = _coeffs(mesh, coeffs)
    g = gauss_gradient(mesh, u, c)
    full, par, _ = biased_gradients(mesh, u, coeffs=c)
    vol = mesh.cell_volume
    lhs = float(np.sum(vol * np.einsum("ij,ij->i", g, full)))
    rhs = float(np.sum(vol * np.einsum("ij,ij->i", g, par)))
    return Distortion(lhs, rhs, lhs >= rhs - 1e-12 * abs(lhs), lhs - rhs)


def l2_norm(mesh, u):
    """Volume-weighted L2 norm of a cell field or cell vector field."""
    u = np.asarray(u, dtype=float)
    sq = u**2 if u.ndim == 1 else np.einsum("ij,ij->i", u, u)
    return float(np.sqrt(np.sum(mesh.cell_volume * sq)))
