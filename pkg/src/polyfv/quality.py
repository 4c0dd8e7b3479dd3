"""Mesh quality metrics: non-orthogonality, aspect ratio, skewness,
regularity factor and mean resolution."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import NonConvexPairing

ROUNDOFF = 1e-12
CSV_COLUMNS = ("family", "mean_d", "mean_theta", "theta_max", "ar_max", "s_max", "theta_tilde")


@dataclass
class QualityReport:
    mean_d: float
    mean_theta: float
    theta_max: float
    ar_max: float
    s_max: float
    theta_tilde: float
    family: str = ""
    skew_undefined: int = 0

    def as_dict(self):
        return asdict(self)

    def csv_row(self):
        return [self.family] + [f"{getattr(self, c):.6g}" for c in CSV_COLUMNS[1:]]


def face_nonorthogonality(mesh):
    """Angle in degrees between x_L - x_K and n_{K,sigma} on every internal face."""
    ni = mesh.n_internal
    dx = mesh.cell_centers[mesh.neighbour] - mesh.cell_centers[mesh.owner[:ni]]
    dot = np.einsum("ij,ij->i", dx, mesh.face_normal[:ni])
    bad = np.flatnonzero(dot <= 0.0)
    if bad.size:
        raise NonConvexPairing(
            f"face {int(bad[0])}: normal points away from the neighbour centre"
        )
    c = np.clip(dot / np.linalg.norm(dx, axis=1), -1.0, 1.0)
    return np.degrees(np.arccos(c))


def cell_aspect_ratio(mesh):
    """max(bounding-box face-area ratio, total face area / (6 |K|^(2/3)))."""
    nc = mesh.n_cells
    cells, verts = mesh._cell_vertex_cell, mesh._cell_vertex_vert
    p = mesh.points[verts]
    lo = np.full((nc, 3), np.inf)
    hi = np.full((nc, 3), -np.inf)
    for k in range(3):
        np.minimum.at(lo[:, k], cells, p[:, k])
        np.maximum.at(hi[:, k], cells, p[:, k])
    ext = hi - lo
    box = np.column_stack([ext[:, 0] * ext[:, 1], ext[:, 1] * ext[:, 2], ext[:, 0] * ext[:, 2]])
    ar_bb = box.max(axis=1) / box.min(axis=1)
    total = np.bincount(mesh.owner, weights=mesh.face_area, minlength=nc) + np.bincount(
        mesh.neighbour, weights=mesh.face_area[: mesh.n_internal], minlength=nc
    )
    ar_area = total / (6.0 * mesh.cell_volume ** (2.0 / 3.0))
    ar = np.maximum(ar_bb, ar_area)
    ar[np.abs(ar - 1.0) <= ROUNDOFF] = 1.0
    return ar


def skewness(x_k, x_l, x_sigma, normal, vertices, boundary=False):
    """Skewness of a single face from explicit geometry.

    For boundary faces ``x_l`` is ignored and y_sigma is the orthogonal
    projection of x_K onto the face plane.
    """
    x_k, x_sigma, normal = (np.asarray(a, dtype=float) for a in (x_k, x_sigma, normal))
    vertices = np.asarray(vertices, dtype=float)
    if boundary:
        d = np.dot(x_sigma - x_k, normal)
        y = x_k + d * normal
        base = 0.4 * np.linalg.norm(y - x_k)
    else:
        x_l = np.asarray(x_l, dtype=float)
        t = np.dot(x_sigma - x_k, normal) / np.dot(x_l - x_k, normal)
        if not 0.0 <= t <= 1.0:
            return np.nan
        y = x_k + t * (x_l - x_k)
        base = 0.2 * np.linalg.norm(x_l - x_k)
    off = x_sigma - y
    dist = np.linalg.norm(off)
    if dist == 0.0:
        return 0.0
    e = off / dist
    f = max(base, np.abs((vertices - x_sigma) @ e).max())
    s = dist / f
    return 0.0 if s <= ROUNDOFF else s


def face_skewness(mesh):
    """Skewness of every face; NaN marks faces whose centre segment misses
    the face plane."""
    ni = mesh.n_internal
    nf = mesh.n_faces
    xk = mesh.cell_centers[mesh.owner]
    n = mesh.face_normal
    xs = mesh.face_centroid

    y = xk + mesh.d_owner[:, None] * n
    base = 0.4 * np.abs(mesh.d_owner)
    dx = mesh.cell_centers[mesh.neighbour] - xk[:ni]
    denom = np.einsum("ij,ij->i", dx, n[:ni])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = mesh.d_owner[:ni] / denom
    undefined = np.zeros(nf, dtype=bool)
    undefined[:ni] = ~((t >= 0.0) & (t <= 1.0))
    y[:ni] = xk[:ni] + np.where(undefined[:ni], 0.0, t)[:, None] * dx
    base[:ni] = 0.2 * np.linalg.norm(dx, axis=1)

    off = xs - y
    dist = np.linalg.norm(off, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(dist[:, None] > 0.0, off / dist[:, None], 0.0)
    counts = np.diff(mesh.face_offsets)
    fos = np.repeat(np.arange(nf), counts)
    proj = np.abs(np.einsum("ij,ij->i", mesh.points[mesh.face_vertices] - xs[fos], e[fos]))
    extent = np.zeros(nf)
    np.maximum.at(extent, fos, proj)
    s = dist / np.maximum(base, extent)
    # offsets at the round-off level of the centroids count as zero
    s[s <= ROUNDOFF] = 0.0
    s[undefined] = np.nan
    return s


def regularity_factor(mesh):
    """Minimum over faces of the distance ratios, h/d terms and n.i alignments.

    The h_K/d_{K,sigma} terms are kept as written even though they are >= 1
    and never attain the minimum.
    """
    ni = mesh.n_internal
    dk, dl = mesh.d_owner, mesh.d_neighbour
    hk = mesh.cell_diameter[mesh.owner]
    hl = mesh.cell_diameter[mesh.neighbour]
    xk = mesh.cell_centers[mesh.owner]
    i_int = mesh.cell_centers[mesh.neighbour] - xk[:ni]
    i_ext = mesh.face_centroid[ni:] - xk[ni:]
    i_int /= np.linalg.norm(i_int, axis=1)[:, None]
    i_ext /= np.linalg.norm(i_ext, axis=1)[:, None]
    n = mesh.face_normal
    terms = [
        dk[:ni] / dl,
        dl / dk[:ni],
        hk[:ni] / dk[:ni],
        hl / dl,
        np.einsum("ij,ij->i", n[:ni], i_int),
        hk[ni:] / dk[ni:],
        np.einsum("ij,ij->i", n[ni:], i_ext),
    ]
    theta = float(min(t.min(initial=np.inf) for t in terms))
    return 1.0 if abs(theta - 1.0) <= ROUNDOFF else theta


def mean_resolution(mesh):
    ni = mesh.n_internal
    dx = mesh.cell_centers[mesh.neighbour] - mesh.cell_centers[mesh.owner[:ni]]
    return float(np.linalg.norm(dx, axis=1).mean())


def quality_report(mesh, family=""):
    theta = face_nonorthogonality(mesh)
    s = face_skewness(mesh)
    return QualityReport(
        mean_d=mean_resolution(mesh),
        mean_theta=float(theta.mean()),
        theta_max=float(theta.max()),
        ar_max=float(cell_aspect_ratio(mesh).max()),
        s_max=float(np.nanmax(s)),
        theta_tilde=regularity_factor(mesh),
        family=family,
        skew_undefined=int(np.isnan(s).sum()),
    )
