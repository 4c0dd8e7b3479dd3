"""Polyhedral mesh data model, geometry kernels and invariant audits.

Faces are stored owner-outward as vertex loops in a compressed layout
(``face_offsets`` into ``face_vertices``). Internal faces come first; the
first ``n_internal`` entries of ``owner`` pair with ``neighbour``.
Non-planar loops are handled by fan triangulation about the vertex average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateFace,
    InvertedCell,
    OpenCell,
    StarShapeViolation,
    TopologyError,
)

_DEGENERATE_AREA = 1e-14


def _fan_triangles(points, offsets, verts):
    """Per-slot fan triangles of every face about its vertex average.

    Returns (face_of_slot, area_vectors, tri_centroids, vertex_average).
    """
    counts = np.diff(offsets)
    n_faces = counts.size
    face_of_slot = np.repeat(np.arange(n_faces), counts)
    slot = np.arange(verts.size)
    nxt = slot + 1
    last = offsets[1:] - 1
    nxt[last] = offsets[:-1]

    p = points[verts]
    centre = np.empty((n_faces, 3))
    for k in range(3):
        centre[:, k] = np.bincount(face_of_slot, weights=p[:, k], minlength=n_faces)
    centre /= counts[:, None]

    c = centre[face_of_slot]
    q = points[verts[nxt]]
    avec = 0.5 * np.cross(p - c, q - c)
    tcen = (c + p + q) / 3.0
    return face_of_slot, avec, tcen, centre


def _face_geometry_arrays(points, offsets, verts):
    face_of_slot, avec, tcen, centre = _fan_triangles(points, offsets, verts)
    n_faces = offsets.size - 1
    tri_area = np.linalg.norm(avec, axis=1)
    area = np.bincount(face_of_slot, weights=tri_area, minlength=n_faces)
    svec = np.empty((n_faces, 3))
    centroid = np.empty((n_faces, 3))
    for k in range(3):
        svec[:, k] = np.bincount(face_of_slot, weights=avec[:, k], minlength=n_faces)
        centroid[:, k] = np.bincount(
            face_of_slot, weights=tri_area * tcen[:, k], minlength=n_faces
        )

    radius = np.zeros(n_faces)
    np.maximum.at(radius, face_of_slot, np.linalg.norm(points[verts] - centre[face_of_slot], axis=1))
    smag = np.linalg.norm(svec, axis=1)
    bad = (area <= _DEGENERATE_AREA * (2.0 * radius) ** 2) | (smag == 0.0)
    if np.any(bad):
        f = int(np.flatnonzero(bad)[0])
        raise DegenerateFace(f"face {f} is degenerate (area {area[f]:.3e})")
    centroid /= area[:, None]
    normal = svec / smag[:, None]
    return area, normal, centroid


def face_geometry(vertex_loop):
    """Area, unit normal and centroid of one face given as a point loop.

    The normal follows the right-hand rule of the loop ordering.
    """
    pts = np.asarray(vertex_loop, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise DegenerateFace("a face needs at least three 3D vertices")
    diam2 = max(
        float(np.sum((pts[i] - pts[j]) ** 2))
        for i in range(len(pts))
        for j in range(i + 1, len(pts))
    )
    offsets = np.array([0, len(pts)])
    verts = np.arange(len(pts))
    face_of_slot, avec, tcen, _ = _fan_triangles(pts, offsets, verts)
    tri_area = np.linalg.norm(avec, axis=1)
    area = tri_area.sum()
    svec = avec.sum(axis=0)
    if area <= _DEGENERATE_AREA * diam2 or not np.any(svec):
        raise DegenerateFace(f"degenerate face loop (area {area:.3e})")
    centroid = (tri_area[:, None] * tcen).sum(axis=0) / area
    return float(area), svec / np.linalg.norm(svec), centroid


def _as_offsets(faces):
    counts = np.fromiter((len(f) for f in faces), dtype=np.int64, count=len(faces))
    offsets = np.zeros(len(faces) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = np.fromiter(
        (v for f in faces for v in f), dtype=np.int64, count=int(offsets[-1])
    )
    return offsets, flat


class Mesh:
    """Immutable face-based polyhedral mesh with cached derived geometry.

    Parameters
    ----------
    points : (P, 3) array_like
    face_offsets, face_vertices : compressed face-to-vertex loops
    owner : (F,) cell index of each face
    neighbour : (n_internal,) cell index on the far side of internal faces
    n_internal : number of internal faces (stored first)
    cell_centers : optional (C, 3) override of x_K; defaults to volume centroids
    """

    def __init__(
        self,
        points,
        face_offsets,
        face_vertices,
        owner,
        neighbour,
        n_internal,
        cell_centers=None,
    ):
        self.points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
        self.face_offsets = np.ascontiguousarray(face_offsets, dtype=np.int64)
        self.face_vertices = np.ascontiguousarray(face_vertices, dtype=np.int64)
        self.owner = np.ascontiguousarray(owner, dtype=np.int64)
        self.neighbour = np.ascontiguousarray(neighbour, dtype=np.int64)
        self.n_internal = int(n_internal)
        self._check_topology()

        self.n_faces = self.owner.size
        self.n_cells = int(max(self.owner.max(initial=-1), self.neighbour.max(initial=-1))) + 1

        self.face_area, self.face_normal, self.face_centroid = _face_geometry_arrays(
            self.points, self.face_offsets, self.face_vertices
        )
        self._cell_geometry_arrays()
        if cell_centers is None:
            self.cell_centers = self.cell_centroid.copy()
            self.centers_overridden = False
        else:
            cc = np.asarray(cell_centers, dtype=float).reshape(-1, 3)
            if cc.shape[0] != self.n_cells:
                raise TopologyError(
                    f"cell_centers has {cc.shape[0]} rows for {self.n_cells} cells"
                )
            self.cell_centers = cc.copy()
            self.centers_overridden = True

        ni = self.n_internal
        self.d_owner = np.einsum(
            "ij,ij->i", self.face_centroid - self.cell_centers[self.owner], self.face_normal
        )
        self.d_neighbour = np.einsum(
            "ij,ij->i",
            self.cell_centers[self.neighbour] - self.face_centroid[:ni],
            self.face_normal[:ni],
        )
        self.cell_diameter = self._cell_diameters()
        for arr in self._cached_arrays():
            arr.setflags(write=False)

    @classmethod
    def from_faces(cls, points, faces, owner, neighbour, n_internal, cell_centers=None):
        """Build from a list of per-face vertex-index loops."""
        offsets, flat = _as_offsets(faces)
        return cls(points, offsets, flat, owner, neighbour, n_internal, cell_centers)

    def _cached_arrays(self):
        return (
            self.points, self.face_offsets, self.face_vertices, self.owner,
            self.neighbour, self.face_area, self.face_normal, self.face_centroid,
            self.cell_volume, self.cell_centroid, self.cell_centers, self.d_owner,
            self.d_neighbour, self.cell_diameter,
        )

    def _check_topology(self):
        nf = self.owner.size
        if self.face_offsets.size != nf + 1:
            raise TopologyError(
                f"{self.face_offsets.size - 1} face loops for {nf} owner entries"
            )
        if not 0 <= self.n_internal <= nf:
            raise TopologyError(f"n_internal={self.n_internal} outside [0, {nf}]")
        if self.neighbour.size != self.n_internal:
            raise TopologyError(
                f"neighbour has {self.neighbour.size} entries, expected n_internal="
                f"{self.n_internal}"
            )
        if np.any(np.diff(self.face_offsets) < 3):
            raise TopologyError("every face needs at least three vertices")
        if self.face_vertices.size and (
            self.face_vertices.min() < 0 or self.face_vertices.max() >= len(self.points)
        ):
            raise TopologyError("face vertex index out of range")
        if self.owner.size and self.owner.min() < 0:
            raise TopologyError("negative owner index")
        if self.neighbour.size and self.neighbour.min() < 0:
            raise TopologyError("negative neighbour index")
        if np.any(self.owner[: self.n_internal] == self.neighbour):
            raise TopologyError("internal face with owner == neighbour")

    # -- derived topology -------------------------------------------------
    @property
    def n_boundary(self):
        return self.n_faces - self.n_internal

    @property
    def n_points(self):
        return len(self.points)

    def face_loop(self, f):
        return self.face_vertices[self.face_offsets[f] : self.face_offsets[f + 1]]

    @property
    def cell_faces(self):
        """(offsets, faces, sign) listing the faces of each cell.

        ``sign`` is +1 where the cell owns the face and -1 where it is the
        neighbour, i.e. the factor turning ``face_normal`` outward.
        """
        if not hasattr(self, "_cell_faces"):
            ni = self.n_internal
            cells = np.concatenate([self.owner, self.neighbour])
            faces = np.concatenate([np.arange(self.n_faces), np.arange(ni)])
            sign = np.concatenate([np.ones(self.n_faces), -np.ones(ni)])
            order = np.lexsort((faces, cells))
            offsets = np.zeros(self.n_cells + 1, dtype=np.int64)
            np.cumsum(np.bincount(cells, minlength=self.n_cells), out=offsets[1:])
            self._cell_faces = (offsets, faces[order], sign[order])
        return self._cell_faces

    def _cell_vertex_pairs(self):
        """Unique (cell, vertex) incidences sorted by cell."""
        counts = np.diff(self.face_offsets)
        face_of_slot = np.repeat(np.arange(self.n_faces), counts)
        ni = self.n_internal
        cells = np.concatenate(
            [self.owner[face_of_slot], self.neighbour[face_of_slot[face_of_slot < ni]]]
        )
        verts = np.concatenate(
            [self.face_vertices, self.face_vertices[face_of_slot < ni]]
        )
        key = np.unique(cells * np.int64(len(self.points)) + verts)
        return key // len(self.points), key % len(self.points)

    def _cell_geometry_arrays(self):
        nc = self.n_cells
        cv_cell, cv_vert = self._cell_vertex_pairs()
        nverts = np.bincount(cv_cell, minlength=nc)
        if np.any(nverts == 0):
            raise TopologyError(f"cell {int(np.flatnonzero(nverts == 0)[0])} has no faces")
        apex = np.empty((nc, 3))
        for k in range(3):
            apex[:, k] = np.bincount(cv_cell, weights=self.points[cv_vert, k], minlength=nc)
        apex /= nverts[:, None]
        self._cell_vertex_cell = cv_cell
        self._cell_vertex_vert = cv_vert

        face_of_slot, avec, tcen, _ = _fan_triangles(
            self.points, self.face_offsets, self.face_vertices
        )
        ni = self.n_internal
        own = self.owner[face_of_slot]
        vol_o = np.einsum("ij,ij->i", tcen - apex[own], avec) / 3.0
        cen_o = (apex[own] + 3.0 * tcen) / 4.0
        inner = face_of_slot < ni
        nb = self.neighbour[face_of_slot[inner]]
        vol_n = -np.einsum("ij,ij->i", tcen[inner] - apex[nb], avec[inner]) / 3.0
        cen_n = (apex[nb] + 3.0 * tcen[inner]) / 4.0

        cells = np.concatenate([own, nb])
        vols = np.concatenate([vol_o, vol_n])
        cens = np.concatenate([cen_o, cen_n])
        volume = np.bincount(cells, weights=vols, minlength=nc)
        centroid = np.empty((nc, 3))
        for k in range(3):
            centroid[:, k] = np.bincount(cells, weights=vols * cens[:, k], minlength=nc)
        with np.errstate(divide="ignore", invalid="ignore"):
            centroid /= volume[:, None]
        self.cell_volume = volume
        self.cell_centroid = centroid

    def _cell_diameters(self, chunk=20000):
        cells, verts = self._cell_vertex_cell, self._cell_vertex_vert
        nverts = np.bincount(cells, minlength=self.n_cells)
        start = np.zeros(self.n_cells + 1, dtype=np.int64)
        np.cumsum(nverts, out=start[1:])
        diam = np.zeros(self.n_cells)
        for m in np.unique(nverts):
            group = np.flatnonzero(nverts == m)
            for lo in range(0, group.size, chunk):
                g = group[lo : lo + chunk]
                idx = start[g][:, None] + np.arange(m)[None, :]
                p = self.points[verts[idx]]
                diff = p[:, :, None, :] - p[:, None, :, :]
                diam[g] = np.sqrt((diff**2).sum(axis=-1).max(axis=(1, 2)))
        return diam

    # -- convenience ------------------------------------------------------
    @property
    def half_diamond_owner(self):
        return self.face_area * self.d_owner / 3.0

    @property
    def half_diamond_neighbour(self):
        return self.face_area[: self.n_internal] * self.d_neighbour / 3.0

    @property
    def d_cell_to_cell(self):
        """d_{K,L} = d_{K,sigma} + d_{L,sigma} on internal faces, d_{K,sigma} on boundary."""
        out = self.d_owner.copy()
        out[: self.n_internal] += self.d_neighbour
        return out

    @property
    def h(self):
        return float(self.cell_diameter.max())

    def boundary_faces(self):
        return np.arange(self.n_internal, self.n_faces)

    def copy_with_centers(self, cell_centers):
        return Mesh(
            self.points, self.face_offsets, self.face_vertices, self.owner,
            self.neighbour, self.n_internal, cell_centers,
        )

    def __repr__(self):
        return (
            f"Mesh(cells={self.n_cells}, faces={self.n_faces}, "
            f"internal={self.n_internal}, points={self.n_points})"
        )


def cell_geometry(cell, mesh, apex=None, tol=1e-10):
    """Volume and centroid of one cell from its face fan pyramids.

    ``apex`` defaults to the cell's vertex average; for a closed face set the
    result does not depend on it.
    """
    offsets, faces, sign = mesh.cell_faces
    sl = slice(offsets[cell], offsets[cell + 1])
    cfaces, csign = faces[sl], sign[sl]
    loops = [mesh.face_loop(f) for f in cfaces]
    if apex is None:
        apex = mesh.points[np.unique(np.concatenate(loops))].mean(axis=0)
    apex = np.asarray(apex, dtype=float)

    closure = np.zeros(3)
    volume = 0.0
    moment = np.zeros(3)
    area_sum = 0.0
    for loop, s in zip(loops, csign):
        pts = mesh.points[loop]
        c = pts.mean(axis=0)
        for i in range(len(pts)):
            a = 0.5 * np.cross(pts[i] - c, pts[(i + 1) % len(pts)] - c) * s
            t = (c + pts[i] + pts[(i + 1) % len(pts)]) / 3.0
            v = np.dot(t - apex, a) / 3.0
            volume += v
            moment += v * (apex + 3.0 * t) / 4.0
            closure += a
            area_sum += np.linalg.norm(a)
    if np.linalg.norm(closure) > tol * area_sum:
        raise OpenCell(f"cell {cell} faces do not close (residual {closure})")
    if volume <= 0.0:
        raise InvertedCell(f"cell {cell} has non-positive volume {volume:.3e}")
    return volume, moment / volume


def orthogonal_distance(cell, face, mesh):
    """d_{K,sigma}: signed distance of the cell centre to the face plane."""
    if face < mesh.n_internal and mesh.neighbour[face] == cell:
        d = float(mesh.d_neighbour[face])
    elif mesh.owner[face] == cell:
        d = float(mesh.d_owner[face])
    else:
        raise TopologyError(f"face {face} does not belong to cell {cell}")
    if d <= 0.0:
        raise StarShapeViolation(f"cell {cell} centre does not see face {face} (d={d:.3e})")
    return d


@dataclass
class InvariantCheck:
    name: str
    passed: bool
    worst: float
    tolerance: float
    n_failing: int = 0
    failing: list = field(default_factory=list)


@dataclass
class AuditReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self):
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(
                f"{flag}  {c.name:<22s} worst={c.worst:.3e} tol={c.tolerance:.0e}"
                f" failing={c.n_failing}"
            )
        return "\n".join(lines)


def _check(name, per_item, tol, keep=10):
    per_item = np.asarray(per_item, dtype=float)
    worst = float(per_item.max()) if per_item.size else 0.0
    bad = np.flatnonzero(~(per_item <= tol))
    return InvariantCheck(name, bad.size == 0, worst, tol, int(bad.size), bad[:keep].tolist())


def audit_mesh(mesh, closure_tol=1e-12, volume_tol=1e-12, tensor_tol=1e-10):
    """Evaluate every mesh invariant and report the worst violation of each.

    Relative measures use the local cell scale h_K (h_K^2 for areas,
    h_K^3 for volumes). Violations are reported, never raised.
    """
    nc = mesh.n_cells
    ni = mesh.n_internal
    h = mesh.cell_diameter
    ow, nb = mesh.owner, mesh.neighbour
    A, n, xs = mesh.face_area, mesh.face_normal, mesh.face_centroid
    xk = mesh.cell_centers

    checks = []

    # topology: each face listed once, internal faces have two distinct cells
    counts = np.diff(mesh.face_offsets)
    face_of_slot = np.repeat(np.arange(mesh.n_faces), counts)
    order = np.lexsort((mesh.face_vertices, face_of_slot))
    sorted_verts = mesh.face_vertices[order]
    dup = 0
    for m in np.unique(counts):
        sel = np.flatnonzero(counts == m)
        rows = sorted_verts[(mesh.face_offsets[sel][:, None] + np.arange(m)).ravel()].reshape(-1, m)
        _, cnt = np.unique(rows, axis=0, return_counts=True)
        dup += int((cnt - 1).sum())
    incidences = np.bincount(ow, minlength=nc) + np.bincount(nb, minlength=nc)
    empty = int(np.sum(incidences < 4))
    checks.append(
        InvariantCheck(
            "face_incidence", dup == 0 and empty == 0, float(dup + empty), 0.0, dup + empty
        )
    )

    # star-shapedness: d_{K,sigma} > 0
    dmin_cell = np.full(nc, np.inf)
    np.minimum.at(dmin_cell, ow, mesh.d_owner)
    np.minimum.at(dmin_cell, nb, mesh.d_neighbour)
    star = np.maximum(0.0, -dmin_cell / h)
    star_bad = np.flatnonzero(dmin_cell <= 0.0)
    checks.append(
        InvariantCheck(
            "star_shaped", star_bad.size == 0, float(star.max(initial=0.0)), 0.0,
            int(star_bad.size), star_bad[:10].tolist(),
        )
    )

    # closed-cell relation
    s = A[:, None] * n
    clo = np.zeros((nc, 3))
    for k in range(3):
        clo[:, k] = np.bincount(ow, weights=s[:, k], minlength=nc) - np.bincount(
            nb, weights=s[:ni, k], minlength=nc
        )
    checks.append(_check("closed_cell", np.linalg.norm(clo, axis=1) / h**2, closure_tol))

    # volume identity sum |sigma| d = 3 |K|
    vs = np.bincount(ow, weights=A * mesh.d_owner, minlength=nc) + np.bincount(
        nb, weights=A[:ni] * mesh.d_neighbour, minlength=nc
    )
    checks.append(_check("cell_volume", np.abs(vs - 3.0 * mesh.cell_volume) / h**3, volume_tol))

    # tensor identity sum |sigma| n (x_sigma - x_K)^T = |K| I
    T = np.zeros((nc, 3, 3))
    ro = xs - xk[ow]
    rn = xs[:ni] - xk[nb]
    for a in range(3):
        for b in range(3):
            T[:, a, b] = np.bincount(ow, weights=s[:, a] * ro[:, b], minlength=nc) - np.bincount(
                nb, weights=s[:ni, a] * rn[:, b], minlength=nc
            )
    T -= mesh.cell_volume[:, None, None] * np.eye(3)
    checks.append(_check("volume_tensor", np.abs(T).max(axis=(1, 2)) / h**3, tensor_tol))

    # positive volumes
    vol_bad = np.flatnonzero(mesh.cell_volume <= 0.0)
    checks.append(
        InvariantCheck(
            "positive_volume", vol_bad.size == 0,
            float(np.maximum(0.0, -mesh.cell_volume / h**3).max(initial=0.0)), 0.0,
            int(vol_bad.size), vol_bad[:10].tolist(),
        )
    )
    return AuditReport(checks)
