"""Deterministic generators for the six mesh families on the unit cube.

Every family emits planar faces so the closed-cell and volume identities
hold to round-off. Amplitudes are fractions of the lattice spacing h = 1/n.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Voronoi

from .errors import CalibrationFailed, GenerationFailed, PolyFVError
from .mesh import Mesh

FAMILIES = ("hex", "hexskew", "triprism", "polyprism", "tet", "poly")

# Default amplitudes.  hexskew and tet come from calibrate() against the
# reference maximum angles at n=10 and n=12.  The prism families are left
# unjittered (random jitter spoils the Gauss scheme's second order on them)
# and poly cannot reach its reference angles with a jittered lattice.
DEFAULT_AMPLITUDE = {
    "hex": 0.0,
    "hexskew": 0.193,
    "triprism": 0.0,
    "polyprism": 0.0,
    "tet": 0.2,
    "poly": 0.3,
}
DEFAULT_SEED = 20120917


@dataclass(frozen=True)
class GenSpec:
    family: str
    n: int
    skew: float = 0.0
    jitter: float = 0.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        for name in ("skew", "jitter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.45:
                raise ValueError(f"{name}={v} outside [0, 0.45]")

    @property
    def amplitude(self):
        return self.skew if self.family == "hexskew" else self.jitter

    @classmethod
    def default(cls, family, n, seed=DEFAULT_SEED):
        amp = DEFAULT_AMPLITUDE[family]
        if family == "hexskew":
            return cls(family, n, skew=amp, seed=seed)
        return cls(family, n, jitter=amp, seed=seed)

    def with_amplitude(self, amp):
        if self.family == "hexskew":
            return GenSpec(self.family, self.n, skew=amp, jitter=self.jitter, seed=self.seed)
        return GenSpec(self.family, self.n, skew=self.skew, jitter=amp, seed=self.seed)


# ---------------------------------------------------------------------------
# face matching


def build_mesh(points, groups, cell_centers=None):
    """Assemble a Mesh from cells described by face loops.

    ``groups`` is a list of ``(cells, loops)`` with ``cells`` of shape (N,)
    and ``loops`` of shape (N, m): one face loop of m vertices per row, in
    any orientation. Shared faces are matched by vertex set, oriented
    outward from the owner (the lower cell index) and stored internal-first
    in ascending (owner, neighbour) order.
    """
    points = np.asarray(points, dtype=float)
    all_cells = np.concatenate([np.asarray(c, dtype=np.int64) for c, _ in groups])
    n_cells = int(all_cells.max()) + 1

    # reference point per cell: mean of its face vertex averages
    ref = np.zeros((n_cells, 3))
    nref = np.zeros(n_cells)
    for cells, loops in groups:
        fa = points[loops].mean(axis=1)
        for k in range(3):
            ref[:, k] += np.bincount(cells, weights=fa[:, k], minlength=n_cells)
        nref += np.bincount(cells, minlength=n_cells)
    ref /= nref[:, None]

    internal = []  # (owner, neighbour, loop)
    boundary = []  # (owner, key, loop)
    for cells, loops in groups:
        cells = np.asarray(cells, dtype=np.int64)
        loops = np.asarray(loops, dtype=np.int64)
        m = loops.shape[1]
        keys = np.sort(loops, axis=1)
        order = np.lexsort([cells] + [keys[:, c] for c in range(m - 1, -1, -1)])
        ks = keys[order]
        same_next = np.all(ks[1:] == ks[:-1], axis=1)
        if np.any(same_next[1:] & same_next[:-1]):
            raise GenerationFailed("a face is shared by more than two cells")
        first = np.flatnonzero(same_next)
        paired = np.zeros(len(order), dtype=bool)
        paired[first] = True
        paired[first + 1] = True
        a, b = order[first], order[first + 1]
        ca, cb = cells[a], cells[b]
        if np.any(ca == cb):
            raise GenerationFailed("a cell lists the same face twice", cell=int(ca[ca == cb][0]))
        own_row = np.where(ca < cb, a, b)
        internal.append((np.minimum(ca, cb), np.maximum(ca, cb), loops[own_row]))
        single = order[~paired]
        boundary.append((cells[single], keys[single, 0], loops[single]))

    def orient(owner, loops):
        p = points[loops]
        c = p.mean(axis=1)
        q = np.roll(p, -1, axis=1)
        s = 0.5 * np.cross(p - c[:, None, :], q - c[:, None, :]).sum(axis=1)
        flip = np.einsum("ij,ij->i", s, c - ref[owner]) < 0.0
        loops = loops.copy()
        loops[flip] = loops[flip, ::-1]
        return loops

    def flatten(block):
        owners = np.concatenate([blk[0] for blk in block])
        second = np.concatenate([blk[1] for blk in block])
        sizes = np.concatenate([np.full(len(blk[0]), blk[2].shape[1]) for blk in block])
        group_id = np.concatenate([np.full(len(blk[0]), g) for g, blk in enumerate(block)])
        within = np.concatenate([np.arange(len(blk[0])) for blk in block])
        order = np.lexsort((within, group_id, second, owners))
        oriented = [orient(blk[0], blk[2]) for blk in block]
        offsets = np.zeros(len(order) + 1, dtype=np.int64)
        np.cumsum(sizes[order], out=offsets[1:])
        flat = np.empty(offsets[-1], dtype=np.int64)
        for g, o in enumerate(oriented):
            sel = np.flatnonzero(group_id[order] == g)
            if sel.size == 0:
                continue
            rows = o[within[order][sel]]
            m = rows.shape[1]
            flat[(offsets[sel][:, None] + np.arange(m)).ravel()] = rows.ravel()
        return owners[order], second[order], offsets, flat

    own_i, nb_i, off_i, flat_i = flatten(internal)
    own_b, _, off_b, flat_b = flatten(boundary)
    owner = np.concatenate([own_i, own_b])
    offsets = np.concatenate([off_i[:-1], off_b + off_i[-1]])
    flat = np.concatenate([flat_i, flat_b])
    return Mesh(points, offsets, flat, owner, nb_i, len(own_i), cell_centers)


# ---------------------------------------------------------------------------
# structured lattices


def _lattice(n):
    g = np.linspace(0.0, 1.0, n + 1)
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel(), z.ravel()])


def _pid(n, i, j, k):
    return i + (n + 1) * (j + (n + 1) * k)


def _hex_groups(n):
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = (a.transpose(2, 1, 0).ravel() for a in (i, j, k))
    cell = i + n * (j + n * k)
    v = {
        (a, b, c): _pid(n, i + a, j + b, k + c)
        for a, b, c in itertools.product((0, 1), repeat=3)
    }
    quads = [
        [v[0, 0, 0], v[0, 0, 1], v[0, 1, 1], v[0, 1, 0]],
        [v[1, 0, 0], v[1, 1, 0], v[1, 1, 1], v[1, 0, 1]],
        [v[0, 0, 0], v[1, 0, 0], v[1, 0, 1], v[0, 0, 1]],
        [v[0, 1, 0], v[0, 1, 1], v[1, 1, 1], v[1, 1, 0]],
        [v[0, 0, 0], v[0, 1, 0], v[1, 1, 0], v[1, 0, 0]],
        [v[0, 0, 1], v[1, 0, 1], v[1, 1, 1], v[0, 1, 1]],
    ]
    loops = np.concatenate([np.stack(q, axis=1) for q in quads])
    cells = np.tile(cell, 6)
    return [(cells, loops)]


def _hex(spec):
    return build_mesh(_lattice(spec.n), _hex_groups(spec.n))


def _hexskew(spec):
    """Hex lattice under the smooth shear x -> x + s sin(pi x) (y + z - 1).

    On each lattice plane x = const the shift is affine in (y, z), so every
    quad stays planar; the planes x = 0 and x = 1 do not move and points on
    the other walls slide within them.  The map is a diffeomorphism of the
    unit cube for s < 1/pi, and because it does not depend on h the angle
    statistics are the same on every refinement level.
    """
    n = spec.n
    pts = _lattice(n)
    x, y, z = pts.T
    pts[:, 0] = x + spec.skew * np.sin(np.pi * x) * (y + z - 1.0)
    return build_mesh(pts, _hex_groups(n))


def _jitter_lattice(n, amp, rng):
    """(n+1)^3 lattice with nodes jittered by amp*h, boundary nodes kept on
    their face/edge/corner."""
    h = 1.0 / n
    pts = _lattice(n)
    d = rng.uniform(-amp * h, amp * h, size=pts.shape)
    on_bnd = (np.abs(pts) < 1e-14) | (np.abs(pts - 1.0) < 1e-14)
    d[on_bnd] = 0.0
    return pts + d


def _tet(spec):
    n = spec.n
    rng = np.random.default_rng(spec.seed)
    pts = _jitter_lattice(n, spec.jitter, rng)
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = (a.transpose(2, 1, 0).ravel() for a in (i, j, k))
    hexcell = i + n * (j + n * k)
    unit = np.eye(3, dtype=np.int64)
    cells, loops = [], []
    for t, perm in enumerate(itertools.permutations(range(3))):
        a = np.zeros(3, dtype=np.int64)
        path = [a.copy()]
        for axis in perm:
            a = a + unit[axis]
            path.append(a.copy())
        vid = [_pid(n, i + p[0], j + p[1], k + p[2]) for p in path]
        cid = 6 * hexcell + t
        for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            loops.append(np.stack([vid[q] for q in tri], axis=1))
            cells.append(cid)
    return build_mesh(pts, [(np.concatenate(cells), np.concatenate(loops))])


# ---------------------------------------------------------------------------
# prismatic families


def _square_triangulation(n, amp, rng):
    """n x n squares each split along the same diagonal, with optional
    interior jitter of amp*h.

    With parallel diagonals the triangulation is an affine image of the
    equilateral one, so every cell-centre segment passes through the
    midpoint of the shared edge.
    """
    h = 1.0 / n
    g = np.linspace(0.0, 1.0, n + 1)
    y, x = np.meshgrid(g, g, indexing="ij")
    p2 = np.column_stack([x.ravel(), y.ravel()])
    d = rng.uniform(-amp * h, amp * h, size=p2.shape)
    on_bnd = (np.abs(p2) < 1e-14) | (np.abs(p2 - 1.0) < 1e-14)
    d[on_bnd] = 0.0
    p2 = p2 + d
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a = (ii + (n + 1) * jj).ravel()
    b, c, dd = a + 1, a + n + 2, a + n + 1
    tris = np.empty((2 * a.size, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, dd])
    return p2, tris


def _triprism(spec):
    rng = np.random.default_rng(spec.seed)
    p2, tris = _square_triangulation(spec.n, spec.jitter, rng)
    pts, groups = _extrude(p2, len(tris), spec.n, {3: (np.arange(len(tris)), tris)})
    return build_mesh(pts, groups)


def _polyprism(spec):
    """Centroid dual of the triangulated square, extruded in z."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    p2, tris = _square_triangulation(n, spec.jitter, rng)
    nv = len(p2)
    cen = p2[tris].mean(axis=1)

    # boundary edges of the triangulation
    edges = {}
    for t, tri in enumerate(tris):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges.setdefault((min(a, b), max(a, b)), []).append(t)
    bedges = sorted(e for e, ts in edges.items() if len(ts) == 1)
    mid_id = {e: len(tris) + q for q, e in enumerate(bedges)}
    mids = np.array([(p2[a] + p2[b]) / 2.0 for a, b in bedges])

    on_x = (np.abs(p2[:, 0]) < 1e-14) | (np.abs(p2[:, 0] - 1.0) < 1e-14)
    on_y = (np.abs(p2[:, 1]) < 1e-14) | (np.abs(p2[:, 1] - 1.0) < 1e-14)
    corner = on_x & on_y
    corner_ids = np.flatnonzero(corner)
    corner_id = {int(v): len(tris) + len(bedges) + q for q, v in enumerate(corner_ids)}
    dual_pts = np.vstack([cen, mids, p2[corner_ids]])

    vtris = [[] for _ in range(nv)]
    for t, tri in enumerate(tris):
        for v in tri:
            vtris[v].append(t)
    vbedges = [[] for _ in range(nv)]
    for e in bedges:
        vbedges[e[0]].append(e)
        vbedges[e[1]].append(e)

    polys = []
    for v in range(nv):
        ids = list(vtris[v]) + [mid_id[e] for e in vbedges[v]]
        if corner[v]:
            ids.append(corner_id[v])
        rel = dual_pts[ids] - dual_pts[ids].mean(axis=0)
        order = np.argsort(np.arctan2(rel[:, 1], rel[:, 0]), kind="stable")
        polys.append([ids[q] for q in order])

    by_size = {}
    for v, ring in enumerate(polys):
        by_size.setdefault(len(ring), ([], []))
        by_size[len(ring)][0].append(v)
        by_size[len(ring)][1].append(ring)
    pts, groups = _extrude(dual_pts, nv, n, by_size)
    return build_mesh(pts, groups)


def _extrude(p2, n_polys, n_layers, by_size):
    """Extrude CCW 2D polygons, grouped by vertex count, into n_layers prisms."""
    npts = len(p2)
    z = np.linspace(0.0, 1.0, n_layers + 1)
    pts = np.column_stack([np.tile(p2, (n_layers + 1, 1)), np.repeat(z, npts)])
    groups = {}

    def add(m, cells, loops):
        groups.setdefault(m, ([], []))
        groups[m][0].append(cells)
        groups[m][1].append(loops)

    for m, (ids, polys) in by_size.items():
        polys = np.asarray(polys, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        q = np.roll(np.arange(m), -1)
        for layer in range(n_layers):
            cells = ids + n_polys * layer
            lo = polys + npts * layer
            hi = polys + npts * (layer + 1)
            add(m, cells, lo[:, ::-1])
            add(m, cells, hi)
            for e in range(m):
                add(4, cells, np.stack([lo[:, e], lo[:, q[e]], hi[:, q[e]], hi[:, e]], axis=1))
    return pts, [(np.concatenate(c), np.concatenate(l)) for c, l in groups.values()]


# ---------------------------------------------------------------------------
# clipped Voronoi


def _poly(spec):
    """Voronoi cells of a jittered seed lattice, clipped to the cube by
    mirroring the seeds across its six faces."""
    n = spec.n
    h = 1.0 / n
    rng = np.random.default_rng(spec.seed)
    c = (np.arange(n) + 0.5) * h
    z, y, x = np.meshgrid(c, c, c, indexing="ij")
    seeds = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    seeds = seeds + rng.uniform(-spec.jitter * h, spec.jitter * h, size=seeds.shape)
    ns = len(seeds)
    mirrored = [seeds]
    for axis in range(3):
        for wall in (0.0, 1.0):
            m = seeds.copy()
            m[:, axis] = 2.0 * wall - m[:, axis]
            mirrored.append(m)
    allp = np.vstack(mirrored)
    vor = Voronoi(allp)

    vert_map = {}
    cells, loops_by_size = [], {}
    for (a, b), rv in zip(vor.ridge_points, vor.ridge_vertices):
        if a >= ns and b >= ns:
            continue
        if -1 in rv:
            raise GenerationFailed("unbounded Voronoi ridge next to an interior seed")
        owner = a if a < ns else b
        pts = vor.vertices[rv]
        normal = allp[b] - allp[a]
        normal /= np.linalg.norm(normal)
        ctr = pts.mean(axis=0)
        e1 = pts[0] - ctr
        e1 -= normal * np.dot(e1, normal)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(normal, e1)
        ang = np.arctan2((pts - ctr) @ e2, (pts - ctr) @ e1)
        ring = [rv[q] for q in np.argsort(ang)]
        m = len(ring)
        entry = loops_by_size.setdefault(m, ([], []))
        if a < ns and b < ns:
            entry[0].append(a)
            entry[1].append(ring)
            entry[0].append(b)
            entry[1].append(ring)
        else:
            entry[0].append(owner)
            entry[1].append(ring)
        for q in ring:
            vert_map.setdefault(q, len(vert_map))

    used = np.fromiter(vert_map.keys(), dtype=np.int64)
    remap = np.full(len(vor.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    points = vor.vertices[used].copy()
    # snap round-off on the walls so boundary faces are exactly planar
    points[np.abs(points) < 1e-12] = 0.0
    points[np.abs(points - 1.0) < 1e-12] = 1.0
    groups = [
        (np.asarray(cs, dtype=np.int64), remap[np.asarray(ls, dtype=np.int64)])
        for cs, ls in loops_by_size.values()
    ]
    return build_mesh(points, groups)


_BUILDERS = {
    "hex": _hex,
    "hexskew": _hexskew,
    "triprism": _triprism,
    "polyprism": _polyprism,
    "tet": _tet,
    "poly": _poly,
}


def generate(spec):
    """Generate the mesh described by ``spec`` and verify d_{K,sigma} > 0."""
    mesh = _BUILDERS[spec.family](spec)
    bad = np.flatnonzero(mesh.d_owner <= 0.0)
    if bad.size:
        f = int(bad[0])
        raise GenerationFailed(
            f"{spec.family}: d_K,sigma <= 0 at face {f} of cell {int(mesh.owner[f])}",
            cell=int(mesh.owner[f]), face=f,
        )
    bad = np.flatnonzero(mesh.d_neighbour <= 0.0)
    if bad.size:
        f = int(bad[0])
        raise GenerationFailed(
            f"{spec.family}: d_L,sigma <= 0 at face {f} of cell {int(mesh.neighbour[f])}",
            cell=int(mesh.neighbour[f]), face=f,
        )
    if np.any(mesh.cell_volume <= 0.0):
        c = int(np.flatnonzero(mesh.cell_volume <= 0.0)[0])
        raise GenerationFailed(f"{spec.family}: cell {c} inverted", cell=c)
    return mesh


def calibrate(family, n, target_theta_max, seed=DEFAULT_SEED, tol=2.0, max_iter=40):
    """Find the amplitude whose mesh reaches a prescribed maximum angle.

    Bisection on the skew (hexskew) or jitter amplitude over [0, 0.45],
    assuming theta_max grows with the amplitude.  Amplitudes whose mesh
    cannot be built count as overshooting.

    Returns
    -------
    amplitude : float
    theta_max : float
        Achieved maximum non-orthogonality angle in degrees.

    Raises
    ------
    CalibrationFailed
        If no amplitude in range brings theta_max within ``tol`` degrees.
    """
    from .quality import face_nonorthogonality

    base = GenSpec(family, n, seed=seed)

    def theta_max(amp):
        try:
            return float(face_nonorthogonality(generate(base.with_amplitude(amp))).max())
        except (GenerationFailed, PolyFVError):
            return np.inf

    best_amp, best_theta = 0.0, theta_max(0.0)
    lo, hi = 0.0, 0.45
    for _ in range(max_iter):
        if abs(best_theta - target_theta_max) < 1e-3 or hi - lo < 1e-4:
            break
        mid = 0.5 * (lo + hi)
        th = theta_max(mid)
        if abs(th - target_theta_max) < abs(best_theta - target_theta_max):
            best_amp, best_theta = mid, th
        if th > target_theta_max:
            hi = mid
        else:
            lo = mid
    if not abs(best_theta - target_theta_max) <= tol:
        raise CalibrationFailed(
            f"{family}: best theta_max {best_theta:.3f} deg at amplitude {best_amp:.4f} "
            f"misses target {target_theta_max} deg",
            best_amplitude=best_amp, best_theta=best_theta,
        )
    return best_amp, best_theta
