"""JSON mesh and solution files."""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError, TopologyError
from .mesh import Mesh

MESH_KEYS = ("points", "faces", "owner", "neighbour", "n_internal_faces")


def mesh_to_dict(mesh, meta=None):
    faces = [
        mesh.face_vertices[a:b].tolist()
        for a, b in zip(mesh.face_offsets[:-1], mesh.face_offsets[1:])
    ]
    out = {
        "points": mesh.points.tolist(),
        "faces": faces,
        "owner": mesh.owner.tolist(),
        "neighbour": mesh.neighbour.tolist(),
        "n_internal_faces": int(mesh.n_internal),
    }
    if mesh.centers_overridden:
        out["cell_centers"] = mesh.cell_centers.tolist()
    if meta:
        out["meta"] = dict(meta)
    return out


def save_mesh(mesh, path, meta=None):
    """Write ``mesh`` as JSON.  Output is byte-for-byte deterministic."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mesh_to_dict(mesh, meta), fh, separators=(",", ":"))
        fh.write("\n")


def _array(doc, key, dtype, shape_tail=()):
    try:
        arr = np.asarray(doc[key], dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"key {key!r}: {exc}") from None
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        if not (arr.size == 0 and shape_tail):
            raise ParseError(f"key {key!r}: expected shape (N{''.join(f', {s}' for s in shape_tail)}), got {arr.shape}")
        arr = arr.reshape((0,) + shape_tail)
    return arr


def mesh_from_dict(doc):
    """Build a Mesh from a decoded JSON document.

    Raises
    ------
    ParseError
        Missing keys or values of the wrong type or shape.
    TopologyError
        Inconsistent counts or indices out of range.
    """
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")
    missing = [k for k in MESH_KEYS if k not in doc]
    if missing:
        raise ParseError(f"missing keys: {', '.join(missing)}")
    points = _array(doc, "points", float, (3,))
    owner = _array(doc, "owner", np.int64)
    neighbour = _array(doc, "neighbour", np.int64)
    n_int = doc["n_internal_faces"]
    if isinstance(n_int, bool) or not isinstance(n_int, int):
        raise ParseError(f"n_internal_faces must be an integer, got {n_int!r}")

    faces = doc["faces"]
    if not isinstance(faces, list):
        raise ParseError("'faces' must be an array of vertex-index arrays")
    loops = []
    for f, loop in enumerate(faces):
        if not isinstance(loop, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in loop
        ):
            raise ParseError(f"faces[{f}]: expected an array of integers")
        if len(loop) < 3:
            raise TopologyError(f"faces[{f}]: a face needs at least 3 vertices")
        loops.append(loop)

    if owner.size != len(loops):
        raise TopologyError(f"owner has {owner.size} entries for {len(loops)} faces")
    if not 0 <= n_int <= len(loops):
        raise TopologyError(f"n_internal_faces={n_int} outside [0, {len(loops)}]")
    if neighbour.size != n_int:
        raise TopologyError(
            f"neighbour has {neighbour.size} entries but n_internal_faces={n_int}"
        )
    flat = np.fromiter((v for loop in loops for v in loop), dtype=np.int64)
    if flat.size and (flat.min() < 0 or flat.max() >= len(points)):
        bad = int(np.flatnonzero((flat < 0) | (flat >= len(points)))[0])
        raise TopologyError(f"vertex index {int(flat[bad])} out of range [0, {len(points)})")
    cells = np.concatenate([owner, neighbour])
    if cells.size and cells.min() < 0:
        raise TopologyError("negative cell index in owner/neighbour")
    centers = None
    if doc.get("cell_centers") is not None:
        centers = _array(doc, "cell_centers", float, (3,))
        n_cells = int(cells.max()) + 1 if cells.size else 0
        if len(centers) != n_cells:
            raise TopologyError(f"cell_centers has {len(centers)} rows for {n_cells} cells")
    return Mesh.from_faces(points, loops, owner, neighbour, n_int, cell_centers=centers)


def load_mesh(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return mesh_from_dict(doc)


def load_meta(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return doc.get("meta", {}) if isinstance(doc, dict) else {}


def save_solution(path, u, outer_iters, stagnated, extra=None):
    doc = {"u": np.asarray(u, dtype=float).tolist(), "outer_iters": int(outer_iters),
           "stagnated": bool(stagnated)}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_solution(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "u" not in doc:
        raise ParseError(f"{path}: expected an object with key 'u'")
    return doc
