"""Indexed triangle mesh, OBJ input/output, adjacency and topology queries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _cc

logger = logging.getLogger(__name__)

# relative to the squared bounding-box diagonal
DEGENERATE_AREA_EPS = 1e-12


class MeshError(ValueError):
    """Raised for malformed mesh input."""


class ObjParseError(MeshError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class LoadReport:
    dropped_faces: List[int] = field(default_factory=list)
    degenerate_faces: List[int] = field(default_factory=list)
    polygons_triangulated: int = 0

    def as_dict(self) -> dict:
        return {
            "dropped_faces": len(self.dropped_faces),
            "degenerate_faces": len(self.degenerate_faces),
            "polygons_triangulated": self.polygons_triangulated,
        }


class Mesh:
    """Immutable indexed triangle mesh.

    Parameters
    ----------
    positions : array-like of shape (n_vertices, 3)
    faces : array-like of shape (n_faces, 3)
        Vertex index triples. Faces with a repeated index are rejected;
        use :func:`load_obj` to drop them with a diagnostic instead.
    """

    def __init__(self, positions, faces):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(positions)):
            raise MeshError("face index out of range")
        if faces.size and np.any(
            (faces[:, 0] == faces[:, 1])
            | (faces[:, 1] == faces[:, 2])
            | (faces[:, 0] == faces[:, 2])
        ):
            raise MeshError("face with repeated vertex index")
        positions.setflags(write=False)
        faces.setflags(write=False)
        self.positions = positions
        self.faces = faces

    def __repr__(self) -> str:
        return f"Mesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def bbox_diagonal(self) -> float:
        if not len(self.positions):
            return 0.0
        used = self.positions[np.unique(self.faces)] if self.faces.size else self.positions
        return float(np.linalg.norm(used.max(axis=0) - used.min(axis=0)))

    # -- geometry ---------------------------------------------------------

    @cached_property
    def _geometry(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.positions[self.faces]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        norm = np.linalg.norm(cross, axis=1)
        area = 0.5 * norm
        degenerate = area <= DEGENERATE_AREA_EPS * self.bbox_diagonal**2
        normals = np.zeros_like(cross)
        ok = ~degenerate
        normals[ok] = cross[ok] / norm[ok, None]
        for a in (normals, area, degenerate):
            a.setflags(write=False)
        return normals, area, degenerate

    @property
    def face_normals(self) -> np.ndarray:
        return self._geometry[0]

    @property
    def face_areas(self) -> np.ndarray:
        return self._geometry[1]

    @property
    def degenerate_faces(self) -> np.ndarray:
        """Boolean mask of faces whose 3D area is below the degeneracy threshold."""
        return self._geometry[2]

    @property
    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    # -- adjacency --------------------------------------------------------

    @cached_property
    def _edge_data(self):
        f = self.faces
        corner_edges = np.stack(
            [f[:, [1, 2]], f[:, [2, 0]], f[:, [0, 1]]], axis=1
        )  # edge opposite corner j
        keys = np.sort(corner_edges.reshape(-1, 2), axis=1)
        if len(keys):
            edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        else:
            edges, inverse = np.zeros((0, 2), np.int64), np.zeros(0, np.int64)
        inverse = inverse.reshape(-1)
        face_edges = inverse.reshape(-1, 3)
        face_of = np.repeat(np.arange(len(f)), 3)
        order = np.lexsort((face_of, inverse))
        counts = np.bincount(inverse, minlength=len(edges))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        edge_face_flat = face_of[order]
        for a in (edges, face_edges, edge_face_flat, offsets, counts):
            a.setflags(write=False)
        return edges, face_edges, edge_face_flat, offsets, counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, shape (n_edges, 2)."""
        return self._edge_data[0]

    @property
    def face_edges(self) -> np.ndarray:
        """Edge id of the edge opposite each face corner, shape (n_faces, 3)."""
        return self._edge_data[1]

    @property
    def edge_valence(self) -> np.ndarray:
        return self._edge_data[4]

    def edge_faces(self, e: int) -> np.ndarray:
        """Incident face indices of edge ``e`` in ascending order."""
        _, _, flat, off, _ = self._edge_data
        return flat[off[e] : off[e + 1]]

    @cached_property
    def face_adjacency(self) -> np.ndarray:
        """Pairs ``(f, g)`` with ``f < g`` of faces sharing an edge, shape (n_pairs, 2)."""
        _, _, flat, off, counts = self._edge_data
        pairs = []
        two = np.flatnonzero(counts == 2)
        if len(two):
            pairs.append(np.stack([flat[off[two]], flat[off[two] + 1]], axis=1))
        for e in np.flatnonzero(counts > 2):
            fs = flat[off[e] : off[e + 1]]
            i, j = np.triu_indices(len(fs), 1)
            pairs.append(np.stack([fs[i], fs[j]], axis=1))
        if not pairs:
            out = np.zeros((0, 2), np.int64)
        else:
            out = np.unique(np.concatenate(pairs), axis=0)
        out.setflags(write=False)
        return out

    @cached_property
    def face_adjacency_matrix(self) -> sparse.csr_matrix:
        n = self.n_faces
        a = self.face_adjacency
        m = sparse.coo_matrix(
            (np.ones(len(a) * 2), (np.r_[a[:, 0], a[:, 1]], np.r_[a[:, 1], a[:, 0]])),
            shape=(n, n),
        )
        return m.tocsr()

    def face_neighbors(self, f: int) -> np.ndarray:
        m = self.face_adjacency_matrix
        return m.indices[m.indptr[f] : m.indptr[f + 1]]

    def submesh(self, faces: Sequence[int]) -> Tuple["Mesh", np.ndarray]:
        """Extract faces as a standalone mesh.

        Returns the submesh and the parent vertex index of every submesh vertex.
        """
        faces = np.asarray(faces, dtype=np.int64)
        tri = self.faces[faces]
        verts, local = np.unique(tri.reshape(-1), return_inverse=True)
        return Mesh(self.positions[verts], local.reshape(-1, 3)), verts


def as_faceset(faces: Iterable[int], n_faces: Optional[int] = None) -> np.ndarray:
    out = np.unique(np.asarray(list(faces) if not isinstance(faces, np.ndarray) else faces, dtype=np.int64))
    if n_faces is not None and len(out) and (out[0] < 0 or out[-1] >= n_faces):
        raise MeshError("face index out of range")
    return out


def face_geometry(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Per-face unit normals and 3D areas. Degenerate faces get a zero normal."""
    return mesh.face_normals, mesh.face_areas


# -- OBJ ---------------------------------------------------------------------


def load_obj(path, return_report: bool = False):
    """Read an ASCII Wavefront OBJ file.

    Polygons are fan-triangulated. Faces with repeated vertex indices are
    dropped and listed in the load report (so a file can load with zero
    faces); zero-area faces are kept but flagged. A file without any face
    record is an error.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ObjParseError(f"cannot read {path}: {exc}") from exc

    positions: List[Tuple[float, float, float]] = []
    raw_faces: List[Tuple[int, int, int]] = []
    face_lines: List[int] = []
    report = LoadReport()
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            try:
                positions.append(tuple(float(x) for x in parts[1:4]))
            except ValueError:
                raise ObjParseError("malformed vertex record", lineno) from None
            if len(positions[-1]) != 3:
                raise ObjParseError("vertex record needs 3 coordinates", lineno)
        elif tag == "f":
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ObjParseError(f"malformed face index {token!r}", lineno) from None
                # negative indices are relative to the current vertex count
                i = i - 1 if i > 0 else len(positions) + i
                if i < 0 or i >= len(positions):
                    raise ObjParseError(f"face index {head} out of range", lineno)
                idx.append(i)
            if len(idx) < 3:
                raise ObjParseError("face with fewer than 3 vertices", lineno)
            if len(idx) > 3:
                report.polygons_triangulated += 1
            for k in range(1, len(idx) - 1):
                raw_faces.append((idx[0], idx[k], idx[k + 1]))
                face_lines.append(lineno)

    kept = []
    for i, (a, b, c) in enumerate(raw_faces):
        if a == b or b == c or a == c:
            report.dropped_faces.append(face_lines[i])
        else:
            kept.append((a, b, c))
    if not raw_faces:
        raise ObjParseError(f"{path}: no faces")
    mesh = Mesh(np.array(positions, dtype=np.float64).reshape(-1, 3),
                np.array(kept, dtype=np.int64).reshape(-1, 3))
    report.degenerate_faces = np.flatnonzero(mesh.degenerate_faces).tolist()
    if report.dropped_faces:
        logger.info("dropped %d faces with repeated indices", len(report.dropped_faces))
    if return_report:
        return mesh, report
    return mesh


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_obj(path, positions, uvs, faces, face_uvs, groups=None, mtllib=None) -> None:
    """Write positions, texture coordinates and ``f v/vt`` records.

    With ``face_uvs=None`` plain ``f a b c`` records are written.
    ``groups`` optionally gives, per face, a material group name; a
    ``usemtl`` line is emitted whenever it changes.
    """
    lines = []
    if mtllib:
        lines.append(f"mtllib {mtllib}")
    lines.extend(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in positions)
    lines.extend(f"vt {_fmt(u)} {_fmt(v)}" for u, v in uvs)
    current = None
    for i, tri in enumerate(faces):
        if groups is not None and groups[i] != current:
            current = groups[i]
            lines.append(f"usemtl {current}")
        if face_uvs is None:
            lines.append("f " + " ".join(str(a + 1) for a in tri))
        else:
            lines.append("f " + " ".join(f"{a + 1}/{b + 1}" for a, b in zip(tri, face_uvs[i])))
    Path(path).write_text("\n".join(lines) + "\n")


# -- topology ----------------------------------------------------------------


def repair_non_manifold(mesh: Mesh) -> Mesh:
    """Split non-manifold edges and vertices by duplicating vertices.

    For an edge with ``N > 2`` incident faces, the two lowest-index faces keep
    the edge and every other face is detached from it, which yields ``N - 1``
    distinct edges. Each vertex is then duplicated once per edge-connected fan
    of its incident faces (this also splits bowtie vertices). Faces keep their
    order and corner positions, so face count and surface area are unchanged.
    Returns ``mesh`` itself when nothing needs repair.
    """
    faces = mesh.faces
    n_faces = len(faces)
    if n_faces == 0:
        return mesh
    edges, face_edges, flat, off, counts = mesh._edge_data
    linked = np.flatnonzero(counts >= 2)
    fa = flat[off[linked]]
    fb = flat[off[linked] + 1]
    ea = edges[linked]

    def corner(f, v):
        j = np.argmax(faces[f] == v[:, None], axis=1)
        return 3 * f + j

    rows = np.concatenate([corner(fa, ea[:, 0]), corner(fa, ea[:, 1])])
    cols = np.concatenate([corner(fb, ea[:, 0]), corner(fb, ea[:, 1])])
    n = 3 * n_faces
    g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, label = _cc(g, directed=False)

    corner_vert = faces.reshape(-1)
    # first corner (lowest face) of each class, and one class per (vertex, label)
    first = np.full(label.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, label, np.arange(n))
    class_vert = corner_vert[first]
    order = np.lexsort((first, class_vert))
    cv = class_vert[order]
    is_primary = np.r_[True, cv[1:] != cv[:-1]]
    if is_primary.all():
        return mesh
    new_index = np.empty(len(order), dtype=np.int64)
    new_index[order[is_primary]] = cv[is_primary]
    dup = order[~is_primary]
    new_index[dup] = mesh.n_vertices + np.arange(len(dup))
    new_faces = new_index[label].reshape(-1, 3)
    positions = np.concatenate([mesh.positions, mesh.positions[class_vert[dup]]])
    return Mesh(positions, new_faces)


def connected_components(mesh: Mesh, faces: Optional[Sequence[int]] = None) -> List[np.ndarray]:
    """Split a face set into maximal edge-connected subsets.

    Components are ordered by ascending minimum face index.
    """
    if faces is None:
        faces = np.arange(mesh.n_faces)
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return []
    sub = mesh.face_adjacency_matrix[faces][:, faces]
    n, labels = _cc(sub, directed=False)
    if n == 1:
        return [faces]
    comps = [faces[labels == k] for k in range(n)]
    comps.sort(key=lambda c: c[0])
    return comps


def is_connected(mesh: Mesh, faces: Sequence[int]) -> bool:
    faces = np.asarray(faces)
    if len(faces) <= 1:
        return True
    sub = mesh.face_adjacency_matrix[faces][:, faces]
    return _cc(sub, directed=False, return_labels=False) == 1


def boundary_edges(mesh: Mesh, faces: Optional[Sequence[int]] = None) -> np.ndarray:
    """Edge ids having exactly one incident face within ``faces``."""
    if faces is None:
        return np.flatnonzero(mesh.edge_valence == 1)
    fe = mesh.face_edges[np.asarray(faces)].reshape(-1)
    cnt = np.bincount(fe, minlength=len(mesh.edges))
    return np.flatnonzero(cnt == 1)


def disk_check(mesh: Mesh, faces: Optional[Sequence[int]] = None) -> Tuple[bool, str]:
    """Topological disk test with a reason code.

    Reason codes: ``"ok"``, ``"empty"``, ``"non-manifold-edge"``,
    ``"euler"`` (characteristic differs from 1), ``"boundary"`` (boundary
    is not exactly one simple loop).
    """
    if faces is None:
        faces = np.arange(mesh.n_faces)
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return False, "empty"
    fe = mesh.face_edges[faces].reshape(-1)
    cnt = np.bincount(fe, minlength=len(mesh.edges))
    if np.any(cnt > 2):
        return False, "non-manifold-edge"
    n_e = int(np.count_nonzero(cnt))
    n_v = len(np.unique(mesh.faces[faces]))
    if n_v - n_e + len(faces) != 1:
        return False, "euler"
    b = mesh.edges[cnt == 1]
    if len(b) == 0:
        return False, "boundary"
    deg = np.bincount(b.reshape(-1))
    if np.any(deg[deg > 0] != 2):
        return False, "boundary"
    verts, local = np.unique(b.reshape(-1), return_inverse=True)
    local = local.reshape(-1, 2)
    g = sparse.coo_matrix(
        (np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(len(verts), len(verts))
    )
    if _cc(g, directed=False, return_labels=False) != 1:
        return False, "boundary"
    return True, "ok"


def is_disk(mesh: Mesh, faces: Optional[Sequence[int]] = None) -> bool:
    return disk_check(mesh, faces)[0]


def orient_consistently(mesh: Mesh) -> Mesh:
    """Flip face windings so every manifold edge is traversed in opposite directions.

    Each edge-connected component keeps the winding of its lowest face.
    Returns ``mesh`` itself when it is already consistent. Non-orientable
    components keep whichever winding the breadth-first sweep reaches first.
    """
    f = mesh.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    if len(np.unique(directed, axis=0)) == len(directed):
        return mesh
    flip = np.zeros(mesh.n_faces, dtype=bool)
    seen = np.zeros(mesh.n_faces, dtype=bool)

    def same_dir(a, b, e):
        # True when faces a and b traverse edge e in the same direction
        u, v = mesh.edges[e]
        def d(fi):
            row = f[fi].tolist()
            i = row.index(u)
            return row[(i + 1) % 3] == v
        return d(a) == d(b)

    for seed in range(mesh.n_faces):
        if seen[seed]:
            continue
        seen[seed] = True
        queue = [seed]
        while queue:
            a = queue.pop(0)
            for e in mesh.face_edges[a].tolist():
                fs = mesh.edge_faces(e)
                if len(fs) != 2:
                    continue
                b = int(fs[0] if fs[1] == a else fs[1])
                if seen[b]:
                    continue
                seen[b] = True
                flip[b] = flip[a] ^ same_dir(a, b, e)
                queue.append(b)
    if not flip.any():
        return mesh
    out = f.copy()
    out[flip] = out[flip][:, [0, 2, 1]]
    return Mesh(mesh.positions, out)


def boundary_loop(mesh: Mesh) -> np.ndarray:
    """Ordered vertex loop of a disk-topology mesh (following face winding)."""
    f = mesh.faces
    nxt = {}
    b = set(boundary_edges(mesh).tolist())
    for fi in range(len(f)):
        for j in range(3):
            e = mesh.face_edges[fi, j]
            if e in b:
                a, c = f[fi, (j + 1) % 3], f[fi, (j + 2) % 3]
                nxt[int(a)] = int(c)
    if not nxt:
        return np.zeros(0, np.int64)
    start = min(nxt)
    loop = [start]
    v = nxt[start]
    while v != start and len(loop) <= len(nxt):
        loop.append(v)
        v = nxt[v]
    return np.array(loop, dtype=np.int64)
