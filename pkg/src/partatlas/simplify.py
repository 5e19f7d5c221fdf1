"""Boundary-locked quadric edge-collapse simplification."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import List, Set

import numpy as np

from .flatten import try_flatten
from .mesh import Mesh, boundary_edges
from .metrics import chart_distortion


@dataclass
class SimplifiedChart:
    mesh: Mesh
    boundary: np.ndarray          # vertex ids in the simplified mesh
    source_vertex: np.ndarray     # simplified vertex -> original chart vertex
    face_origin: List[Set[int]]   # simplified face -> original faces
    collapses: int


def _plane_quadrics(mesh: Mesh) -> np.ndarray:
    n = mesh.face_normals
    d = -np.einsum("ij,ij->i", n, mesh.positions[mesh.faces[:, 0]])
    plane = np.concatenate([n, d[:, None]], axis=1)
    K = plane[:, :, None] * plane[:, None, :] * mesh.face_areas[:, None, None]
    Q = np.zeros((mesh.n_vertices, 4, 4))
    for j in range(3):
        np.add.at(Q, mesh.faces[:, j], K)
    return Q


def _cross(a, b):
    return np.stack(
        [
            a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
            a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
        ],
        axis=1,
    )


def _quality(tri: np.ndarray) -> np.ndarray:
    """Shape quality 4*sqrt(3)*area / sum of squared edges (1 = equilateral)."""
    a = tri[:, 1] - tri[:, 0]
    b = tri[:, 2] - tri[:, 0]
    c = tri[:, 2] - tri[:, 1]
    area2 = np.linalg.norm(_cross(a, b), axis=1)
    den = (a * a).sum(1) + (b * b).sum(1) + (c * c).sum(1)
    return 2 * np.sqrt(3) * area2 / np.where(den > 0, den, 1.0)


def _err(Q: np.ndarray, p: np.ndarray) -> float:
    h = np.append(p, 1.0)
    return float(max(h @ Q @ h, 0.0))


def simplify_boundary_locked(mesh: Mesh, error_threshold: float = 1e-4,
                             max_iters: int = 1000, min_quality: float = 0.25) -> SimplifiedChart:
    """Collapse interior edges in order of normalized quadric error.

    An edge touching a boundary vertex is never collapsed, so the boundary
    survives vertex-for-vertex. Errors are divided by the squared bounding
    box diagonal. Stops when the cheapest legal collapse exceeds
    ``error_threshold``, after ``max_iters`` accepted collapses, or when no
    legal collapse remains. Collapses that break the link condition or turn
    a face normal by more than 90 degrees are skipped, as are collapses that
    push the worst triangle quality in the ring below ``min_quality``.
    """
    n_v = mesh.n_vertices
    pos = mesh.positions.copy()
    faces = [list(map(int, f)) for f in mesh.faces]
    bnd = np.zeros(n_v, dtype=bool)
    bnd[mesh.edges[boundary_edges(mesh)].reshape(-1)] = True
    origin: List[Set[int]] = [{i} for i in range(len(faces))]
    alive_face = [True] * len(faces)
    vfaces: List[Set[int]] = [set() for _ in range(n_v)]
    for fi, f in enumerate(faces):
        for v in f:
            vfaces[v].add(fi)
    alive_v = [True] * n_v
    Q = _plane_quadrics(mesh)
    diag2 = max(mesh.bbox_diagonal**2, 1e-300)
    stamp = [0] * n_v

    def neighbors(v) -> Set[int]:
        out = set()
        for fi in vfaces[v]:
            out.update(faces[fi])
        out.discard(v)
        return out

    def candidate(a, b):
        Qab = Q[a] + Q[b]
        best = None
        for p in (pos[a], pos[b], 0.5 * (pos[a] + pos[b])):
            e = _err(Qab, p) / diag2
            if best is None or e < best[0]:
                best = (e, p)
        return best

    heap = []

    def push(a, b):
        if bnd[a] or bnd[b]:
            return
        a, b = min(a, b), max(a, b)
        e, _ = candidate(a, b)
        heapq.heappush(heap, (e, a, b, stamp[a], stamp[b]))

    for a, b in mesh.edges.tolist():
        push(a, b)

    collapses = 0
    while heap and collapses < max_iters:
        e, a, b, sa, sb = heapq.heappop(heap)
        if not (alive_v[a] and alive_v[b]) or stamp[a] != sa or stamp[b] != sb:
            continue
        if e > error_threshold:
            break
        na, nb = neighbors(a), neighbors(b)
        if b not in na:
            continue
        shared = vfaces[a] & vfaces[b]
        if len(na & nb) != 2 or len(shared) != 2:
            continue
        _, target = candidate(a, b)
        # normal flip test on faces that survive the collapse
        ring = sorted((vfaces[a] | vfaces[b]) - shared)
        tri = np.array([faces[fi] for fi in ring])
        old = pos[tri]
        new = old.copy()
        new[(tri == a) | (tri == b)] = target
        n_old = _cross(old[:, 1] - old[:, 0], old[:, 2] - old[:, 0])
        n_new = _cross(new[:, 1] - new[:, 0], new[:, 2] - new[:, 0])
        if np.any((n_old * n_new).sum(1) <= 0) or np.any(
            (n_new * n_new).sum(1) <= (1e-14 * diag2) ** 2
        ):
            continue
        if _quality(new).min() < min(min_quality, _quality(old).min()):
            continue
        # collapse b into a
        for fi in sorted(shared):
            alive_face[fi] = False
            for v in faces[fi]:
                vfaces[v].discard(fi)
            heir = min(vfaces[a] - shared) if vfaces[a] - shared else None
            if heir is not None:
                origin[heir] |= origin[fi]
        for fi in list(vfaces[b]):
            faces[fi] = [a if v == b else v for v in faces[fi]]
            vfaces[a].add(fi)
        vfaces[b] = set()
        alive_v[b] = False
        pos[a] = target
        Q[a] = Q[a] + Q[b]
        stamp[a] += 1
        collapses += 1
        for v in sorted(neighbors(a)):
            push(a, v)

    keep_f = [i for i, ok in enumerate(alive_face) if ok]
    used = sorted({v for i in keep_f for v in faces[i]})
    remap = -np.ones(n_v, dtype=np.int64)
    remap[used] = np.arange(len(used))
    new_faces = np.array([[remap[v] for v in faces[i]] for i in keep_f], dtype=np.int64)
    out = Mesh(pos[used], new_faces.reshape(-1, 3))
    return SimplifiedChart(
        mesh=out,
        boundary=remap[np.flatnonzero(bnd)],
        source_vertex=np.array(used, dtype=np.int64),
        face_origin=[origin[i] for i in keep_f],
        collapses=collapses,
    )


def surrogate_distortion(mesh: Mesh, solver: str = "abf", enabled: bool = True,
                         error_threshold: float = 1e-4) -> float:
    """Area distortion of the chart measured on its simplified version.

    With ``enabled=False`` the full-resolution chart is flattened instead.
    Flattening failures give ``inf``.
    """
    target = simplify_boundary_locked(mesh, error_threshold).mesh if enabled else mesh
    return chart_distortion(try_flatten(target, solver))
