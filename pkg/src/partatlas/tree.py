"""Per-face feature fields and the hierarchical part tree.

The tree is built bottom-up by agglomerative clustering restricted to
edge-adjacent clusters. Linkage is the average pairwise cosine distance,
which for unit vectors equals ``1 - mean(A) . mean(B)`` and therefore
updates in O(dim) per merge.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .mesh import Mesh, MeshError

FEATURE_MAGIC_BINARY = b"PFF1"
FEATURE_MAGIC_TEXT = b"PFT1"


class FeatureFileError(ValueError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (record {index})"
        super().__init__(message)


@dataclass(frozen=True)
class FaceFeatureField:
    features: np.ndarray
    source: str = "normals"

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.features)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return x / norm


def features_from_normals(mesh: Mesh, s: int = 10) -> FaceFeatureField:
    """Use face normals as the part feature.

    ``s`` is the per-face sample count. A face normal is constant over the
    face, so the sample average is the normal itself and ``s`` has no effect.
    Degenerate faces inherit the feature of their lowest-index neighbour
    (or ``(1, 0, 0)`` when isolated).
    """
    if s < 1:
        raise ValueError("sample count must be positive")
    feats = np.array(mesh.face_normals, copy=True)
    bad = np.flatnonzero(mesh.degenerate_faces)
    if len(bad):
        resolved = ~mesh.degenerate_faces.copy()
        # propagate outward from valid faces, lowest neighbour index first
        pending = list(bad)
        for _ in range(len(bad)):
            still = []
            for f in pending:
                nb = [g for g in sorted(mesh.face_neighbors(f).tolist()) if resolved[g]]
                if nb:
                    feats[f] = feats[nb[0]]
                    resolved[f] = True
                else:
                    still.append(f)
            if len(still) == len(pending):
                break
            pending = still
        for f in pending:
            feats[f] = (1.0, 0.0, 0.0)
    return FaceFeatureField(_normalize_rows(feats), source="normals")


def load_features(path, mesh: Mesh) -> FaceFeatureField:
    """Read a per-face feature file (binary ``PFF1`` or text ``PFT1``)."""
    raw = Path(path).read_bytes()
    magic = raw[:4]
    if magic == FEATURE_MAGIC_BINARY:
        if len(raw) < 12:
            raise FeatureFileError("truncated header")
        count, dim = struct.unpack("<II", raw[4:12])
        if dim == 0:
            raise FeatureFileError("feature dimension is 0")
        body = np.frombuffer(raw[12:], dtype="<f4")
        if body.size != count * dim:
            raise FeatureFileError(
                f"expected {count * dim} values, found {body.size}", index=body.size // dim
            )
        feats = body.reshape(count, dim).astype(np.float64)
    elif magic == FEATURE_MAGIC_TEXT:
        rows = raw[4:].decode().split("\n")
        rows = [r.split() for r in rows if r.strip()]
        if not rows:
            raise FeatureFileError("no feature records")
        dim = len(rows[0])
        if dim == 0:
            raise FeatureFileError("feature dimension is 0")
        for i, r in enumerate(rows):
            if len(r) != dim:
                raise FeatureFileError("inconsistent feature dimension", index=i)
        try:
            feats = np.array(rows, dtype=np.float64)
        except ValueError:
            raise FeatureFileError("non-numeric feature value") from None
        count = len(rows)
    else:
        raise FeatureFileError("unknown feature file magic")
    if count != mesh.n_faces:
        raise FeatureFileError(f"feature count {count} != face count {mesh.n_faces}")
    finite = np.isfinite(feats).all(axis=1)
    if not finite.all():
        raise FeatureFileError("non-finite feature value", index=int(np.argmin(finite)))
    return FaceFeatureField(_normalize_rows(feats), source="external-file")


def save_features(path, features: np.ndarray, text: bool = False) -> None:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be 2-D")
    if text:
        lines = [" ".join(f"{x:.9g}" for x in row) for row in features]
        Path(path).write_bytes(FEATURE_MAGIC_TEXT + ("\n".join(lines) + "\n").encode())
    else:
        head = FEATURE_MAGIC_BINARY + struct.pack("<II", *features.shape)
        Path(path).write_bytes(head + features.astype("<f4").tobytes())


# -- clustering engine -------------------------------------------------------


def agglomerate(features: np.ndarray, pairs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Connectivity-constrained average-linkage clustering.

    Parameters
    ----------
    features : (n, d) array of unit vectors
    pairs : (m, 2) array of adjacent item index pairs

    Returns
    -------
    merges : (n - 1, 2) int array
        Cluster ids merged at each step. Items are ids ``0..n-1``; the
        cluster created by step ``i`` gets id ``n + i``.
    heights : (n - 1,) float array
        Linkage distance at each merge.

    Adjacent clusters are merged first, by smallest distance, ties broken by
    the (min item index) pair. Once no adjacent pairs remain the surviving
    clusters are merged by distance alone.
    """
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    if n == 0:
        raise MeshError("cannot cluster an empty face set")
    sums = list(features)
    size = [1] * n
    minitem = list(range(n))
    nbrs: List[set] = [set() for _ in range(n)]
    for a, b in np.asarray(pairs, dtype=np.int64).tolist():
        if a != b:
            nbrs[a].add(b)
            nbrs[b].add(a)
    alive = [True] * n

    def dist(a, b):
        return 1.0 - float(sums[a] @ sums[b]) / (size[a] * size[b])

    def key(a, b):
        ma, mb = minitem[a], minitem[b]
        return (dist(a, b), min(ma, mb), max(ma, mb), a, b)

    heap = []
    for a in range(n):
        for b in nbrs[a]:
            if a < b:
                heap.append(key(a, b))
    heapq.heapify(heap)

    merges = np.empty((max(n - 1, 0), 2), dtype=np.int64)
    heights = np.empty(max(n - 1, 0))
    step = 0

    def do_merge(a, b, d):
        nonlocal step
        c = n + step
        merges[step] = (a, b)
        heights[step] = d
        step += 1
        alive[a] = alive[b] = False
        sums.append(sums[a] + sums[b])
        size.append(size[a] + size[b])
        minitem.append(min(minitem[a], minitem[b]))
        nb = (nbrs[a] | nbrs[b]) - {a, b}
        nbrs.append(nb)
        alive.append(True)
        for x in nb:
            nbrs[x].discard(a)
            nbrs[x].discard(b)
            nbrs[x].add(c)
        nbrs[a] = nbrs[b] = set()
        return c, nb

    while heap:
        d, _, _, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        c, nb = do_merge(a, b, d)
        for x in nb:
            heapq.heappush(heap, key(c, x) if minitem[c] < minitem[x] else key(x, c))

    # fallback for disconnected input: merge remaining clusters by distance alone
    rest = [i for i, ok in enumerate(alive) if ok]
    if len(rest) > 1:
        heap = [key(a, b) for i, a in enumerate(rest) for b in rest[i + 1 :]]
        heapq.heapify(heap)
        while heap:
            d, _, _, a, b = heapq.heappop(heap)
            if not (alive[a] and alive[b]):
                continue
            c, _ = do_merge(a, b, d)
            for x in range(len(alive) - 1):
                if alive[x]:
                    heapq.heappush(heap, key(c, x) if minitem[c] < minitem[x] else key(x, c))
    return merges, heights


def cut_labels(n: int, merges: np.ndarray, k: int) -> np.ndarray:
    """Cluster labels after undoing the last ``k - 1`` merges.

    Labels are renumbered in order of each cluster's smallest item.
    """
    k = max(1, min(k, n))
    parent = np.arange(n + len(merges))
    for i in range(n - k):
        a, b = merges[i]
        parent[a] = parent[b] = n + i
    # resolve roots (parents always have larger ids)
    root = parent.copy()
    for i in range(len(root) - 1, -1, -1):
        root[i] = root[root[i]]
    r = root[:n]
    _, first = np.unique(r, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(len(first), dtype=np.int64)
    relabel[order] = np.arange(len(first))
    _, inv = np.unique(r, return_inverse=True)
    return relabel[inv]


# -- part tree ---------------------------------------------------------------


@dataclass(frozen=True)
class PartTree:
    """Binary hierarchy over mesh faces.

    Node ids ``0..F-1`` are the leaves (face ``i`` is node ``i``); internal
    nodes follow in merge order and the root is the last node. Every node's
    faces occupy the contiguous slice ``order[start[v]:end[v]]``.

    ``distance`` is the linkage distance at which a node was formed. Under
    the adjacency constraint it can be smaller than a child's distance, so
    ``height`` holds the running maximum along each root path instead.
    """

    left: np.ndarray
    right: np.ndarray
    height: np.ndarray
    order: np.ndarray
    start: np.ndarray
    end: np.ndarray
    distance: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_leaves(self) -> int:
        return (self.n_nodes + 1) // 2

    @property
    def root(self) -> int:
        return self.n_nodes - 1

    def is_leaf(self, v: int) -> bool:
        return self.left[v] < 0

    def children(self, v: int) -> Tuple[int, int]:
        return int(self.left[v]), int(self.right[v])

    def faces(self, v: int) -> np.ndarray:
        return np.sort(self.order[self.start[v] : self.end[v]])

    def size(self, v: int) -> int:
        return int(self.end[v] - self.start[v])

    @property
    def parent(self) -> np.ndarray:
        par = np.full(self.n_nodes, -1, dtype=np.int64)
        inner = np.flatnonzero(self.left >= 0)
        par[self.left[inner]] = inner
        par[self.right[inner]] = inner
        return par

    def lca(self, faces) -> int:
        """Smallest node containing every face in ``faces``."""
        faces = np.asarray(faces)
        par = self.parent
        v = int(faces[0])
        lo, hi = self.start[faces].min(), self.end[faces].max()
        while not (self.start[v] <= lo and hi <= self.end[v]):
            v = int(par[v])
        return v

    def to_bytes(self) -> bytes:
        return b"".join(
            a.astype("<i8" if a.dtype.kind == "i" else "<f8").tobytes()
            for a in (self.left, self.right, self.distance, self.order, self.start, self.end)
        )


def tree_from_merges(n: int, merges: np.ndarray, heights: np.ndarray) -> PartTree:
    n_nodes = 2 * n - 1
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    distance = np.zeros(n_nodes)
    left[n:] = merges[:, 0]
    right[n:] = merges[:, 1]
    distance[n:] = heights
    height = distance.copy()
    size = np.ones(n_nodes, dtype=np.int64)
    for v in range(n, n_nodes):
        size[v] = size[left[v]] + size[right[v]]
        height[v] = max(height[v], height[left[v]], height[right[v]])
    start = np.zeros(n_nodes, dtype=np.int64)
    for v in range(n_nodes - 1, n - 1, -1):
        start[left[v]] = start[v]
        start[right[v]] = start[v] + size[left[v]]
    end = start + size
    order = np.empty(n, dtype=np.int64)
    order[start[:n]] = np.arange(n)
    for a in (left, right, height, order, start, end, distance):
        a.setflags(write=False)
    return PartTree(left, right, height, order, start, end, distance)


def build_tree(mesh: Mesh, field: FaceFeatureField) -> PartTree:
    """Cluster all mesh faces into a binary part tree."""
    if mesh.n_faces == 0:
        raise MeshError("empty mesh")
    if len(field) != mesh.n_faces:
        raise ValueError("feature count does not match face count")
    merges, heights = agglomerate(field.features, mesh.face_adjacency)
    return tree_from_merges(mesh.n_faces, merges, heights)
