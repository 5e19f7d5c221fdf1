"""Geometric chart decomposition of a part: the Normal and Merge heuristics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .flatten import ChartParam
from .mesh import Mesh, connected_components, is_connected
from .tree import agglomerate, cut_labels

logger = logging.getLogger(__name__)

MAX_MERGE_COMPONENTS = 500


@dataclass
class ChartEval:
    """Flattening outcome of one chart (possibly measured on a surrogate)."""

    faces: np.ndarray
    param: Optional[ChartParam]
    dist: float
    overlap_free: bool
    surrogate: bool = False


Evaluator = Callable[[np.ndarray], ChartEval]


@dataclass
class ChartSet:
    charts: List[np.ndarray]
    evals: List[Optional[ChartEval]] = field(default_factory=list)
    source: str = "h1"
    k: int = 0
    part_of: List[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.charts)

    @property
    def dist(self) -> float:
        if not self.evals or any(e is None for e in self.evals):
            return float("inf")
        return max(e.dist for e in self.evals)

    @property
    def overlap_free(self) -> bool:
        return bool(self.evals) and all(e is not None and e.overlap_free for e in self.evals)

    def is_admissible(self, tau: float) -> bool:
        return self.dist <= tau and self.overlap_free

    def faces(self) -> np.ndarray:
        return np.concatenate(self.charts) if self.charts else np.zeros(0, np.int64)


def evaluate_set(cs: ChartSet, evaluate: Evaluator, tau: Optional[float] = None) -> ChartSet:
    """Attach evaluations.

    With ``tau`` given, evaluation stops at the first chart whose distortion
    exceeds it (the set distortion is then known to exceed ``tau``).
    """
    evals = []
    for c in cs.charts:
        ev = evaluate(c)
        evals.append(ev)
        if tau is not None and not ev.dist <= tau:
            evals.extend([None] * (len(cs.charts) - len(evals)))
            break
    cs.evals = evals
    return cs


# -- oriented bounding box ---------------------------------------------------


@dataclass
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray          # rows are unit axes
    half_extents: np.ndarray

    @property
    def volume(self) -> float:
        return float(np.prod(2 * self.half_extents))

    def face_normals(self) -> np.ndarray:
        """The six box face normals in label order +a0, -a0, +a1, -a1, +a2, -a2."""
        a = self.axes
        return np.stack([a[0], -a[0], a[1], -a[1], a[2], -a[2]])


def _surface_covariance(mesh: Mesh) -> tuple:
    p = mesh.positions[mesh.faces]
    area = mesh.face_areas
    total = area.sum()
    if total <= 0:
        raise ValueError("no area")
    cent = p.mean(axis=1)
    mu = (area[:, None] * cent).sum(0) / total
    q = p - mu
    # exact second moment of each triangle under uniform area density
    s = q.sum(axis=1)
    m2 = np.einsum("fij,fik->fjk", q, q) + np.einsum("fj,fk->fjk", s, s)
    C = (area[:, None, None] * m2).sum(0) / (12.0 * total)
    return mu, C


def _fix_frame(axes: np.ndarray) -> np.ndarray:
    out = np.array(axes, dtype=float)
    for i in range(2):
        out[i] /= np.linalg.norm(out[i])
        j = np.argmax(np.abs(out[i]))
        if out[i, j] < 0:
            out[i] = -out[i]
    out[1] -= out[0] * (out[0] @ out[1])
    out[1] /= np.linalg.norm(out[1])
    out[2] = np.cross(out[0], out[1])
    return out


def _box_for(frame: np.ndarray, pts: np.ndarray) -> OrientedBox:
    proj = pts @ frame.T
    lo, hi = proj.min(0), proj.max(0)
    ext = (hi - lo) / 2
    order = np.argsort(-ext, kind="stable")
    frame = _fix_frame(frame[order])
    proj = pts @ frame.T
    lo, hi = proj.min(0), proj.max(0)
    center = ((lo + hi) / 2) @ frame
    return OrientedBox(center, frame, (hi - lo) / 2)


def compute_obb(mesh: Mesh) -> OrientedBox:
    """Oriented bounding box of a part.

    Candidate frames are the principal axes of the area-weighted surface
    covariance plus frames spanned by the dominant face normals; the one
    with the smallest box volume wins. Axes are ordered by descending
    extent, sign-fixed so the largest-magnitude entry of the first two is
    positive, and completed to a right-handed frame. Rank-deficient input
    (collinear points) gets the axis-aligned box.
    """
    used = np.unique(mesh.faces)
    pts = mesh.positions[used]
    diag = mesh.bbox_diagonal
    try:
        _, C = _surface_covariance(mesh)
        w, V = np.linalg.eigh(C)
    except ValueError:
        w, V = np.zeros(3), np.eye(3)
    if diag == 0 or w[-2] <= 1e-12 * diag**2:
        return _box_for(np.eye(3), pts)
    frames = [V[:, ::-1].T]

    n = mesh.face_normals
    a = mesh.face_areas
    ok = ~mesh.degenerate_faces
    # dominant normal directions (up to sign), by accumulated area
    dirs: List[np.ndarray] = []
    weights: List[float] = []
    for ni, ai in sorted(zip(n[ok].tolist(), a[ok].tolist()), key=lambda x: -x[1]):
        ni = np.array(ni)
        for d_i, d in enumerate(dirs):
            if abs(d @ ni) > 1 - 1e-6:
                weights[d_i] += ai
                break
        else:
            if len(dirs) < 64:
                dirs.append(ni)
                weights.append(ai)
    top = [dirs[i] for i in np.argsort(-np.array(weights), kind="stable")[:6]]
    for i, d0 in enumerate(top):
        # second axis: the other dominant normal most perpendicular to d0
        best = None
        for j, d1 in enumerate(top):
            if j == i:
                continue
            r = d1 - d0 * (d0 @ d1)
            if np.linalg.norm(r) > 1e-3 and (best is None or abs(d0 @ d1) < best[0]):
                best = (abs(d0 @ d1), r / np.linalg.norm(r))
        if best is None:
            # 2D principal axes within the plane orthogonal to d0
            P = np.eye(3) - np.outer(d0, d0)
            w2, V2 = np.linalg.eigh(P @ C @ P)
            e1 = V2[:, -1]
        else:
            e1 = best[1]
        frames.append(np.stack([d0, e1, np.cross(d0, e1)]))

    boxes = [_box_for(f, pts) for f in frames]
    tol = 1e-9 * max(diag, 1e-300)

    def score(b):
        return float(np.prod(2 * b.half_extents + tol))

    scores = [score(b) for b in boxes]
    best = min(range(len(boxes)), key=lambda i: (round(scores[i] / max(scores), 9), i))
    return boxes[best]


def obb_labels(mesh: Mesh, box: OrientedBox) -> np.ndarray:
    """Label 1..6 of the box face normal best aligned with each face normal."""
    return np.argmax(mesh.face_normals @ box.face_normals().T, axis=1) + 1


# -- heuristic 1: normal clustering ladder -----------------------------------


def _local_pairs(mesh: Mesh, faces: np.ndarray) -> np.ndarray:
    pos = -np.ones(mesh.n_faces, dtype=np.int64)
    pos[faces] = np.arange(len(faces))
    pa = mesh.face_adjacency
    keep = (pos[pa[:, 0]] >= 0) & (pos[pa[:, 1]] >= 0)
    return pos[pa[keep]]


def gen_candidates_h1(mesh: Mesh, faces: np.ndarray, t: int = 10,
                      normals: Optional[np.ndarray] = None) -> List[ChartSet]:
    """Chart sets with 1..t charts from one normal-clustering dendrogram.

    The part must be edge-connected. Cluster ``k`` of the ``k``-chart set is
    obtained by undoing the last ``k - 1`` merges, so consecutive candidates
    differ by splitting exactly one chart.
    """
    faces = np.asarray(faces, dtype=np.int64)
    if not is_connected(mesh, faces):
        raise ValueError("part is not edge-connected")
    if normals is None:
        normals = mesh.face_normals
    feats = normals[faces]
    merges, _ = agglomerate(feats, _local_pairs(mesh, faces))
    out = []
    for k in range(1, min(t, len(faces)) + 1):
        labels = cut_labels(len(faces), merges, k)
        charts = [faces[labels == i] for i in range(k)]
        out.append(ChartSet(charts, source="h1", k=k))
    return out


# -- heuristic 2: OBB labels and greedy merging ------------------------------


def gen_candidate_h2(mesh: Mesh, faces: np.ndarray, tau: float, evaluate: Evaluator,
                     max_components: int = MAX_MERGE_COMPONENTS) -> Optional[ChartSet]:
    """Merge OBB-label components while the merged chart stays admissible.

    Returns ``None`` when the part splits into more than ``max_components``
    initial components.
    """
    faces = np.asarray(faces, dtype=np.int64)
    sub, _ = mesh.submesh(faces)
    box = compute_obb(sub)
    label = np.zeros(mesh.n_faces, dtype=np.int64)
    label[faces] = obb_labels(sub, box)

    comps: List[np.ndarray] = []
    for lab in range(1, 7):
        sel = faces[label[faces] == lab]
        if len(sel):
            comps.extend(connected_components(mesh, sel))
    if len(comps) > max_components:
        logger.debug("merge heuristic aborted: %d components", len(comps))
        return None

    comp_of = -np.ones(mesh.n_faces, dtype=np.int64)
    for i, c in enumerate(comps):
        comp_of[c] = i
    # shared boundary length between adjacent components
    shared: Dict[int, Dict[int, float]] = {i: {} for i in range(len(comps))}
    edges = mesh.edges
    fe = mesh.face_edges[faces].reshape(-1)
    uniq = np.unique(fe)
    for e in uniq.tolist():
        fs = mesh.edge_faces(e)
        if len(fs) != 2:
            continue
        ca, cb = comp_of[fs[0]], comp_of[fs[1]]
        if ca < 0 or cb < 0 or ca == cb:
            continue
        length = float(np.linalg.norm(mesh.positions[edges[e, 0]] - mesh.positions[edges[e, 1]]))
        shared[ca][cb] = shared[ca].get(cb, 0.0) + length
        shared[cb][ca] = shared[cb].get(ca, 0.0) + length

    alive = {i: c for i, c in enumerate(comps)}
    minface = {i: int(c[0]) for i, c in enumerate(comps)}
    evals: Dict[int, ChartEval] = {}

    changed = True
    while changed:
        changed = False
        order = sorted(alive, key=lambda i: (len(alive[i]), minface[i]))
        for c in order:
            if c not in alive:
                continue
            while True:
                nbrs = sorted(shared[c], key=lambda d: (-shared[c][d], minface[d]))
                merged = False
                for d in nbrs:
                    union = np.union1d(alive[c], alive[d])
                    ev = evaluate(union)
                    if ev.dist <= tau and ev.overlap_free:
                        new = max(alive) + 1
                        alive[new] = union
                        minface[new] = int(union[0])
                        evals[new] = ev
                        shared[new] = {}
                        for x in (c, d):
                            for y, L in shared.pop(x).items():
                                if y in (c, d):
                                    continue
                                shared[new][y] = shared[new].get(y, 0.0) + L
                                del shared[y][x]
                                shared[y][new] = shared[y].get(new, 0.0) + L
                            del alive[x]
                        c = new
                        merged = changed = True
                        break
                if not merged:
                    break

    keys = sorted(alive, key=lambda i: minface[i])
    charts = [alive[i] for i in keys]
    cs = ChartSet(charts, source="h2", k=len(charts))
    cs.evals = [evals[i] if i in evals else evaluate(alive[i]) for i in keys]
    return cs
