"""Budgeted top-down search over the part tree.

Each tree node is first decomposed with the geometric heuristics. If that
fails the search descends into both children; if it succeeds the children
are still explored under a chart budget one below the best count found,
so a split into sub-parts replaces the heuristic answer only when it is
strictly smaller.
"""

from __future__ import annotations

import logging
import math
import sys
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .flatten import ChartParam, FlattenError, flatten_projection, get_solver
from .heuristics import (
    ChartEval,
    ChartSet,
    evaluate_set,
    gen_candidate_h2,
    gen_candidates_h1,
)
from .mesh import Mesh, connected_components, disk_check, is_connected
from .metrics import chart_distortion, no_overlap
from .simplify import simplify_boundary_locked
from .tree import PartTree

logger = logging.getLogger(__name__)

INF = math.inf
EXACT_TOL = 1e-6


class SearchInvariantError(RuntimeError):
    """An internal consistency check failed."""


@dataclass(frozen=True)
class SearchConfig:
    tau: float = 1.25
    t: int = 10
    s: int = 10
    use_merge: bool = True
    use_recursion_refinement: bool = True
    use_surrogate: bool = True
    solver: str = "abf"
    max_multicomponent_depth: int = 8
    thread_budget: int = 1
    # charts smaller than this are flattened directly even with the surrogate on
    surrogate_min_faces: int = 150
    simplify_threshold: float = 1e-4

    def __post_init__(self):
        if not self.tau >= 1:
            raise ValueError("tau must be >= 1")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.thread_budget < 1:
            raise ValueError("thread_budget must be >= 1")
        if self.max_multicomponent_depth < 0:
            raise ValueError("max_multicomponent_depth must be >= 0")
        get_solver(self.solver)


@dataclass
class SearchResult:
    """Outcome of one search call. ``outcome is None`` encodes BOTTOM."""

    outcome: Optional[ChartSet]
    nodes_visited: int = 0
    abf_calls: int = 0
    surrogate_calls: int = 0

    @property
    def is_bottom(self) -> bool:
        return self.outcome is None

    @property
    def count(self) -> float:
        return INF if self.outcome is None else self.outcome.count

    @property
    def dist(self) -> float:
        return INF if self.outcome is None else self.outcome.dist

    def add_counters(self, other: "SearchResult") -> None:
        self.nodes_visited += other.nodes_visited
        self.abf_calls += other.abf_calls
        self.surrogate_calls += other.surrogate_calls


def combine(L: SearchResult, R: SearchResult) -> SearchResult:
    """Union of two results over disjoint face sets (BOTTOM absorbs)."""
    out = SearchResult(None)
    out.add_counters(L)
    out.add_counters(R)
    if L.outcome is None or R.outcome is None:
        return out
    if np.intersect1d(L.outcome.faces(), R.outcome.faces()).size:
        raise SearchInvariantError("combined chart sets share faces")
    out.outcome = ChartSet(
        charts=L.outcome.charts + R.outcome.charts,
        evals=L.outcome.evals + R.outcome.evals,
        source="split",
        k=L.outcome.count + R.outcome.count,
        part_of=L.outcome.part_of + R.outcome.part_of,
    )
    return out


def _bottom(visited: int = 1) -> SearchResult:
    return SearchResult(None, nodes_visited=visited)


# -- tree nodes --------------------------------------------------------------


@dataclass(frozen=True)
class SearchNode:
    """A part-tree node, optionally restricted to a subset of its faces."""

    tree_id: int
    faces: np.ndarray
    restricted: bool = False

    @property
    def part_id(self) -> int:
        return int(self.faces[0])


def root_node(tree: PartTree) -> SearchNode:
    return SearchNode(tree.root, tree.faces(tree.root))


def _children(tree: PartTree, node: SearchNode) -> Optional[Tuple[SearchNode, SearchNode]]:
    v = node.tree_id
    while not tree.is_leaf(v):
        a, b = tree.children(v)
        fa, fb = tree.faces(a), tree.faces(b)
        if node.restricted:
            fa = np.intersect1d(fa, node.faces, assume_unique=True)
            fb = np.intersect1d(fb, node.faces, assume_unique=True)
        if len(fa) and len(fb):
            return (SearchNode(a, fa, node.restricted and len(fa) < tree.size(a)),
                    SearchNode(b, fb, node.restricted and len(fb) < tree.size(b)))
        # a restriction may empty one side; collapse the single-child chain
        v = a if len(fa) else b
    return None


# -- chart evaluation --------------------------------------------------------


class _Counters:
    def __init__(self):
        self.abf = 0
        self.surrogate = 0


def _make_evaluator(mesh: Mesh, cfg: SearchConfig, counters: _Counters) -> Callable:
    solver = get_solver(cfg.solver)
    cache = {}

    def flatten_full(sub: Mesh) -> Optional[ChartParam]:
        counters.abf += 1
        try:
            return solver(sub)
        except FlattenError:
            if sub.degenerate_faces.all():
                return flatten_projection(sub)
            return None

    def evaluate(faces: np.ndarray) -> ChartEval:
        key = faces.tobytes()
        hit = cache.get(key)
        if hit is not None:
            return hit
        sub, _ = mesh.submesh(faces)
        ok, _reason = disk_check(sub)
        if not ok:
            ev = ChartEval(faces, None, INF, False)
        elif cfg.use_surrogate and len(faces) >= cfg.surrogate_min_faces:
            simp = simplify_boundary_locked(sub, cfg.simplify_threshold)
            if simp.collapses == 0:
                param = flatten_full(sub)
                ev = ChartEval(faces, param, chart_distortion(param), no_overlap(param))
            else:
                counters.surrogate += 1
                try:
                    param = solver(simp.mesh)
                except FlattenError:
                    param = None
                ev = ChartEval(faces, param, chart_distortion(param), no_overlap(param),
                               surrogate=True)
        else:
            param = flatten_full(sub)
            ev = ChartEval(faces, param, chart_distortion(param), no_overlap(param))
        cache[key] = ev
        return ev

    return evaluate


# -- the search --------------------------------------------------------------


class PartTreeSearch:
    """Search driver bound to one mesh, tree and configuration."""

    def __init__(self, mesh: Mesh, tree: PartTree, cfg: SearchConfig,
                 normals: Optional[np.ndarray] = None):
        if tree.n_leaves != mesh.n_faces:
            raise ValueError("tree does not match mesh")
        self.mesh = mesh
        self.tree = tree
        self.cfg = cfg
        self.normals = mesh.face_normals if normals is None else normals
        self._slots = threading.BoundedSemaphore(max(cfg.thread_budget - 1, 1))
        self._parallel = cfg.thread_budget > 1

    # fork-join helper: run both thunks, the first on a spare thread if one is free
    def _both(self, fa, fb):
        if not (self._parallel and self._slots.acquire(blocking=False)):
            return fa(), fb()
        box = {}

        def run():
            try:
                box["v"] = fa()
            except BaseException as exc:  # re-raised in the joining thread
                box["e"] = exc

        th = threading.Thread(target=run, daemon=True)
        try:
            th.start()
            rb = fb()
        finally:
            th.join()
            self._slots.release()
        if "e" in box:
            raise box["e"]
        return box["v"], rb

    def search(self, node: SearchNode, B: float = INF, mc_depth: int = 0) -> SearchResult:
        """Decompose ``node`` into at most ``B`` admissible charts, or return BOTTOM."""
        if B < 1:
            return _bottom()
        faces = node.faces
        if len(faces) > 1 and not is_connected(self.mesh, faces):
            return self._search_disconnected(node, B, mc_depth)

        res = SearchResult(None, nodes_visited=1)
        counters = _Counters()
        evaluate = _make_evaluator(self.mesh, self.cfg, counters)
        tau = self.cfg.tau

        pool: List[ChartSet] = []
        min_dist = INF
        for cs in gen_candidates_h1(self.mesh, faces, self.cfg.t, self.normals):
            evaluate_set(cs, evaluate, tau)
            min_dist = min(min_dist, cs.dist)
            if cs.is_admissible(tau):
                # the ladder grows by one chart per step, so this is its minimum count
                pool.append(cs)
                break

        if min_dist <= tau and self.cfg.use_merge:
            h2 = gen_candidate_h2(self.mesh, faces, tau, evaluate)
            if h2 is not None and h2.is_admissible(tau):
                pool.append(h2)
        res.abf_calls += counters.abf
        res.surrogate_calls += counters.surrogate

        kids = _children(self.tree, node)
        if not pool:
            if kids is None:
                # a single face (or an unsplittable node): keep it whole
                cs = ChartSet([faces], [evaluate(faces)], source="leaf", k=1)
                cs.part_of = [node.part_id]
                res.abf_calls = counters.abf
                res.outcome = cs
                return res if cs.count <= B else _bottom()
            L_node, R_node = kids
            if B == INF:
                L, R = self._both(lambda: self.search(L_node, INF),
                                  lambda: self.search(R_node, INF))
            else:
                L = self.search(L_node, INF)
                if L.count + 1 > B:
                    res.add_counters(L)
                    return res
                R = self.search(R_node, INF)
            out = combine(L, R)
            out.add_counters(res)
            if out.count > B:
                out.outcome = None
            return out

        rank = {"h1": 0, "h2": 1}
        best = min(pool, key=lambda c: (c.count, c.dist, rank[c.source], c.k))
        best.part_of = [node.part_id] * best.count

        if self.cfg.use_recursion_refinement and kids is not None:
            Bp = min(B, best.count - 1)
            L_node, R_node = kids
            L = self.search(L_node, Bp - 1)
            res.add_counters(L)
            if L.outcome is not None:
                R = self.search(R_node, Bp - L.count)
                res.add_counters(R)
                if R.outcome is not None:
                    comb = combine(L, R).outcome
                    if comb.count < best.count and comb.is_admissible(tau):
                        comb.part_of = [node.part_id] * comb.count
                        best = comb

        if best.count > B:
            return res
        res.outcome = best
        return res

    def _search_disconnected(self, node: SearchNode, B: float, mc_depth: int) -> SearchResult:
        if mc_depth >= self.cfg.max_multicomponent_depth:
            out = self.multicomponent_fallback(node)
            return out if out.count <= B else SearchResult(None, out.nodes_visited,
                                                            out.abf_calls, out.surrogate_calls)
        kids = _children(self.tree, node)
        if kids is None:
            raise SearchInvariantError("disconnected leaf node")
        L_node, R_node = kids
        if B == INF:
            L, R = self._both(lambda: self.search(L_node, INF, mc_depth + 1),
                              lambda: self.search(R_node, INF, mc_depth + 1))
        else:
            L = self.search(L_node, B - 1, mc_depth + 1)
            if L.outcome is None:
                out = combine(L, _bottom(0))
                out.nodes_visited += 1
                return out
            R = self.search(R_node, B - L.count, mc_depth + 1)
        out = combine(L, R)
        out.nodes_visited += 1
        return out

    def multicomponent_fallback(self, node: SearchNode) -> SearchResult:
        """Decompose each connected component of ``node`` on its own."""
        out = SearchResult(ChartSet([], [], source="split"), nodes_visited=1)
        for comp in connected_components(self.mesh, node.faces):
            sub = SearchNode(node.tree_id, comp, restricted=True)
            r = self.search(sub, INF, 0)
            out = combine(out, r)
        return out


# -- top-level run with the exact pass ---------------------------------------


@dataclass
class SearchOutput:
    charts: List[np.ndarray]
    params: List[ChartParam]
    distortion: List[float]
    part_of: List[int]
    surrogate_distortion: List[Optional[float]]
    nodes_visited: int = 0
    abf_calls: int = 0
    surrogate_calls: int = 0
    repaired_charts: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.charts)


def _run_deep(fn):
    """Run ``fn`` on a thread with a large stack so deep trees do not overflow."""
    old_limit = sys.getrecursionlimit()
    old_stack = threading.stack_size()
    box = {}

    def target():
        try:
            box["v"] = fn()
        except BaseException as exc:
            box["e"] = exc

    sys.setrecursionlimit(max(old_limit, 200000))
    threading.stack_size(256 * 1024 * 1024)
    try:
        th = threading.Thread(target=target)
        th.start()
        th.join()
    finally:
        threading.stack_size(old_stack)
        sys.setrecursionlimit(old_limit)
    if "e" in box:
        raise box["e"]
    return box["v"]


def run_search(mesh: Mesh, tree: PartTree, cfg: SearchConfig,
               normals: Optional[np.ndarray] = None) -> SearchOutput:
    """Search from the root, then re-flatten every chart exactly.

    A chart whose exact flattening breaks the threshold or overlaps is
    searched again from its smallest enclosing tree node with the surrogate
    disabled; those charts replace it.
    """
    return _run_deep(lambda: _run_search(mesh, tree, cfg, normals))


def _run_search(mesh, tree, cfg, normals):
    engine = PartTreeSearch(mesh, tree, cfg, normals)
    res = engine.search(root_node(tree), INF)
    if res.outcome is None:
        raise SearchInvariantError("search from the root returned BOTTOM")
    cs = res.outcome
    out = SearchOutput([], [], [], [], [], res.nodes_visited, res.abf_calls, res.surrogate_calls)
    solver = get_solver(cfg.solver)
    exact = None

    for chart, ev, part in zip(cs.charts, cs.evals, cs.part_of):
        if ev is not None and not ev.surrogate and ev.param is not None:
            param, dist, ok = ev.param, ev.dist, ev.overlap_free
        else:
            sub, _ = mesh.submesh(chart)
            out.abf_calls += 1
            try:
                param = solver(sub)
            except FlattenError:
                param = flatten_projection(sub) if sub.degenerate_faces.all() else None
            dist, ok = chart_distortion(param), no_overlap(param)
        if param is not None and ok and dist <= cfg.tau + EXACT_TOL:
            out.charts.append(chart)
            out.params.append(param)
            out.distortion.append(dist)
            out.part_of.append(part)
            out.surrogate_distortion.append(ev.dist if ev is not None and ev.surrogate else None)
            continue
        # the surrogate was optimistic: redo this chart without it
        logger.info("exact pass rejected a %d-face chart (dist %.4f); re-searching", len(chart), dist)
        out.repaired_charts += 1
        if exact is None:
            exact = PartTreeSearch(mesh, tree, replace(cfg, use_surrogate=False), normals)
        node = SearchNode(tree.lca(chart), chart, restricted=True)
        r = exact.search(node, INF)
        if r.outcome is None:
            raise SearchInvariantError("repair search returned BOTTOM")
        out.nodes_visited += r.nodes_visited
        out.abf_calls += r.abf_calls
        for c2, e2 in zip(r.outcome.charts, r.outcome.evals):
            out.charts.append(c2)
            out.params.append(e2.param)
            out.distortion.append(e2.dist)
            out.part_of.append(part)
            out.surrogate_distortion.append(None)

    order = sorted(range(out.count), key=lambda i: int(out.charts[i][0]))
    for name in ("charts", "params", "distortion", "part_of", "surrogate_distortion"):
        vals = getattr(out, name)
        setattr(out, name, [vals[i] for i in order])
    _check_partition(mesh, out.charts)
    return out


def _check_partition(mesh: Mesh, charts: List[np.ndarray]) -> None:
    allf = np.concatenate(charts)
    if len(allf) != mesh.n_faces or not np.array_equal(np.sort(allf), np.arange(mesh.n_faces)):
        raise SearchInvariantError("charts do not partition the mesh faces")
