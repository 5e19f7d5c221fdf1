"""End-to-end unwrapping: repair, features, part tree, search, pack, emit."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .flatten import ChartParam
from .mesh import Mesh, repair_non_manifold, write_obj
from .metrics import angular_metric, chart_boundary_length, overall_area_distortion, seam_length
from .pack import DEFAULT_PADDING, PackResult, pack
from .search import EXACT_TOL, SearchConfig, SearchOutput, run_search
from .tree import FaceFeatureField, PartTree, build_tree, features_from_normals, load_features

SCHEMA = "partatlas.run/1"
# fields that legitimately differ between otherwise identical runs
TIMING_KEYS = ("time_s", "timings", "runtime")


@dataclass
class RepairInfo:
    non_manifold_edges: int
    vertices_added: int
    max_edge_valence_before: int
    max_edge_valence_after: int


@dataclass
class UnwrapResult:
    mesh: Mesh
    repair: RepairInfo
    tree: PartTree
    search: SearchOutput
    packing: PackResult
    config: SearchConfig
    timings: Dict[str, float] = field(default_factory=dict)
    feature_source: str = "normals"

    @property
    def charts(self) -> List[np.ndarray]:
        return self.search.charts

    @property
    def params(self) -> List[ChartParam]:
        return self.search.params

    @property
    def n_charts(self) -> int:
        return self.search.count

    @property
    def tau_violations(self) -> List[int]:
        return [i for i, d in enumerate(self.search.distortion)
                if not d <= self.config.tau + EXACT_TOL]

    def uv_layout(self):
        """Global UV arrays: ``(uvs, face_uvs)`` with one ``vt`` per chart corner vertex."""
        return _global_uvs(self.mesh, self.charts, self.packing.uvs)

    def metrics(self) -> dict:
        params = self.params
        pk = self.packing
        seams = [(fr.faces, uv) for fr, uv in zip(pk.frames, pk.uvs)]
        per_chart = []
        for i, (chart, p, d) in enumerate(zip(self.charts, params, self.search.distortion)):
            sd = self.search.surrogate_distortion[i]
            per_chart.append({
                "id": i,
                "faces": int(len(chart)),
                "first_face": int(chart[0]),
                "part": int(self.search.part_of[i]),
                "atlas": int(pk.atlas_of[i]),
                "distortion": float(d),
                "surrogate_distortion": None if sd is None else float(sd),
                "angular": angular_metric([p]),
                "boundary_length": chart_boundary_length(pk.frames[i].faces, pk.uvs[i]),
                "solver": p.solver,
            })
        return {
            "charts": self.n_charts,
            "seam_length": seam_length(seams),
            "angular": angular_metric(params),
            "area_distortion": float(max(self.search.distortion)),
            "overall_area_distortion": overall_area_distortion(params),
            "efficiency": pk.efficiency,
            "per_chart": per_chart,
        }

    def report(self, input_path: Optional[str] = None) -> dict:
        """The run report as a JSON-serializable dict."""
        out = {"schema": SCHEMA, "input": input_path,
               "faces": self.mesh.n_faces, "vertices": self.mesh.n_vertices,
               "repair": asdict(self.repair), "features": self.feature_source,
               "config": {k: v for k, v in asdict(self.config).items() if k != "thread_budget"}}
        m = self.metrics()
        per_chart = m.pop("per_chart")
        out.update(m)
        out["time_s"] = float(sum(self.timings.values()))
        out["timings"] = dict(self.timings)
        out["runtime"] = {"thread_budget": self.config.thread_budget}
        out["search"] = {
            "nodes_visited": self.search.nodes_visited,
            "abf_calls": self.search.abf_calls,
            "surrogate_calls": self.search.surrogate_calls,
            "repaired_charts": self.search.repaired_charts,
        }
        out["atlases"] = [
            {"index": a.index, "padding": a.padding,
             "placements": [{"chart": p.chart, "rotation": p.rotation,
                             "translation": [float(x) for x in p.translation],
                             "scale": float(p.scale)} for p in a.placements]}
            for a in self.packing.atlases
        ]
        out["per_chart"] = per_chart
        return out

    def write(self, path) -> List[Path]:
        """Write the combined OBJ and, with several atlases, one OBJ per atlas."""
        return save_obj(self.mesh, self.charts, self.packing, path)


def _global_uvs(mesh, charts, chart_uvs):
    uvs, face_uvs = [], np.zeros((mesh.n_faces, 3), dtype=np.int64)
    off = 0
    for chart, puv in zip(charts, chart_uvs):
        sub, _ = mesh.submesh(chart)
        face_uvs[chart] = sub.faces + off
        uvs.append(puv)
        off += len(puv)
    return np.concatenate(uvs), face_uvs


def save_obj(mesh: Mesh, charts: List[np.ndarray], packing: PackResult, path) -> List[Path]:
    """Write the unwrapped mesh with one ``vt`` per chart vertex.

    Faces are grouped by chart (``usemtl chart_<k>``). With several atlases,
    one OBJ per atlas is written next to the combined file.
    """
    path = Path(path)
    chart_of = np.full(mesh.n_faces, -1, dtype=np.int64)
    for i, c in enumerate(charts):
        chart_of[c] = i
    if np.any(chart_of < 0):
        raise ValueError("face missing UVs: not covered by any chart")
    if len(packing.uvs) != len(charts) or any(u is None for u in packing.uvs):
        raise ValueError("unplaced chart")
    uvs, face_uvs = _global_uvs(mesh, charts, packing.uvs)
    order = np.argsort(chart_of, kind="stable")
    written = []

    def emit(p, sel):
        write_obj(p, mesh.positions, uvs, mesh.faces[sel], face_uvs[sel],
                  groups=[f"chart_{chart_of[f]}" for f in sel])
        written.append(p)

    emit(path, order)
    n_atlases = len(packing.atlases)
    if n_atlases > 1:
        atlas_of = np.asarray(packing.atlas_of)[chart_of]
        for a in range(n_atlases):
            emit(path.with_name(f"{path.stem}_atlas{a}{path.suffix}"), order[atlas_of[order] == a])
    return written


def repair(mesh: Mesh):
    val = mesh.edge_valence
    fixed = repair_non_manifold(mesh)
    info = RepairInfo(
        non_manifold_edges=int(np.count_nonzero(val > 2)),
        vertices_added=fixed.n_vertices - mesh.n_vertices,
        max_edge_valence_before=int(val.max()) if len(val) else 0,
        max_edge_valence_after=int(fixed.edge_valence.max()) if fixed.n_faces else 0,
    )
    return fixed, info


def unwrap(mesh: Mesh, config: Optional[SearchConfig] = None,
           features: Union[str, Path, FaceFeatureField, None] = "normals",
           n_atlases: int = 1, padding: float = DEFAULT_PADDING) -> UnwrapResult:
    """Run the whole pipeline on an in-memory mesh."""
    cfg = config or SearchConfig()
    timings = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    fixed, info = repair(mesh)
    lap("repair")
    if features is None or (isinstance(features, str) and features == "normals"):
        field_ = features_from_normals(fixed, cfg.s)
    elif isinstance(features, FaceFeatureField):
        field_ = features
    else:
        field_ = load_features(features, fixed)
    lap("features")
    tree = build_tree(fixed, field_)
    lap("tree")
    out = run_search(fixed, tree, cfg)
    lap("search")
    packed = pack(out.params, out.part_of, n_atlases=n_atlases, padding=padding)
    lap("pack")
    return UnwrapResult(fixed, info, tree, out, packed, cfg, timings, field_.source)


def strip_timing(obj):
    """Recursively drop wall-clock fields from a report or bench summary."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj
