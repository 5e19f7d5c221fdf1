"""Distortion, seam, overlap and packing-efficiency measures."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .flatten import ChartParam, signed_areas

STRETCH_CLIP = 10.0


@dataclass
class DistortionReport:
    per_chart_distortion: List[float]
    set_distortion: float
    overall_area_distortion: float
    angular_metric: float
    seam_length: float = 0.0
    flipped_faces: int = 0
    excluded_degenerate_faces: int = 0
    degenerate_charts: List[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def _included(param: ChartParam) -> np.ndarray:
    return ~param.mesh.degenerate_faces


def face_ratios(param: ChartParam) -> np.ndarray:
    """``|area2D| / area3D`` per face; NaN for degenerate faces."""
    inc = _included(param)
    out = np.full(len(inc), np.nan)
    out[inc] = np.abs(param.signed_area[inc]) / param.area3d[inc]
    return out


def face_stretch(param: ChartParam) -> np.ndarray:
    """Per-face area stretch normalized by the chart's mean ratio.

    Degenerate faces are NaN. An all-degenerate chart yields an empty mean,
    which is reported as stretch 1 for every face.
    """
    r = face_ratios(param)
    inc = ~np.isnan(r)
    if not inc.any():
        return np.ones(len(r))
    mean = r[inc].mean()
    with np.errstate(divide="ignore", invalid="ignore"):
        return r / mean


def _face_terms(param: ChartParam) -> np.ndarray:
    """Clipped ``max(s, 1/s)`` per included face; flipped faces take the clip value."""
    s = face_stretch(param)
    inc = _included(param)
    if not inc.any():
        return np.ones(0)
    s = s[inc]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.maximum(s, 1.0 / s)
    t = np.where(np.isfinite(t), t, STRETCH_CLIP)
    t = np.minimum(t, STRETCH_CLIP)
    t[param.signed_area[inc] < 0] = STRETCH_CLIP
    return t


def chart_distortion(param: Optional[ChartParam]) -> float:
    """Mean clipped symmetric stretch over the chart; ``inf`` when unparameterized."""
    if param is None:
        return float("inf")
    t = _face_terms(param)
    if len(t) == 0:
        return 1.0
    return float(t.mean())


def set_distortion(params: Sequence[Optional[ChartParam]]) -> float:
    if len(params) == 0:
        raise ValueError("empty chart set")
    return max(chart_distortion(p) for p in params)


def overall_area_distortion(params: Sequence[ChartParam]) -> float:
    terms = [_face_terms(p) for p in params]
    terms = [t for t in terms if len(t)]
    if not terms:
        return 1.0
    return float(np.concatenate(terms).mean())


def face_angular_cosines(positions: np.ndarray, faces: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """|cos| of the angle between tangent and bitangent per face (NaN if degenerate)."""
    p = positions[faces]
    t = uv[faces]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    d1, d2 = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    ok = np.abs(det) > 1e-300
    det = np.where(ok, det, 1.0)
    T = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) / det[:, None]
    B = (e2 * d1[:, 0:1] - e1 * d2[:, 0:1]) / det[:, None]
    nt = np.linalg.norm(T, axis=1)
    nb = np.linalg.norm(B, axis=1)
    ok &= (nt > 0) & (nb > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.abs(np.einsum("ij,ij->i", T, B)) / (nt * nb)
    c[~ok] = np.nan
    return c


def angular_metric(params: Iterable[ChartParam]) -> float:
    """One minus the mean |cos(tangent, bitangent)| over all non-degenerate faces."""
    cos = []
    for p in params:
        c = face_angular_cosines(p.mesh.positions, p.mesh.faces, p.uv)
        cos.append(c[~p.mesh.degenerate_faces & ~np.isnan(c)])
    cos = np.concatenate(cos) if cos else np.zeros(0)
    if len(cos) == 0:
        return 1.0
    return float(1.0 - cos.mean())


def chart_boundary_length(faces: np.ndarray, uv: np.ndarray) -> float:
    """Total 2D length of edges used by exactly one face of the chart."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, cnt = np.unique(key, axis=0, return_counts=True)
    b = uniq[cnt == 1]
    if len(b) == 0:
        return 0.0
    return float(np.linalg.norm(uv[b[:, 0]] - uv[b[:, 1]], axis=1).sum())


def seam_length(charts: Sequence[tuple]) -> float:
    """Sum of every chart's boundary length in packed UV space.

    ``charts`` holds ``(local_faces, packed_uv)`` pairs. An edge shared by
    two charts contributes once per chart.
    """
    return float(sum(chart_boundary_length(f, uv) for f, uv in charts))


# -- overlap -----------------------------------------------------------------


def _sat_overlap(A: np.ndarray, B: np.ndarray, eps: float) -> np.ndarray:
    """Vectorized separating-axis test on triangle pairs, (k, 3, 2) each.

    True where the interiors overlap by more than ``eps`` along every edge normal.
    """
    overlap = np.ones(len(A), dtype=bool)
    for T in (A, B):
        for j in range(3):
            e = T[:, (j + 1) % 3] - T[:, j]
            n = np.stack([-e[:, 1], e[:, 0]], axis=1)
            ln = np.linalg.norm(n, axis=1)
            n = n / np.where(ln > 0, ln, 1.0)[:, None]
            pa = np.einsum("kij,kj->ki", A, n)
            pb = np.einsum("kij,kj->ki", B, n)
            sep = (pa.max(1) <= pb.min(1) + eps) | (pb.max(1) <= pa.min(1) + eps)
            overlap &= ~sep
    return overlap


def _candidate_pairs(tri: np.ndarray) -> np.ndarray:
    """Triangle pairs whose circumscribing discs (about the centroid) intersect."""
    c = tri.mean(axis=1)
    rad = np.linalg.norm(tri - c[:, None, :], axis=2).max(axis=1)
    if len(tri) < 2:
        return np.zeros((0, 2), np.int64)
    pairs = cKDTree(c).query_pairs(2 * rad.max(), output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 2), np.int64)
    d = np.linalg.norm(c[pairs[:, 0]] - c[pairs[:, 1]], axis=1)
    pairs = pairs[d <= rad[pairs[:, 0]] + rad[pairs[:, 1]]]
    return np.sort(pairs, axis=1)


def triangle_overlaps(uv: np.ndarray, faces: np.ndarray, brute_force: bool = False) -> np.ndarray:
    """Pairs of triangles whose 2D interiors intersect."""
    tri = uv[faces]
    area = np.abs(signed_areas(uv, faces))
    scale = max(np.ptp(uv, axis=0).max(), 1e-300) if len(uv) else 1.0
    eps = 1e-9 * scale
    if brute_force:
        i, j = np.triu_indices(len(faces), 1)
        pairs = np.stack([i, j], axis=1)
    else:
        pairs = _candidate_pairs(tri)
    if len(pairs) == 0:
        return pairs
    keep = (area[pairs[:, 0]] > eps * eps) & (area[pairs[:, 1]] > eps * eps)
    pairs = pairs[keep]
    hit = _sat_overlap(tri[pairs[:, 0]], tri[pairs[:, 1]], eps)
    return pairs[hit]


def no_overlap(param: Optional[ChartParam], brute_force: bool = False) -> bool:
    """True iff no face is flipped and no two UV triangles overlap."""
    if param is None:
        return False
    if param.flipped_count:
        return False
    return len(triangle_overlaps(param.uv, param.mesh.faces, brute_force)) == 0


def efficiency(areas_per_atlas: Sequence[float]) -> float:
    """Mean fill fraction of the unit-square atlases."""
    if len(areas_per_atlas) == 0:
        return 0.0
    return float(np.mean(areas_per_atlas))


def distortion_report(params: Sequence[ChartParam]) -> DistortionReport:
    per_chart = [chart_distortion(p) for p in params]
    return DistortionReport(
        per_chart_distortion=per_chart,
        set_distortion=max(per_chart) if per_chart else 1.0,
        overall_area_distortion=overall_area_distortion(params),
        angular_metric=angular_metric(params),
        flipped_faces=sum(p.flipped_count for p in params),
        excluded_degenerate_faces=int(sum(p.mesh.degenerate_faces.sum() for p in params)),
        degenerate_charts=[i for i, p in enumerate(params) if p.mesh.degenerate_faces.all()],
    )
