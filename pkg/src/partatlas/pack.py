"""Atlas packing: texel-density normalization, part grouping, skyline placement."""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .flatten import ChartParam
from .metrics import efficiency as _efficiency

DEFAULT_PADDING = 2.0 / 1024
BISECTION_STEPS = 12


@dataclass
class Placement:
    chart: int
    rotation: int                 # degrees, 0 or 90
    translation: np.ndarray
    scale: float                  # global, shared by every chart


@dataclass
class Atlas:
    index: int
    padding: float
    placements: List[Placement] = field(default_factory=list)


@dataclass
class ChartFrame:
    """A chart in its canonical frame: 2D area equals 3D area, bbox at the origin."""

    uv: np.ndarray
    faces: np.ndarray
    size: np.ndarray      # bbox width, height
    area3d: float


@dataclass
class PackResult:
    atlases: List[Atlas]
    frames: List[ChartFrame]
    uvs: List[np.ndarray]         # packed UVs per chart
    atlas_of: List[int]
    scale: float

    @property
    def padding(self) -> float:
        return self.atlases[0].padding if self.atlases else 0.0

    def atlas_areas(self) -> List[float]:
        areas = [0.0] * len(self.atlases)
        for uv, fr, a in zip(self.uvs, self.frames, self.atlas_of):
            p = uv[fr.faces]
            d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
            areas[a] += 0.5 * float(np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]).sum())
        return areas

    @property
    def efficiency(self) -> float:
        return _efficiency(self.atlas_areas())


def _min_area_rotation(uv: np.ndarray) -> float:
    """Angle that aligns the minimum-area bounding rectangle with the axes."""
    try:
        hull = uv[ConvexHull(uv).vertices]
    except (QhullError, ValueError):
        return 0.0
    e = np.roll(hull, -1, axis=0) - hull
    angles = np.arctan2(e[:, 1], e[:, 0])
    best, best_area = 0.0, np.inf
    for th in angles:
        c, s = np.cos(-th), np.sin(-th)
        q = hull @ np.array([[c, s], [-s, c]])
        area = np.prod(q.max(0) - q.min(0))
        if area < best_area * (1 - 1e-12):
            best, best_area = th, area
    return float(best)


def chart_frame(param: ChartParam) -> ChartFrame:
    uv = np.asarray(param.uv, dtype=np.float64)
    faces = param.mesh.faces
    a3 = float(param.mesh.face_areas.sum())
    a2 = float(np.abs(param.signed_area).sum())
    k = np.sqrt(a3 / a2) if a2 > 0 and a3 > 0 else 1.0
    used = np.unique(faces)
    th = _min_area_rotation(uv[used])
    c, s = np.cos(-th), np.sin(-th)
    q = (uv @ np.array([[c, s], [-s, c]])) * k
    q = q - q[used].min(0)
    size = q[used].max(0)
    return ChartFrame(q, faces, size, a3)


def _rotate(uv: np.ndarray, size: np.ndarray, rotation: int) -> np.ndarray:
    if rotation == 0:
        return uv
    return np.stack([size[1] - uv[:, 1], uv[:, 0]], axis=1)


# -- skyline -----------------------------------------------------------------


class _Skyline:
    def __init__(self, x0: float, y0: float, width: float, height: float):
        self.x0, self.y0 = x0, y0
        self.width, self.height = width, height
        self.segs: List[List[float]] = [[x0, y0, width]]   # x, y, w

    def _fit(self, i: int, w: float, h: float) -> Optional[float]:
        x = self.segs[i][0]
        if x + w > self.x0 + self.width + 1e-15:
            return None
        y, need, j = 0.0, w, i
        while need > 1e-15:
            if j >= len(self.segs):
                return None
            y = max(y, self.segs[j][1])
            need -= self.segs[j][2]
            j += 1
        if y + h > self.y0 + self.height + 1e-15:
            return None
        return y

    def find(self, w: float, h: float) -> Optional[Tuple[float, float, int]]:
        best = None
        for i in range(len(self.segs)):
            y = self._fit(i, w, h)
            if y is None:
                continue
            key = (y + h, self.segs[i][0])
            if best is None or key < best[0]:
                best = (key, i, y)
        if best is None:
            return None
        return self.segs[best[1]][0], best[2], best[1]

    def place(self, x: float, y: float, w: float, h: float) -> None:
        new = [x, y + h, w]
        out = []
        for s in self.segs:
            sx, sy, sw = s
            ex = sx + sw
            if ex <= x or sx >= x + w:
                out.append(s)
                continue
            if sx < x:
                out.append([sx, sy, x - sx])
            if ex > x + w:
                out.append([x + w, sy, ex - x - w])
        out.append(new)
        out.sort(key=lambda s: s[0])
        merged = [out[0]]
        for s in out[1:]:
            if s[1] == merged[-1][1]:
                merged[-1][2] += s[2]
            else:
                merged.append(s)
        self.segs = merged


def _pack_one(frames, order, scale, pad):
    """Place charts in ``order``; returns [(chart, rotation, x, y)] or None."""
    sky = _Skyline(pad, pad, 1.0 - pad, 1.0 - pad)
    out = []
    for ci in order:
        w, h = frames[ci].size * scale + pad
        best = None
        for rot, (rw, rh) in ((0, (w, h)), (90, (h, w))):
            pos = sky.find(rw, rh)
            if pos is None:
                continue
            key = (pos[1] + rh, pos[0], rot)
            if best is None or key < best[0]:
                best = (key, rot, pos, rw, rh)
        if best is None:
            return None
        _, rot, (x, y, _), rw, rh = best
        sky.place(x, y, rw, rh)
        out.append((ci, rot, x, y))
    return out


def assign_atlases(areas: Sequence[float], part_of: Sequence[int], n_atlases: int) -> List[int]:
    """Atlas index per chart, balancing total 3D area over part groups."""
    n = len(areas)
    if n_atlases == 1:
        return [0] * n
    groups = {}
    for i, p in enumerate(part_of):
        groups.setdefault(p, []).append(i)
    garea = {p: sum(areas[i] for i in idx) for p, idx in groups.items()}
    cap = sum(areas) / n_atlases
    load = [0.0] * n_atlases
    out = [0] * n
    for p in sorted(groups, key=lambda p: (-garea[p], p)):
        if garea[p] > cap * (1 + 1e-9):
            # too big for one atlas: spread its charts individually
            for i in sorted(groups[p], key=lambda i: (-areas[i], i)):
                a = min(range(n_atlases), key=lambda k: (load[k], k))
                out[i] = a
                load[a] += areas[i]
            continue
        a = min(range(n_atlases), key=lambda k: (load[k], k))
        for i in groups[p]:
            out[i] = a
        load[a] += garea[p]
    return out


def pack(params: Sequence[ChartParam], part_of: Optional[Sequence[int]] = None,
         n_atlases: int = 1, padding: float = DEFAULT_PADDING) -> PackResult:
    """Pack charts into ``n_atlases`` unit squares with a shared texel density."""
    if len(params) == 0:
        raise ValueError("no charts to pack")
    if n_atlases < 1:
        raise ValueError("n_atlases must be >= 1")
    if not 0 <= padding < 0.5:
        raise ValueError("padding must be in [0, 0.5)")
    if part_of is None:
        part_of = list(range(len(params)))
    frames = [chart_frame(p) for p in params]
    areas = [f.area3d for f in frames]
    atlas_of = assign_atlases(areas, part_of, n_atlases)

    # per atlas: part groups contiguous (largest group first), charts by bbox area
    orders = []
    for a in range(n_atlases):
        members = [i for i in range(len(frames)) if atlas_of[i] == a]
        groups = {}
        for i in members:
            groups.setdefault(part_of[i], []).append(i)
        gkeys = sorted(groups, key=lambda p: (-sum(areas[i] for i in groups[p]), p))
        order = []
        for p in gkeys:
            order += sorted(groups[p], key=lambda i: (-float(np.prod(frames[i].size)), i))
        orders.append(order)

    def attempt(scale):
        res = []
        for order in orders:
            r = _pack_one(frames, order, scale, padding)
            if r is None:
                return None
            res.append(r)
        return res

    inner = 1.0 - 2 * padding
    longest = max(float(f.size.max()) for f in frames)
    bbox_total = sum(float(np.prod(f.size)) for f in frames)
    hi = inner / longest if longest > 0 else 1.0
    if bbox_total > 0:
        hi = min(hi, np.sqrt(n_atlases * inner * inner / bbox_total))
    if attempt(hi) is not None:
        lo = hi
    else:
        lo = 0.0
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if attempt(mid) is not None:
                lo = mid
            else:
                hi = mid
    layout = attempt(lo)
    if layout is None:
        raise RuntimeError("charts do not fit even at vanishing scale; reduce padding")

    atlases = [Atlas(a, padding) for a in range(n_atlases)]
    uvs: List[Optional[np.ndarray]] = [None] * len(frames)
    for a, placed in enumerate(layout):
        for ci, rot, x, y in placed:
            fr = frames[ci]
            t = np.array([x, y])
            atlases[a].placements.append(Placement(ci, rot, t, lo))
            uvs[ci] = _rotate(fr.uv * lo, fr.size * lo, rot) + t
    return PackResult(atlases, frames, uvs, atlas_of, lo)


# -- rendering ---------------------------------------------------------------


def _palette(part_of: Sequence[int]) -> List[Tuple[int, int, int]]:
    parts = sorted(set(part_of))
    hue = {p: i / max(len(parts), 1) for i, p in enumerate(parts)}
    seen = {}
    out = []
    for p in part_of:
        j = seen.get(p, 0)
        seen[p] = j + 1
        v = 0.95 - 0.35 * ((j * 0.618) % 1.0)
        r, g, b = colorsys.hsv_to_rgb(hue[p], 0.55, v)
        out.append((int(r * 255), int(g * 255), int(b * 255)))
    return out


def render_atlas(result: PackResult, part_of: Optional[Sequence[int]] = None,
                 resolution: int = 1024, edges: bool = True):
    """One RGB image per atlas: charts filled by part colour, boundaries in black."""
    from PIL import Image, ImageDraw

    if part_of is None:
        part_of = list(range(len(result.frames)))
    colors = _palette(part_of)
    images = []
    for atlas in result.atlases:
        img = Image.new("RGB", (resolution, resolution), (255, 255, 255))
        draw = ImageDraw.Draw(img)
        for pl in atlas.placements:
            uv = result.uvs[pl.chart]
            faces = result.frames[pl.chart].faces
            px = np.column_stack([uv[:, 0] * resolution, (1.0 - uv[:, 1]) * resolution])
            for f in faces:
                draw.polygon([tuple(px[v]) for v in f], fill=colors[pl.chart])
            if edges:
                e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
                key, cnt = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
                for a, b in key[cnt == 1]:
                    draw.line([tuple(px[a]), tuple(px[b])], fill=(0, 0, 0), width=1)
        images.append(img)
    return images
