import numpy as np
import pytest

from partatlas import shapes
from partatlas.flatten import ChartParam
from partatlas.metrics import triangle_overlaps
from partatlas.pack import DEFAULT_PADDING, assign_atlases, pack, render_atlas

from conftest import cached_run, suite_run

PAD = DEFAULT_PADDING


def square(size=1.0):
    g = shapes.grid(2, 2, size=size)
    return ChartParam(g, g.positions[:, :2], "lscm")


def bbox(uv, faces):
    p = uv[np.unique(faces)]
    return p.min(0), p.max(0)


def check_layout(res):
    """Shared post-pack checks: bounds, margins, pairwise gaps, no overlaps."""
    pad = res.padding
    for atlas in res.atlases:
        ids = [pl.chart for pl in atlas.placements]
        boxes = []
        for i in ids:
            uv, faces = res.uvs[i], res.frames[i].faces
            lo, hi = bbox(uv, faces)
            assert np.all(lo >= pad - 1e-12) and np.all(hi <= 1 - pad + 1e-12)
            boxes.append((lo, hi))
        for a in range(len(boxes)):
            for b in range(a + 1, len(boxes)):
                (la, ha), (lb, hb) = boxes[a], boxes[b]
                gap = max(lb[0] - ha[0], la[0] - hb[0], lb[1] - ha[1], la[1] - hb[1])
                assert gap >= pad - 1e-12
        if ids:
            uv = np.concatenate([res.uvs[i] for i in ids])
            offs = np.cumsum([0] + [len(res.uvs[i]) for i in ids[:-1]])
            faces = np.concatenate([res.frames[i].faces + o for i, o in zip(ids, offs)])
            assert len(triangle_overlaps(uv, faces)) == 0


def test_one_square_fills_atlas():
    res = pack([square()])
    assert res.efficiency == pytest.approx((1 - 2 * PAD) ** 2, rel=1e-3)
    assert np.allclose(res.atlases[0].placements[0].translation, [PAD, PAD])
    check_layout(res)


def test_four_squares_grid():
    res = pack([square() for _ in range(4)])
    assert res.efficiency >= 0.8
    xs = sorted({round(pl.translation[0], 6) for pl in res.atlases[0].placements})
    ys = sorted({round(pl.translation[1], 6) for pl in res.atlases[0].placements})
    assert len(xs) == 2 and len(ys) == 2
    check_layout(res)


def test_uniform_texel_density():
    res = pack([square(1.0), square(2.0)])
    areas = []
    for uv, fr in zip(res.uvs, res.frames):
        p = uv[fr.faces]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        areas.append(0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]).sum())
    assert areas[1] / areas[0] == pytest.approx(4.0, rel=1e-9)


def test_two_parts_two_atlases():
    res = pack([square(), square(), square(), square()], part_of=[0, 0, 1, 1], n_atlases=2)
    assert res.atlas_of[0] == res.atlas_of[1]
    assert res.atlas_of[2] == res.atlas_of[3]
    assert res.atlas_of[0] != res.atlas_of[2]
    check_layout(res)


def test_oversized_group_is_split():
    assert assign_atlases([1.0, 1.0, 1.0, 1.0], [0, 0, 0, 0], 2) == [0, 1, 0, 1]
    assert assign_atlases([1.0] * 3, [5, 5, 5], 1) == [0, 0, 0]


def test_pack_errors():
    with pytest.raises(ValueError):
        pack([])
    with pytest.raises(ValueError):
        pack([square()], n_atlases=0)
    with pytest.raises(ValueError):
        pack([square()], padding=0.6)


@pytest.mark.parametrize("name", ["cube", "uv_sphere", "torus", "bumpy_sphere", "two_component"])
def test_suite_layouts_valid(name):
    check_layout(suite_run(name).packing)


def test_two_atlas_suite_layout_valid():
    check_layout(cached_run("torus", n_atlases=2).packing)


def test_part_groups_contiguous():
    rng = np.random.default_rng(5)
    params = [square(s) for s in rng.uniform(0.5, 2.0, size=12)]
    parts = [0, 1, 2] * 4
    res = pack(params, part_of=parts)
    seq = [parts[pl.chart] for pl in res.atlases[0].placements]
    runs = [p for i, p in enumerate(seq) if i == 0 or seq[i - 1] != p]
    assert len(runs) == len(set(runs))


def test_padding_never_increases_efficiency():
    params = suite_run("torus").params
    effs = [pack(params, padding=p).efficiency for p in (0.0, 1 / 1024, 4 / 1024, 16 / 1024)]
    assert all(b <= a + 1e-12 for a, b in zip(effs, effs[1:]))


def test_render_coverage_matches_efficiency():
    res = suite_run("uv_sphere").packing
    (img,) = render_atlas(res, resolution=1024, edges=False)
    px = np.asarray(img)
    covered = np.any(px != 255, axis=2).mean()
    assert abs(covered - res.efficiency) <= 0.02


def test_render_one_chart_and_empty_atlas():
    res = pack([square()], n_atlases=2)
    imgs = render_atlas(res, resolution=64)
    assert len(imgs) == 2
    used = res.atlas_of[0]
    assert np.all(np.asarray(imgs[1 - used]) == 255)
    colors = {tuple(c) for c in np.asarray(imgs[used]).reshape(-1, 3)}
    assert len(colors - {(255, 255, 255), (0, 0, 0)}) == 1


def test_render_part_hues_distinct():
    res = pack([square(), square()], part_of=[0, 1])
    (img,) = render_atlas(res, part_of=[0, 1], resolution=128, edges=False)
    colors = {tuple(c) for c in np.asarray(img).reshape(-1, 3)} - {(255, 255, 255)}
    assert len(colors) == 2
