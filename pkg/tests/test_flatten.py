import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partatlas import shapes
from partatlas.flatten import (
    FlattenError,
    abf_angles,
    corner_angles,
    flatten_abf,
    flatten_lscm,
    flatten_projection,
    get_solver,
)
from partatlas.mesh import Mesh, boundary_loop
from partatlas.metrics import angular_metric, chart_distortion

SOLVERS = [flatten_lscm, flatten_abf]


def similarity_residual(src, dst):
    """Max deviation after the best least-squares similarity map src -> dst."""
    z = src[:, 0] + 1j * src[:, 1]
    w = dst[:, 0] + 1j * dst[:, 1]
    A = np.stack([z, np.ones_like(z)], axis=1)
    coef, *_ = np.linalg.lstsq(A, w, rcond=None)
    return float(np.abs(A @ coef - w).max())


def jittered_disk():
    d = shapes.disk(5, 20)
    rng = np.random.default_rng(3)
    pos = d.positions.copy()
    interior = np.ones(len(pos), bool)
    interior[boundary_loop(d)] = False
    pos[interior, :2] += rng.uniform(-0.03, 0.03, size=(interior.sum(), 2))
    return Mesh(pos, d.faces)


@pytest.mark.parametrize("solver", SOLVERS)
def test_planar_disk_reproduced_up_to_similarity(solver):
    m = jittered_disk()
    assert m.n_faces >= 100
    p = solver(m)
    # the map may be mirrored to keep positive orientation
    res = min(similarity_residual(p.uv, m.positions[:, :2]),
              similarity_residual(p.uv * [-1, 1], m.positions[:, :2]))
    assert res < 1e-6
    assert chart_distortion(p) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("solver", SOLVERS)
def test_single_triangle_congruent_up_to_similarity(solver):
    pos = np.array([(0, 0, 0), (2, 0, 1), (0.3, 1.5, -0.5)], float)
    p = solver(Mesh(pos, [(0, 1, 2)]))
    assert np.allclose(corner_angles(p.uv, p.mesh.faces), corner_angles(pos, p.mesh.faces), atol=1e-9)


def test_planar_abf_angles_unchanged():
    m = jittered_disk()
    res = abf_angles(m)
    assert res.converged and res.iterations <= 1
    assert np.allclose(res.alpha, corner_angles(m.positions, m.faces), atol=1e-6)


def test_hemisphere_constraint_residuals():
    m = shapes.hemisphere(5, 20)
    assert m.n_faces == 180
    res = abf_angles(m)
    assert res.converged
    a = res.alpha
    assert np.all((a > 0) & (a < np.pi))
    assert np.abs(a.sum(axis=1) - np.pi).max() <= 1e-4
    interior = np.ones(m.n_vertices, bool)
    interior[boundary_loop(m)] = False
    sums = np.bincount(m.faces.ravel(), a.ravel(), minlength=m.n_vertices)
    assert np.abs(sums[interior] - 2 * np.pi).max() <= 1e-4


def unrolled(strip, radius=1.0):
    t = np.arctan2(strip.positions[:, 1], strip.positions[:, 0])
    return np.stack([radius * t, strip.positions[:, 2]], axis=1)


@pytest.mark.parametrize("solver", SOLVERS)
def test_strip_matches_analytic_unrolling(solver):
    s = shapes.cylinder_strip()
    p = solver(s)
    want = corner_angles(unrolled(s), s.faces)
    got = corner_angles(p.uv, p.mesh.faces)
    assert np.abs(got - want).max() < 1e-3
    assert chart_distortion(p) <= 1.01
    assert angular_metric([p]) >= 0.999


def test_abf_no_worse_than_lscm_on_developable():
    for s in (shapes.cylinder_strip(), shapes.cylinder_strip(12, 4, angle=np.pi), shapes.l_sheet()):
        assert chart_distortion(flatten_abf(s)) <= chart_distortion(flatten_lscm(s)) + 1e-6


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_scale_invariance(c):
    m = shapes.hemisphere(3, 12)
    base = flatten_abf(m)
    scaled = flatten_abf(Mesh(m.positions * c, m.faces))
    assert abs(chart_distortion(scaled) - chart_distortion(base)) < 1e-9
    assert similarity_residual(scaled.uv, base.uv) < 1e-8


def test_projection_examples():
    g = shapes.grid(4, 4)
    assert chart_distortion(flatten_projection(g)) == pytest.approx(1.0, abs=1e-12)
    h = shapes.hemisphere(4, 16)
    assert chart_distortion(flatten_projection(h)) > 1.0


def test_not_a_disk_rejected():
    with pytest.raises(FlattenError, match="disk"):
        flatten_lscm(shapes.cube())
    with pytest.raises(FlattenError, match="disk"):
        flatten_abf(shapes.cylinder(8, capped=False))


def test_all_degenerate_chart_rejected():
    m = Mesh(np.array([(0, 0, 0), (1, 0, 0), (2, 0, 0)], float), [(0, 1, 2)])
    with pytest.raises(FlattenError):
        flatten_lscm(m)


def test_flip_count_and_orientation():
    p = flatten_abf(shapes.hemisphere(4, 16))
    assert p.flipped_count == 0
    assert np.all(p.signed_area > 0)


def test_unknown_solver():
    with pytest.raises(ValueError):
        get_solver("slim")
