import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from partatlas import PartUV, check_mesh, shapes
from partatlas.mesh import Mesh, write_obj


def test_get_set_params_and_clone():
    est = PartUV(tau=1.5, solver="lscm", n_atlases=2)
    params = est.get_params()
    assert params["tau"] == 1.5 and params["solver"] == "lscm" and params["n_atlases"] == 2
    est.set_params(tau=2.0)
    assert est.tau == 2.0
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_fit_transform_cube():
    m = shapes.cube()
    est = PartUV().fit(m)
    assert 2 <= est.n_charts_ <= 6
    uvs, face_uvs = est.transform(m)
    assert face_uvs.shape == (12, 3)
    assert uvs.min() >= 0 and uvs.max() <= 1
    assert est.metrics_["area_distortion"] <= 1.25 + 1e-6
    labels = est.predict(m)
    assert labels.shape == (12,) and len(np.unique(labels)) == est.n_charts_


def test_fit_transform_matches_fit_then_transform():
    m = shapes.uv_sphere(8, 16)
    a_uv, a_f = PartUV().fit_transform(m)
    est = PartUV().fit(m)
    b_uv, b_f = est.transform(m)
    assert np.array_equal(a_uv, b_uv) and np.array_equal(a_f, b_f)


def test_transform_other_mesh_reruns():
    est = PartUV().fit(shapes.cube())
    uvs, face_uvs = est.transform(shapes.grid(3, 3))
    assert face_uvs.shape == (18, 3)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        PartUV().transform(shapes.cube())


def test_check_mesh_inputs(tmp_path):
    m = shapes.cube()
    assert check_mesh(m) is m
    from_tuple = check_mesh((m.positions, m.faces))
    assert np.array_equal(from_tuple.faces, m.faces)
    p = tmp_path / "c.obj"
    write_obj(p, m.positions, np.zeros((0, 2)), m.faces, None)
    assert check_mesh(str(p)).n_faces == 12


@pytest.mark.parametrize("bad, exc", [
    ((np.zeros((3, 2)), [[0, 1, 2]]), ValueError),
    ((np.zeros((3, 3)), np.array([[0.0, 1.0, 2.0]])), ValueError),
    ((np.full((3, 3), np.nan), [[0, 1, 2]]), ValueError),
    (42, TypeError),
])
def test_check_mesh_errors(bad, exc):
    with pytest.raises(exc):
        check_mesh(bad)


def test_invalid_param_raises_at_fit():
    with pytest.raises(ValueError):
        PartUV(tau=0.5).fit(shapes.cube())
    with pytest.raises(ValueError):
        PartUV(solver="slim").fit(shapes.cube())


def test_mesh_is_valid_input_type():
    assert isinstance(check_mesh((shapes.grid(1, 1).positions, [[0, 1, 2]])), Mesh)


def test_docstring_example():
    import doctest
    from partatlas import estimator
    failed, attempted = doctest.testmod(estimator)
    assert attempted > 0 and failed == 0
