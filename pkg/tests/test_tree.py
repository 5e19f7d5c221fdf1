import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partatlas import shapes
from partatlas.mesh import Mesh, MeshError, is_connected
from partatlas.tree import (
    FaceFeatureField,
    FeatureFileError,
    build_tree,
    features_from_normals,
    load_features,
    save_features,
)


def normals_tree(mesh):
    return build_tree(mesh, features_from_normals(mesh))


# -- features -----------------------------------------------------------------


def test_cube_has_six_feature_values():
    f = features_from_normals(shapes.cube())
    assert len(np.unique(np.round(f.features, 12), axis=0)) == 6


def test_grid_features_all_up():
    f = features_from_normals(shapes.grid(5, 5))
    assert np.allclose(f.features, [0, 0, 1])
    assert f.dim == 3 and f.source == "normals"


def test_degenerate_face_inherits_neighbor_feature():
    pos = np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0), (2, 0, 0)], float)
    # face 1 is a zero-area sliver along the x axis sharing edge (0, 1)
    m = Mesh(pos, [(0, 1, 2), (1, 0, 3)])
    assert m.degenerate_faces.tolist() == [False, True]
    f = features_from_normals(m)
    assert np.allclose(f.features[1], [0, 0, 1])


def test_isolated_degenerate_face_defaults():
    m = Mesh(np.array([(0, 0, 0), (1, 0, 0), (2, 0, 0)], float), [(0, 1, 2)])
    assert np.allclose(features_from_normals(m).features, [[1, 0, 0]])


@pytest.mark.parametrize("text", [False, True])
def test_feature_file_round_trip(tmp_path, text):
    m = shapes.grid(2, 2)
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(m.n_faces, 448))
    save_features(tmp_path / "f.bin", feats, text=text)
    field = load_features(tmp_path / "f.bin", m)
    assert field.dim == 448 and field.source == "external-file"
    expect = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    assert np.allclose(field.features, expect, atol=1e-6)


def test_feature_file_normalizes(tmp_path):
    m = shapes.grid(1, 1)
    feats = np.zeros((2, 5))
    feats[:, 0], feats[:, 1] = 3, 4
    save_features(tmp_path / "f.bin", feats)
    assert np.allclose(load_features(tmp_path / "f.bin", m).features[0], [0.6, 0.8, 0, 0, 0])


def test_feature_file_errors(tmp_path):
    m = shapes.grid(2, 2)
    save_features(tmp_path / "short.bin", np.ones((m.n_faces - 1, 4)))
    with pytest.raises(FeatureFileError, match="count"):
        load_features(tmp_path / "short.bin", m)
    save_features(tmp_path / "zero.bin", np.ones((m.n_faces, 0)))
    with pytest.raises(FeatureFileError, match="dimension"):
        load_features(tmp_path / "zero.bin", m)
    bad = np.ones((m.n_faces, 4))
    bad[5, 2] = np.nan
    save_features(tmp_path / "nan.bin", bad)
    with pytest.raises(FeatureFileError) as exc:
        load_features(tmp_path / "nan.bin", m)
    assert exc.value.index == 5
    (tmp_path / "junk.bin").write_bytes(b"XXXX")
    with pytest.raises(FeatureFileError, match="magic"):
        load_features(tmp_path / "junk.bin", m)


# -- tree structure -------------------------------------------------------------


def check_tree(tree, mesh, connected=True):
    n = mesh.n_faces
    assert tree.n_nodes == 2 * n - 1
    assert np.array_equal(tree.faces(tree.root), np.arange(n))
    for v in range(n):
        assert tree.is_leaf(v) and tree.faces(v).tolist() == [v]
    for v in range(n, tree.n_nodes):
        a, b = tree.children(v)
        fa, fb = tree.faces(a), tree.faces(b)
        assert len(np.intersect1d(fa, fb)) == 0
        assert np.array_equal(np.union1d(fa, fb), tree.faces(v))
        if connected:
            assert is_connected(mesh, tree.faces(v))


def test_two_face_tree():
    t = normals_tree(shapes.grid(1, 1))
    assert t.n_nodes == 3 and t.children(t.root) == (0, 1)


def test_two_disjoint_triangles_merge_at_root():
    pos = np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0), (5, 0, 0), (5, 1, 0), (5, 0, 1)], float)
    m = Mesh(pos, [(0, 1, 2), (3, 4, 5)])
    t = normals_tree(m)
    check_tree(t, m, connected=False)
    assert t.n_nodes == 3


def test_cube_sides_merge_first():
    t = normals_tree(shapes.cube())
    first_six = [t.faces(v).tolist() for v in range(12, 18)]
    assert sorted(first_six) == [[2 * i, 2 * i + 1] for i in range(6)]
    assert np.allclose(t.height[12:18], 0)
    assert np.all(t.height[18:] > 0)


def test_empty_mesh_rejected():
    with pytest.raises(MeshError):
        build_tree(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), FaceFeatureField(np.zeros((0, 3))))


def test_tree_deterministic():
    m = shapes.bumpy_sphere()
    assert normals_tree(m).to_bytes() == normals_tree(m).to_bytes()


def test_adjacent_phase_heights_monotone_on_root_paths():
    m = shapes.torus(12, 6)
    t = normals_tree(m)
    par = t.parent
    for v in range(m.n_faces, t.n_nodes):
        p = par[v]
        if p >= 0:
            assert t.height[p] >= t.height[v] - 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 10), st.integers(2, 10), st.integers(0, 10_000))
def test_tree_invariants_on_random_grids(nx, ny, seed):
    rng = np.random.default_rng(seed)
    g = shapes.grid(nx, ny)
    pos = g.positions + rng.normal(scale=0.2, size=g.positions.shape)
    m = Mesh(pos, g.faces)
    check_tree(normals_tree(m), m)


# -- independent clustering oracle ----------------------------------------------


def brute_force_average_linkage(feats, adjacency):
    """Merge sequence by explicit average pairwise cosine over member lists."""
    clusters = {i: [i] for i in range(len(feats))}
    adj = {i: set() for i in clusters}
    for a, b in adjacency:
        adj[a].add(b)
        adj[b].add(a)
    out = []
    while len(clusters) > 1:
        best = None
        for a in clusters:
            for b in adj[a]:
                if b not in clusters:
                    continue
                ma, mb = min(clusters[a]), min(clusters[b])
                if ma > mb:
                    continue
                d = 1.0 - np.mean([feats[i] @ feats[j] for i in clusters[a] for j in clusters[b]])
                k = (round(d, 12), ma, mb)
                if best is None or k < best[0]:
                    best = (k, a, b, d)
        _, a, b, d = best
        merged = clusters.pop(a) + clusters.pop(b)
        new = max(list(adj)) + 1
        clusters[new] = merged
        adj[new] = (adj[a] | adj[b]) - {a, b}
        for x in adj[new]:
            adj[x] = (adj[x] - {a, b}) | {new}
        out.append((frozenset(merged), d))
    return out


@pytest.mark.parametrize("seed", range(3))
def test_average_linkage_matches_brute_force(seed):
    m = shapes.grid(3, 3)
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(m.n_faces, 4))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    t = build_tree(m, FaceFeatureField(feats, "external-file"))
    got = [(frozenset(t.faces(v).tolist()), t.distance[v]) for v in range(m.n_faces, t.n_nodes)]
    expect = brute_force_average_linkage(feats, m.face_adjacency.tolist())
    assert [s for s, _ in got] == [s for s, _ in expect]
    assert np.allclose([h for _, h in got], [h for _, h in expect], atol=1e-12)
