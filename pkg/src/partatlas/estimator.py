"""scikit-learn style front end.

>>> from partatlas import PartUV, shapes
>>> uv = PartUV(tau=1.25).fit(shapes.cube())
>>> uv.n_charts_ >= 2
True
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .mesh import Mesh, load_obj
from .pack import DEFAULT_PADDING
from .pipeline import unwrap
from .search import SearchConfig


def check_mesh(X) -> Mesh:
    """Coerce ``X`` to a :class:`Mesh`.

    Accepts a ``Mesh``, a ``(positions, faces)`` pair, or a path to an OBJ file.
    """
    if isinstance(X, Mesh):
        return X
    if isinstance(X, (str, Path)):
        return load_obj(X)
    if isinstance(X, tuple) and len(X) == 2:
        pos = check_array(X[0], dtype=np.float64, ensure_min_samples=3)
        faces = check_array(X[1], dtype=None, ensure_min_samples=1)
        if pos.shape[1] != 3:
            raise ValueError(f"positions must have 3 columns, got {pos.shape[1]}")
        if faces.shape[1] != 3 or faces.dtype.kind not in "iu":
            raise ValueError("faces must be an integer array with 3 columns")
        return Mesh(pos, faces)
    raise TypeError(f"cannot interpret {type(X).__name__} as a mesh")


class PartUV(TransformerMixin, BaseEstimator):
    """Part-aligned UV unwrapping.

    ``fit`` decomposes and packs a mesh; ``transform`` returns the packed
    UV layout ``(uvs, face_uvs)`` for a mesh (re-running the pipeline if it
    is not the fitted one).
    """

    def __init__(self, tau=1.25, t=10, s=10, features="normals", solver="abf",
                 use_merge=True, use_recursion_refinement=True, use_surrogate=True,
                 max_multicomponent_depth=8, n_atlases=1, padding=DEFAULT_PADDING,
                 n_threads=1):
        self.tau = tau
        self.t = t
        self.s = s
        self.features = features
        self.solver = solver
        self.use_merge = use_merge
        self.use_recursion_refinement = use_recursion_refinement
        self.use_surrogate = use_surrogate
        self.max_multicomponent_depth = max_multicomponent_depth
        self.n_atlases = n_atlases
        self.padding = padding
        self.n_threads = n_threads

    def _config(self) -> SearchConfig:
        return SearchConfig(
            tau=float(self.tau), t=int(self.t), s=int(self.s), solver=self.solver,
            use_merge=bool(self.use_merge),
            use_recursion_refinement=bool(self.use_recursion_refinement),
            use_surrogate=bool(self.use_surrogate),
            max_multicomponent_depth=int(self.max_multicomponent_depth),
            thread_budget=int(self.n_threads),
        )

    def _run(self, mesh: Mesh):
        return unwrap(mesh, self._config(), features=self.features,
                      n_atlases=int(self.n_atlases), padding=float(self.padding))

    def fit(self, X, y=None):
        mesh = check_mesh(X)
        self.input_mesh_ = mesh
        self.result_ = self._run(mesh)
        self.n_charts_ = self.result_.n_charts
        self.charts_ = self.result_.charts
        self.metrics_ = self.result_.metrics()
        return self

    def transform(self, X):
        check_is_fitted(self, "result_")
        mesh = check_mesh(X)
        res = self.result_ if mesh is self.input_mesh_ else self._run(mesh)
        return res.uv_layout()

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).result_.uv_layout()

    def predict(self, X):
        """Chart index of every face."""
        check_is_fitted(self, "result_")
        mesh = check_mesh(X)
        res = self.result_ if mesh is self.input_mesh_ else self._run(mesh)
        labels = np.empty(res.mesh.n_faces, dtype=np.int64)
        for i, c in enumerate(res.charts):
            labels[c] = i
        return labels
