"""Chart parameterization: ABF++, LSCM and planar projection.

All solvers take a chart as a standalone :class:`~partatlas.mesh.Mesh`
(see :meth:`Mesh.submesh`) and return a :class:`ChartParam` whose UVs are
oriented so that the majority of faces have positive signed area.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu, spsolve

from .mesh import Mesh, boundary_loop, disk_check, orient_consistently

logger = logging.getLogger(__name__)

ABF_GRAD_TOL = 1e-5
ABF_MIN_ANGLE = np.deg2rad(0.5)


class FlattenError(RuntimeError):
    """The chart cannot be parameterized (not a disk, or a singular system)."""


@dataclass
class ChartParam:
    mesh: Mesh
    uv: np.ndarray
    solver: str
    converged: bool = True

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64)
        sa = signed_areas(self.uv, self.mesh.faces)
        if np.count_nonzero(sa < 0) > np.count_nonzero(sa > 0) or (
            np.count_nonzero(sa < 0) == np.count_nonzero(sa > 0) and sa.sum() < 0
        ):
            self.uv = self.uv * np.array([-1.0, 1.0])
            sa = -sa
        self.signed_area = sa

    @property
    def flipped_count(self) -> int:
        """Non-degenerate faces with negative signed UV area."""
        return int(np.count_nonzero((self.signed_area < 0) & ~self.mesh.degenerate_faces))

    @property
    def area3d(self) -> np.ndarray:
        return self.mesh.face_areas


def signed_areas(uv: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = uv[faces]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def corner_angles(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Interior angle at each face corner, shape (n_faces, 3)."""
    p = positions[faces]
    out = np.empty(faces.shape)
    for j in range(3):
        a = p[:, (j + 1) % 3] - p[:, j]
        b = p[:, (j + 2) % 3] - p[:, j]
        cross = np.linalg.norm(np.cross(a, b), axis=1) if p.shape[2] == 3 else np.abs(
            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        )
        out[:, j] = np.arctan2(cross, np.einsum("ij,ij->i", a, b))
    return out


def _local_frames(mesh: Mesh) -> np.ndarray:
    """Isometric 2D coordinates of every triangle in its own plane, (m, 3, 2)."""
    p = mesh.positions[mesh.faces]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    safe = np.where(l1 > 0, l1, 1.0)
    x = e1 / safe[:, None]
    n = np.cross(e1, e2)
    y = np.cross(n, x)
    ny = np.linalg.norm(y, axis=1)
    y = y / np.where(ny > 0, ny, 1.0)[:, None]
    out = np.zeros((len(p), 3, 2))
    out[:, 1, 0] = l1
    out[:, 2, 0] = np.einsum("ij,ij->i", e2, x)
    out[:, 2, 1] = np.einsum("ij,ij->i", e2, y)
    return out


def _frames_from_angles(alpha: np.ndarray) -> np.ndarray:
    """Triangle shapes from prescribed corner angles via the law of sines."""
    s = np.sin(alpha)
    out = np.zeros(alpha.shape + (2,))
    out[:, 1, 0] = s[:, 2]
    out[:, 2, 0] = s[:, 1] * np.cos(alpha[:, 0])
    out[:, 2, 1] = s[:, 1] * np.sin(alpha[:, 0])
    return out


def select_pins(mesh: Mesh) -> tuple:
    """Two boundary vertices at maximal Euclidean distance."""
    loop = boundary_loop(mesh)
    if len(loop) < 2:
        raise FlattenError("chart has no boundary")
    cand = np.sort(loop)
    p = mesh.positions[cand]
    if len(cand) > 3000:
        # the farthest pair lies on the convex hull of the boundary points
        from scipy.spatial import ConvexHull

        try:
            hull = np.unique(ConvexHull(p).simplices)
            cand, p = cand[hull], p[hull]
        except Exception:
            pass
    d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    a, b = sorted((int(cand[i]), int(cand[j])))
    return a, b


def _lscm_from_frames(frames: np.ndarray, faces: np.ndarray, n_verts: int, pins) -> np.ndarray:
    """Least-squares conformal fit of per-triangle target shapes.

    ``frames`` holds the target 2D shape of every triangle (any scale).
    Residual per triangle: ``sqrt(A) * (grad v - rot90(grad u))``.
    """
    m = len(faces)
    x = frames[:, :, 0]
    y = frames[:, :, 1]
    dbl = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    ok = np.abs(dbl) > 1e-300
    dbl_safe = np.where(ok, dbl, 1.0)
    # gradient of the hat function of corner j: perp(p[j+2] - p[j+1]) / (2A)
    gx = np.empty((m, 3))
    gy = np.empty((m, 3))
    for j in range(3):
        ex = x[:, (j + 2) % 3] - x[:, (j + 1) % 3]
        ey = y[:, (j + 2) % 3] - y[:, (j + 1) % 3]
        gx[:, j] = -ey / dbl_safe
        gy[:, j] = ex / dbl_safe
    w = np.sqrt(np.abs(dbl) / 2.0) * ok
    gx *= w[:, None]
    gy *= w[:, None]
    # unknown layout: u at 2k, v at 2k + 1
    # row 0: grad_x v + grad_y u = 0 ; row 1: grad_y v - grad_x u = 0
    rows = np.repeat(np.arange(2 * m), 6)
    cu = 2 * faces
    cv = cu + 1
    cols0 = np.concatenate([cv, cu], axis=1)
    vals0 = np.concatenate([gx, gy], axis=1)
    cols1 = np.concatenate([cv, cu], axis=1)
    vals1 = np.concatenate([gy, -gx], axis=1)
    cols = np.stack([cols0, cols1], axis=1).reshape(-1)
    vals = np.stack([vals0, vals1], axis=1).reshape(-1)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * m, 2 * n_verts))

    p0, p1 = pins
    fixed = np.array([2 * p0, 2 * p0 + 1, 2 * p1, 2 * p1 + 1])
    fixed_val = np.array([0.0, 0.0, 1.0, 0.0])
    free = np.setdiff1d(np.arange(2 * n_verts), fixed)
    Af = A[:, free]
    rhs = -(A[:, fixed] @ fixed_val)
    N = (Af.T @ Af).tocsc()
    try:
        sol = splu(N).solve(Af.T @ rhs)
    except RuntimeError as exc:
        raise FlattenError(f"singular conformal system: {exc}") from None
    if not np.all(np.isfinite(sol)):
        raise FlattenError("non-finite conformal solution")
    z = np.empty(2 * n_verts)
    z[free] = sol
    z[fixed] = fixed_val
    return z.reshape(-1, 2)


def _check_chart(mesh: Mesh) -> Mesh:
    """Validate a chart and return it with consistent face winding."""
    if mesh.n_faces == 0:
        raise FlattenError("empty chart")
    ok, reason = disk_check(mesh)
    if not ok:
        raise FlattenError(f"chart is not a disk ({reason})")
    if np.all(mesh.degenerate_faces):
        raise FlattenError("all faces degenerate")
    return orient_consistently(mesh)


def flatten_lscm(mesh: Mesh) -> ChartParam:
    """Least squares conformal map with two pinned boundary vertices."""
    mesh = _check_chart(mesh)
    uv = _lscm_from_frames(_local_frames(mesh), mesh.faces, mesh.n_vertices, select_pins(mesh))
    return ChartParam(mesh, uv, "lscm")


@dataclass
class ABFResult:
    alpha: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float


def _abf_constraints(mesh: Mesh):
    faces = mesh.faces
    m = len(faces)
    loop = boundary_loop(mesh)
    interior = np.ones(mesh.n_vertices, dtype=bool)
    interior[loop] = False
    interior[np.setdiff1d(np.arange(mesh.n_vertices), np.unique(faces))] = False
    vid = -np.ones(mesh.n_vertices, dtype=np.int64)
    vid[interior] = np.arange(interior.sum())
    return faces, m, vid, int(interior.sum())


def abf_angles(mesh: Mesh, outer_iters: int = 5, grad_tol: float = ABF_GRAD_TOL) -> ABFResult:
    """Optimize corner angles with Newton iterations on the ABF++ Lagrangian.

    Energy ``sum ((a - b) / b)^2`` over corners (``b`` the 3D angle) with
    triangle-sum, interior vertex-sum and interior log-sine wheel
    constraints. The second derivative of the wheel constraint is dropped
    from the Hessian, so angle variables eliminate through a diagonal block
    and each step solves the Schur complement in the multipliers.
    """
    faces, m, vid, n_int = _abf_constraints(mesh)
    beta = corner_angles(mesh.positions, faces)
    beta = np.clip(beta, ABF_MIN_ANGLE, np.pi - 2 * ABF_MIN_ANGLE)
    # rescale so every triangle sums to pi exactly before optimizing
    beta = beta * (np.pi / beta.sum(axis=1, keepdims=True))
    b = beta.reshape(-1)
    w = 1.0 / b**2
    n = 3 * m
    corner = np.arange(n).reshape(m, 3)
    cvert = vid[faces].reshape(-1)
    cin = cvert >= 0
    nxt = corner[:, [1, 2, 0]].reshape(-1)
    prv = corner[:, [2, 0, 1]].reshape(-1)

    J_tri = sparse.csr_matrix((np.ones(n), (np.repeat(np.arange(m), 3), np.arange(n))), shape=(m, n))
    J_plan = sparse.csr_matrix(
        (np.ones(cin.sum()), (cvert[cin], np.arange(n)[cin])), shape=(n_int, n)
    )

    def wheel(alpha):
        cot = 1.0 / np.tan(alpha)
        ls = np.log(np.sin(alpha))
        rows = np.r_[cvert[cin], cvert[cin]]
        cols = np.r_[nxt[cin], prv[cin]]
        vals = np.r_[cot[nxt[cin]], -cot[prv[cin]]]
        Jw = sparse.csr_matrix((vals, (rows, cols)), shape=(n_int, n))
        cw = np.bincount(cvert[cin], ls[nxt[cin]] - ls[prv[cin]], minlength=n_int)
        return Jw, cw

    alpha = b.copy()
    lam = np.zeros(m + 2 * n_int)
    converged = False
    gnorm = np.inf
    it = 0
    while True:
        Jw, cw = wheel(alpha)
        J = sparse.vstack([J_tri, J_plan, Jw]).tocsr()
        c = np.concatenate(
            [
                alpha.reshape(m, 3).sum(axis=1) - np.pi,
                J_plan @ alpha - 2 * np.pi,
                cw,
            ]
        )
        g = 2 * w * (alpha - b) + J.T @ lam
        gnorm = max(np.abs(g).max(), np.abs(c).max())
        if gnorm < grad_tol:
            converged = True
            break
        if it >= outer_iters:
            break
        it += 1
        Hinv = 1.0 / (2 * w)
        S = (J @ sparse.diags(Hinv) @ J.T).tocsc()
        rhs = c - J @ (Hinv * g)
        try:
            dlam = splu(S).solve(rhs)
        except RuntimeError:
            dlam = spsolve(S, rhs)
        dalpha = -Hinv * (g + J.T @ dlam)
        if not (np.all(np.isfinite(dalpha)) and np.all(np.isfinite(dlam))):
            raise FlattenError("non-finite ABF step")
        alpha = alpha + dalpha
        lam = lam + dlam
        if np.any(alpha <= 0) or np.any(alpha >= np.pi):
            raise FlattenError("ABF angle left (0, pi)")
    return ABFResult(alpha.reshape(m, 3), converged, it, float(gnorm))


def flatten_abf(mesh: Mesh, outer_iters: int = 5, grad_tol: float = ABF_GRAD_TOL) -> ChartParam:
    """ABF++ angle optimization followed by conformal reconstruction.

    Falls back to :func:`flatten_lscm` when the Newton iteration breaks down.
    """
    mesh = _check_chart(mesh)
    pins = select_pins(mesh)
    try:
        res = abf_angles(mesh, outer_iters, grad_tol)
    except (FlattenError, FloatingPointError) as exc:
        logger.debug("ABF failed (%s); using LSCM", exc)
        return flatten_lscm(mesh)
    uv = _lscm_from_frames(_frames_from_angles(res.alpha), mesh.faces, mesh.n_vertices, pins)
    return ChartParam(mesh, uv, "abf", converged=res.converged)


def flatten_projection(mesh: Mesh) -> ChartParam:
    """Orthographic projection onto the plane of the area-weighted mean normal."""
    if mesh.n_faces == 0:
        raise FlattenError("empty chart")
    mesh = orient_consistently(mesh)
    n = (mesh.face_normals * mesh.face_areas[:, None]).sum(axis=0)
    norm = np.linalg.norm(n)
    n = n / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
    helper = np.eye(3)[np.argmin(np.abs(n))]
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    uv = np.stack([mesh.positions @ e1, mesh.positions @ e2], axis=1)
    return ChartParam(mesh, uv, "projection")


SOLVERS = {
    "abf": flatten_abf,
    "lscm": flatten_lscm,
    "projection": flatten_projection,
}


def get_solver(name: str) -> Callable[[Mesh], ChartParam]:
    try:
        return SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown solver {name!r}") from None


def try_flatten(mesh: Mesh, solver: str = "abf") -> Optional[ChartParam]:
    """Flatten, returning ``None`` when the chart cannot be parameterized."""
    try:
        return get_solver(solver)(mesh)
    except FlattenError:
        return None
