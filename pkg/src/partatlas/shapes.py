"""Procedurally generated meshes used by the test suite and ``bench``."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def grid(nx: int = 20, ny: int = 20, size: float = 1.0) -> Mesh:
    """Flat ``nx`` x ``ny`` quad grid in the z = 0 plane, two triangles per quad."""
    xs = np.linspace(0.0, size, nx + 1)
    ys = np.linspace(0.0, size, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pos = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            faces += [(a, b, c), (a, c, d)]
    return Mesh(pos, faces)


def cube(size: float = 1.0) -> Mesh:
    """Closed axis-aligned cube centred at the origin, 12 outward-facing triangles."""
    h = size / 2
    pos = np.array(
        [[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)], dtype=float
    )
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return Mesh(pos, faces)


def cylinder(segments: int = 32, height: float = 2.0, radius: float = 1.0, rings: int = 4,
             capped: bool = True) -> Mesh:
    """Cylinder along z. With caps it is closed (fan caps around centre vertices)."""
    theta = 2 * np.pi * np.arange(segments) / segments
    zs = np.linspace(-height / 2, height / 2, rings + 1)
    pos = [(radius * np.cos(t), radius * np.sin(t), z) for z in zs for t in theta]
    faces = []
    for r in range(rings):
        for i in range(segments):
            a = r * segments + i
            b = r * segments + (i + 1) % segments
            c, d = b + segments, a + segments
            faces += [(a, b, c), (a, c, d)]
    if capped:
        bottom = len(pos)
        pos.append((0.0, 0.0, zs[0]))
        top = len(pos)
        pos.append((0.0, 0.0, zs[-1]))
        last = rings * segments
        for i in range(segments):
            j = (i + 1) % segments
            faces.append((bottom, j, i))
            faces.append((top, last + i, last + j))
    return Mesh(np.array(pos), faces)


def uv_sphere(n_lat: int = 16, n_lon: int = 32, radius: float = 1.0) -> Mesh:
    """Latitude/longitude sphere with single pole vertices."""
    pos = [(0.0, 0.0, radius)]
    for i in range(1, n_lat):
        phi = np.pi * i / n_lat
        for j in range(n_lon):
            th = 2 * np.pi * j / n_lon
            pos.append((radius * np.sin(phi) * np.cos(th), radius * np.sin(phi) * np.sin(th),
                        radius * np.cos(phi)))
    pos.append((0.0, 0.0, -radius))
    south = len(pos) - 1
    faces = []

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    for j in range(n_lon):
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j + 1), ring(i + 1, j)
            faces += [(a, d, c), (a, c, b)]
    for j in range(n_lon):
        faces.append((south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    return Mesh(np.array(pos), faces)


def torus(n_major: int = 24, n_minor: int = 12, major: float = 1.0, minor: float = 0.35) -> Mesh:
    pos = []
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            v = 2 * np.pi * j / n_minor
            r = major + minor * np.cos(v)
            pos.append((r * np.cos(u), r * np.sin(u), minor * np.sin(v)))
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [(a, b, c), (a, c, d)]
    return Mesh(np.array(pos), faces)


def bumpy_sphere(n_lat: int = 16, n_lon: int = 32, amplitude: float = 0.08,
                 frequency: int = 5) -> Mesh:
    """UV sphere with a deterministic radial displacement."""
    base = uv_sphere(n_lat, n_lon)
    p = base.positions
    r = np.linalg.norm(p, axis=1)
    u = p / r[:, None]
    bump = amplitude * np.sin(frequency * u[:, 0] * np.pi) * np.cos(frequency * u[:, 1] * np.pi) \
        * np.cos(frequency * u[:, 2] * np.pi / 2)
    return Mesh(u * (1.0 + bump)[:, None], base.faces)


def hemisphere(n_rings: int = 5, n_segments: int = 20, radius: float = 1.0) -> Mesh:
    """Upper half of a sphere as a disk: pole fan plus quad rings down to the equator."""
    pos = [(0.0, 0.0, radius)]
    for i in range(1, n_rings + 1):
        phi = (np.pi / 2) * i / n_rings
        for j in range(n_segments):
            th = 2 * np.pi * j / n_segments
            pos.append((radius * np.sin(phi) * np.cos(th), radius * np.sin(phi) * np.sin(th),
                        radius * np.cos(phi)))

    def ring(i, j):
        return 1 + (i - 1) * n_segments + (j % n_segments)

    faces = [(0, ring(1, j), ring(1, j + 1)) for j in range(n_segments)]
    for i in range(1, n_rings):
        for j in range(n_segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j + 1), ring(i + 1, j)
            faces += [(a, d, c), (a, c, b)]
    return Mesh(np.array(pos), faces)


def disk(n_rings: int = 5, n_segments: int = 20, radius: float = 1.0) -> Mesh:
    """Planar triangulated disk in z = 0 (same connectivity as :func:`hemisphere`)."""
    h = hemisphere(n_rings, n_segments, radius)
    p = h.positions.copy()
    rad = np.linalg.norm(p[:, :2], axis=1)
    # map polar angle to planar radius linearly
    phi = np.arctan2(rad, p[:, 2])
    scale = np.where(rad > 0, (phi / (np.pi / 2)) * radius / np.where(rad > 0, rad, 1), 0.0)
    q = np.stack([p[:, 0] * scale, p[:, 1] * scale, np.zeros(len(p))], axis=1)
    return Mesh(q, h.faces)


def cylinder_strip(n_around: int = 8, n_along: int = 6, angle: float = np.pi / 2,
                   radius: float = 1.0, length: float = 2.0) -> Mesh:
    """Open developable strip: ``angle`` radians of a cylinder wall."""
    pos = []
    for i in range(n_along + 1):
        z = length * i / n_along
        for j in range(n_around + 1):
            t = angle * j / n_around
            pos.append((radius * np.cos(t), radius * np.sin(t), z))
    faces = []
    w = n_around + 1
    for i in range(n_along):
        for j in range(n_around):
            a = i * w + j
            faces += [(a, a + 1, a + w + 1), (a, a + w + 1, a + w)]
    return Mesh(np.array(pos), faces)


def two_component_scene() -> Mesh:
    """Two identical UV spheres side by side, not connected."""
    s = uv_sphere(8, 16, radius=0.5)
    p2 = s.positions + np.array([2.0, 0.0, 0.0])
    return Mesh(np.concatenate([s.positions, p2]),
                np.concatenate([s.faces, s.faces + s.n_vertices]))


def non_manifold_fan() -> Mesh:
    """Three quad fins glued along one shared edge (non-manifold edge of valence 3)."""
    pos = [(0.0, 0.0, 0.0), (0.0, 0.0, 1.0)]
    faces = []
    for k in range(3):
        t = 2 * np.pi * k / 3
        d = np.array([np.cos(t), np.sin(t), 0.0])
        base = len(pos)
        pos.append(tuple(d))
        pos.append(tuple(d + np.array([0.0, 0.0, 1.0])))
        faces.append((0, base, 1))
        faces.append((base, base + 1, 1))
    return Mesh(np.array(pos), faces)


def l_sheet(n: int = 4) -> Mesh:
    """Two perpendicular n x n unit rectangles sharing one edge (developable)."""
    pos = []
    for i in range(n + 1):
        for j in range(2 * n + 1):
            x = i / n
            s = j / n
            pos.append((x, min(s, 1.0), max(s - 1.0, 0.0)))
    faces = []
    w = 2 * n + 1
    for i in range(n):
        for j in range(2 * n):
            a = i * w + j
            faces += [(a, a + w, a + w + 1), (a, a + w + 1, a + 1)]
    return Mesh(np.array(pos), faces)


SUITE = {
    "grid": lambda: grid(20, 20),
    "cube": cube,
    "cylinder": lambda: cylinder(32),
    "uv_sphere": lambda: uv_sphere(16, 32),
    "torus": lambda: torus(24, 12),
    "two_component": two_component_scene,
    "bumpy_sphere": bumpy_sphere,
    "nonmanifold_fan": non_manifold_fan,
}


def suite() -> dict:
    """The acceptance suite as ``{name: Mesh}``."""
    return {name: make() for name, make in SUITE.items()}
