"""Procedural test meshes: spheres, cubes, tori, grids, and a Klein bottle."""
from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh


def icosahedron() -> TriangleMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return TriangleMesh(verts, faces)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Loop-subdivided icosahedron projected to a sphere (20*4^n faces)."""
    mesh = icosahedron()
    verts = [tuple(p) for p in mesh.positions]
    faces = [tuple(f) for f in mesh.faces]
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = np.array(verts[a]) + np.array(verts[b])
                p /= np.linalg.norm(p)
                midpoint[key] = len(verts)
                verts.append(tuple(p))
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    pos = np.array(verts, dtype=np.float64)
    pos *= radius / np.linalg.norm(pos, axis=1)[:, None]
    return TriangleMesh(pos, np.array(faces, dtype=np.int64))


def bumpy_sphere(subdivisions: int = 4, amplitude: float = 0.15, frequency: float = 3.0) -> TriangleMesh:
    """Sphere with smooth deterministic radial bumps; an organic stand-in."""
    base = icosphere(subdivisions)
    p = base.positions
    r = 1.0 + amplitude * (
        np.sin(frequency * p[:, 0]) * np.sin(frequency * p[:, 1])
        + 0.5 * np.cos(frequency * p[:, 2])
    )
    return TriangleMesh(p * r[:, None], base.faces)


def cube(segments: int = 1, size: float = 1.0) -> TriangleMesh:
    """Axis-aligned cube with each side split into 2*segments^2 triangles.

    Cell diagonals follow lattice parity, which keeps vertex fans symmetric:
    corner normals come out exactly diagonal and edge normals exactly at 45
    degrees, so the cube is a true stationary shape of the stylizer.
    """
    n = segments
    verts: list[tuple[float, float, float]] = []
    index: dict[tuple[int, int, int], int] = {}

    def vid(key: tuple[int, int, int]) -> int:
        if key not in index:
            i, j, k = key
            index[key] = len(verts)
            verts.append((
                size * (i / n - 0.5), size * (j / n - 0.5), size * (k / n - 0.5),
            ))
        return index[key]

    faces: list[tuple[int, int, int]] = []

    def add_quad(k00, k10, k11, k01):
        # split along the diagonal whose endpoints have even coordinate sum
        if sum(k00) % 2 == 0:
            quads = ((k00, k10, k11), (k00, k11, k01))
        else:
            quads = ((k00, k10, k01), (k10, k11, k01))
        for tri in quads:
            faces.append(tuple(vid(k) for k in tri))

    for u in range(n):
        for v in range(n):
            add_quad((u, v, 0), (u, v + 1, 0), (u + 1, v + 1, 0), (u + 1, v, 0))
            add_quad((u, v, n), (u + 1, v, n), (u + 1, v + 1, n), (u, v + 1, n))
            add_quad((u, 0, v), (u + 1, 0, v), (u + 1, 0, v + 1), (u, 0, v + 1))
            add_quad((u, n, v), (u, n, v + 1), (u + 1, n, v + 1), (u + 1, n, v))
            add_quad((0, u, v), (0, u, v + 1), (0, u + 1, v + 1), (0, u + 1, v))
            add_quad((n, u, v), (n, u + 1, v), (n, u + 1, v + 1), (n, u, v + 1))
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def torus(n_major: int = 48, n_minor: int = 24, major_radius: float = 1.0,
          minor_radius: float = 0.4) -> TriangleMesh:
    """Closed torus with 2*n_major*n_minor triangles."""
    verts = np.empty((n_major * n_minor, 3))
    for i in range(n_major):
        th = 2 * np.pi * i / n_major
        for j in range(n_minor):
            ph = 2 * np.pi * j / n_minor
            r = major_radius + minor_radius * np.cos(ph)
            verts[i * n_minor + j] = (r * np.cos(th), r * np.sin(th), minor_radius * np.sin(ph))
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces.append((a, b, c))
            faces.append((a, c, d))
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def grid_patch(nx: int = 8, ny: int = 8, size: float = 1.0) -> TriangleMesh:
    """Flat z=0 rectangle, triangulated; has one boundary loop."""
    verts = []
    for j in range(ny + 1):
        for i in range(nx + 1):
            verts.append((size * i / nx, size * j / ny, 0.0))
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = a + nx + 2
            d = a + nx + 1
            faces.append((a, b, c))
            faces.append((a, c, d))
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def single_triangle() -> TriangleMesh:
    return TriangleMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]], dtype=np.int64),
    )


def klein_bottle(n_u: int = 16, n_v: int = 16) -> TriangleMesh:
    """Figure-8 immersion of the Klein bottle; closed, manifold, non-orientable.

    The (u, v) grid wraps normally in v; going once around in u identifies
    (u + 2*pi, v) with (u, -v).
    """
    def vid(i: int, j: int) -> int:
        if i == n_u:
            i, j = 0, (-j) % n_v
        return (i % n_u) * n_v + (j % n_v)

    R = 2.0
    verts = np.empty((n_u * n_v, 3))
    for i in range(n_u):
        u = 2 * np.pi * i / n_u
        for j in range(n_v):
            v = 2 * np.pi * j / n_v
            w = R + np.cos(u / 2) * np.sin(v) - np.sin(u / 2) * np.sin(2 * v)
            verts[i * n_v + j] = (
                w * np.cos(u),
                w * np.sin(u),
                np.sin(u / 2) * np.sin(v) + np.cos(u / 2) * np.sin(2 * v),
            )
    faces = []
    for i in range(n_u):
        for j in range(n_v):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces.append((a, b, c))
            faces.append((a, c, d))
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))
