"""Procedural test shapes: boxes, convex hulls, spheres, triangle soups."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import TriMesh, make_mesh


def box(size_x: float = 1.0, size_y: float = 1.0, size_z: float = 1.0,
        center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with outward normals (12 triangles)."""
    cx, cy, cz = center
    hx, hy, hz = size_x / 2.0, size_y / 2.0, size_z / 2.0
    corners = np.array([
        [cx - hx, cy - hy, cz - hz],
        [cx + hx, cy - hy, cz - hz],
        [cx + hx, cy + hy, cz - hz],
        [cx - hx, cy + hy, cz - hz],
        [cx - hx, cy - hy, cz + hz],
        [cx + hx, cy - hy, cz + hz],
        [cx + hx, cy + hy, cz + hz],
        [cx - hx, cy + hy, cz + hz],
    ])
    quads = [
        (0, 3, 2, 1),  # bottom (-z)
        (4, 5, 6, 7),  # top (+z)
        (0, 1, 5, 4),  # -y side
        (2, 3, 7, 6),  # +y side
        (1, 2, 6, 5),  # +x face
        (0, 4, 7, 3),  # -x face
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return make_mesh(corners, np.array(faces))


def unit_cube() -> TriMesh:
    """Unit cube spanning [0, 1]^3."""
    return box(1.0, 1.0, 1.0, center=(0.5, 0.5, 0.5))


def convex_hull_mesh(points: np.ndarray) -> TriMesh:
    """Triangulated convex hull of a point set, normals oriented outward."""
    points = np.asarray(points, dtype=np.float64)
    hull = ConvexHull(points)
    centroid = points[hull.vertices].mean(axis=0)
    faces = []
    for simplex in hull.simplices:
        a, b, c = points[simplex]
        n = np.cross(b - a, c - a)
        if np.dot(n, a - centroid) < 0.0:
            simplex = simplex[[0, 2, 1]]
        faces.append(simplex)
    return make_mesh(points, np.array(faces))


def random_convex_hull(rng: np.random.Generator, num_points: int = 24,
                       radius: float = 1.0) -> TriMesh:
    """Convex hull of random points in a ball."""
    pts = rng.normal(size=(num_points, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= radius * rng.uniform(0.4, 1.0, size=(num_points, 1))
    return convex_hull_mesh(pts)


def random_triangle_soup(rng: np.random.Generator, num_faces: int = 40,
                         extent: float = 1.0) -> TriMesh:
    """Disconnected random triangles inside a cube, for rasterizer stress."""
    centers = rng.uniform(-extent, extent, size=(num_faces, 1, 3))
    offsets = rng.uniform(-0.35 * extent, 0.35 * extent, size=(num_faces, 3, 3))
    tri = (centers + offsets).reshape(-1, 3)
    faces = np.arange(num_faces * 3).reshape(-1, 3)
    return make_mesh(tri, faces, drop_degenerate=True)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron; watertight sphere approximation."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key in cache:
            return cache[key]
        m = verts[i] + verts[j]
        m = m / np.linalg.norm(m)
        verts.append(m)
        cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius
    return make_mesh(v, np.array(faces))


def random_box_like(rng: np.random.Generator) -> TriMesh:
    """Randomized box with tapered top, a crude vehicle-like solid.

    Lateral and vertical extents vary independently, so the frontal
    silhouette aspect ratio (and hence its letterboxed pixel area) varies
    from sample to sample while the bottom footprint alone underdetermines it.
    """
    lx = rng.uniform(2.8, 4.6)
    ly = rng.uniform(0.9, 2.4)
    lz = rng.uniform(0.7, 2.6)
    taper = rng.uniform(0.55, 1.0)   # top face shrink, x and y
    base = box(lx, ly, lz)
    v = base.vertices.copy()
    top = v[:, 2] > 0.0
    v[top, 0] *= taper
    v[top, 1] *= taper
    return make_mesh(v, base.faces)
