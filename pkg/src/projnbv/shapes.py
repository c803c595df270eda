"""Procedural test meshes."""
from __future__ import annotations

import math

import numpy as np

from .sensor import TriangleMesh


def uv_sphere(center=(0.0, 0.0, 0.0), radius: float = 1.0, n_lat: int = 32, n_lon: int = 64,
              pole_axis=(0.0, 0.0, 1.0)) -> TriangleMesh:
    """Outward-facing UV sphere with one vertex exactly at each pole."""
    verts = [(0.0, 0.0, 1.0)]
    for i in range(1, n_lat):
        th = math.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * math.pi * j / n_lon
            verts.append((math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)))
    verts.append((0.0, 0.0, -1.0))
    V = np.array(verts)
    tris = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)
    for j in range(n_lon):
        tris.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
    last = len(V) - 1
    for j in range(n_lon):
        tris.append((ring(n_lat - 1, j), last, ring(n_lat - 1, j + 1)))
    F = np.array(tris, dtype=np.int64)
    axis = np.asarray(pole_axis, dtype=float)
    axis /= np.linalg.norm(axis)
    if not np.allclose(axis, [0, 0, 1]):
        from .geometry import ViewPose
        R = ViewPose.look_at(np.zeros(3), axis).rotation   # maps +z to axis
        V = V @ R.T
    return TriangleMesh(V * radius + np.asarray(center, dtype=float), F)


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    V = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    F = np.array([
        (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),   # x faces
        (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),   # y faces
        (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),   # z faces
    ], dtype=np.int64)
    return TriangleMesh(V, F)


def torus(center, major: float, minor: float, axis=(0.0, 1.0, 0.0), n_major: int = 48,
          n_minor: int = 24) -> TriangleMesh:
    axis = np.asarray(axis, dtype=float)
    axis /= np.linalg.norm(axis)
    e1 = np.cross(axis, [0.0, 0.0, 1.0] if abs(axis[2]) < 0.9 else [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    verts = []
    for i in range(n_major):
        a = 2 * math.pi * i / n_major
        radial = math.cos(a) * e1 + math.sin(a) * e2
        for j in range(n_minor):
            b = 2 * math.pi * j / n_minor
            verts.append((major + minor * math.cos(b)) * radial + minor * math.sin(b) * axis)
    V = np.array(verts) + np.asarray(center, dtype=float)
    idx = lambda i, j: (i % n_major) * n_minor + (j % n_minor)
    tris = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(V, np.array(tris, dtype=np.int64))


def merge(*meshes: TriangleMesh) -> TriangleMesh:
    V, F, off = [], [], 0
    for m in meshes:
        V.append(m.vertices)
        F.append(m.triangles + off)
        off += len(m.vertices)
    return TriangleMesh(np.vstack(V), np.vstack(F))


def sphere_with_handle(radius: float = 0.06) -> TriangleMesh:
    """A ball with a mug-style ring handle on its +x side, resting on z = 0."""
    ball = uv_sphere((0.0, 0.0, radius), radius, 32, 64)
    handle = torus((radius * 1.05, 0.0, radius), major=radius * 0.55, minor=radius * 0.15,
                   axis=(0.0, 1.0, 0.0))
    return merge(ball, handle)
