"""Synthetic depth camera over a triangle mesh."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numba
import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from .geometry import CameraModel, ViewPose


class ParseError(ValueError):
    pass


class EmptyMesh(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray   # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64

    @property
    def surface_area(self) -> float:
        return float(triangle_areas(self.vertices, self.triangles).sum())

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        used = self.vertices[np.unique(self.triangles)]
        return used.min(axis=0), used.max(axis=0)

    def transformed(self, R=None, t=None, scale: float = 1.0) -> "TriangleMesh":
        V = self.vertices * scale
        if R is not None:
            V = V @ np.asarray(R, dtype=float).T
        if t is not None:
            V = V + np.asarray(t, dtype=float)
        return TriangleMesh(V, self.triangles)


@dataclass
class DepthImage:
    depth: np.ndarray  # (height, width) meters along the optical axis, NaN = no hit
    pose: ViewPose

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def triangle_areas(V: np.ndarray, F: np.ndarray) -> np.ndarray:
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _finish(V, faces, path) -> TriangleMesh:
    V = np.asarray(V, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if not np.all(np.isfinite(V)):
        raise ParseError(f"{path}: non-finite vertex coordinates")
    if len(F) and (F.min() < 0 or F.max() >= len(V)):
        raise ParseError(f"{path}: face index out of range")
    if len(F):
        areas = triangle_areas(V, F)
        F = F[areas > 0.0]
    if len(F) == 0:
        raise EmptyMesh(f"{path}: no valid triangles")
    return TriangleMesh(V, F)


def _fan(polys):
    out = []
    for p in polys:
        if len(p) < 3:
            raise ParseError("face with fewer than 3 vertices")
        out.extend((p[0], p[i], p[i + 1]) for i in range(1, len(p) - 1))
    return out


def _load_ply(path: str) -> TriangleMesh:
    try:
        ply = PlyData.read(path)
        v = ply["vertex"]
        V = np.column_stack([v["x"], v["y"], v["z"]])
        face = ply["face"]
    except (PlyParseError, KeyError, ValueError, OSError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    name = "vertex_indices" if "vertex_indices" in face.data.dtype.names else "vertex_index"
    lists = face[name]
    lengths = np.fromiter((len(f) for f in lists), dtype=np.int64, count=len(lists))
    if len(lists) and np.all(lengths == 3):
        F = np.stack(lists).astype(np.int64)
    else:
        F = _fan(lists)
    return _finish(V, F, path)


def _load_obj(path: str) -> TriangleMesh:
    V, polys = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    V.append([float(x) for x in parts[1:4]])
                    if len(V[-1]) != 3:
                        raise ValueError("vertex needs 3 coordinates")
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(V) + i)
                    polys.append(idx)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return _finish(V, _fan(polys) if polys else [], path)


def load_mesh(path) -> TriangleMesh:
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return _load_ply(path)
    if ext == ".obj":
        return _load_obj(path)
    raise ParseError(f"{path}: unsupported mesh format {ext!r}")


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.triangles:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def save_mesh_ply(mesh: TriangleMesh, path, text: bool = False) -> None:
    verts = np.empty(len(mesh.vertices), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8")])
    verts["x"], verts["y"], verts["z"] = mesh.vertices.T
    faces = np.empty(len(mesh.triangles), dtype=[("vertex_indices", "i4", (3,))])
    faces["vertex_indices"] = mesh.triangles
    PlyData([PlyElement.describe(verts, "vertex"), PlyElement.describe(faces, "face")],
            text=text, byte_order="<").write(os.fspath(path))


def write_cloud_ply(points: np.ndarray, path) -> None:
    """Binary little-endian PLY, float32 xyz."""
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    arr = np.empty(len(pts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    arr["x"], arr["y"], arr["z"] = pts.T
    PlyData([PlyElement.describe(arr, "vertex")], text=False, byte_order="<").write(os.fspath(path))


def read_cloud_ply(path) -> np.ndarray:
    v = PlyData.read(os.fspath(path))["vertex"]
    return np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)


@numba.njit(cache=True)
def _raster_tri(p0, p1, p2, fx, fy, cx, cy, zbuf):
    # p* are camera-frame vertices with z > 0
    H, W = zbuf.shape
    u0 = fx * p0[0] / p0[2] + cx
    v0 = fy * p0[1] / p0[2] + cy
    u1 = fx * p1[0] / p1[2] + cx
    v1 = fy * p1[1] / p1[2] + cy
    u2 = fx * p2[0] / p2[2] + cx
    v2 = fy * p2[1] / p2[2] + cy
    area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
    if area == 0.0 or not math.isfinite(area):
        return
    umin = max(0, int(math.ceil(min(u0, u1, u2))))
    umax = min(W - 1, int(math.floor(max(u0, u1, u2))))
    vmin = max(0, int(math.ceil(min(v0, v1, v2))))
    vmax = min(H - 1, int(math.floor(max(v0, v1, v2))))
    if umin > umax or vmin > vmax:
        return
    inv = 1.0 / area
    iz0 = 1.0 / p0[2]
    iz1 = 1.0 / p1[2]
    iz2 = 1.0 / p2[2]
    for v in range(vmin, vmax + 1):
        for u in range(umin, umax + 1):
            w0 = ((u1 - u) * (v2 - v) - (u2 - u) * (v1 - v)) * inv
            w1 = ((u2 - u) * (v0 - v) - (u0 - u) * (v2 - v)) * inv
            w2 = ((u0 - u) * (v1 - v) - (u1 - u) * (v0 - v)) * inv
            # inclusive edges: pixels on a shared edge are hit by both triangles
            if w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0:
                z = 1.0 / (w0 * iz0 + w1 * iz1 + w2 * iz2)
                if z < zbuf[v, u]:
                    zbuf[v, u] = z


@numba.njit(cache=True)
def _render(Vc, F, fx, fy, cx, cy, zbuf, znear):
    poly = np.empty((4, 3))
    for i in range(F.shape[0]):
        a = Vc[F[i, 0]]
        b = Vc[F[i, 1]]
        c = Vc[F[i, 2]]
        na = a[2] > znear
        nb = b[2] > znear
        nc = c[2] > znear
        if na and nb and nc:
            _raster_tri(a, b, c, fx, fy, cx, cy, zbuf)
            continue
        if not (na or nb or nc):
            continue
        # clip against the plane z = znear
        n = 0
        tri = (a, b, c)
        for k in range(3):
            p = tri[k]
            q = tri[(k + 1) % 3]
            pin = p[2] > znear
            qin = q[2] > znear
            if pin:
                poly[n] = p
                n += 1
            if pin != qin:
                s = (znear - p[2]) / (q[2] - p[2])
                poly[n] = p + s * (q - p)
                poly[n, 2] = znear
                n += 1
        for k in range(1, n - 1):
            _raster_tri(poly[0], poly[k], poly[k + 1], fx, fy, cx, cy, zbuf)


def render_depth(mesh: TriangleMesh, pose: ViewPose, cam: CameraModel,
                 noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> DepthImage:
    """Per-pixel nearest surface depth (z along the optical axis); NaN where nothing is hit.

    Triangles are rasterized in index order with a strict depth test, which gives
    the nearest ray hit per pixel center and resolves exact ties to the lowest index.
    """
    Vc = np.ascontiguousarray((mesh.vertices - pose.translation) @ pose.rotation)
    zbuf = np.full((cam.height, cam.width), np.inf)
    znear = min(1e-6, 0.5 * cam.depth_min)
    _render(Vc, np.ascontiguousarray(mesh.triangles), float(cam.fx), float(cam.fy),
            float(cam.cx), float(cam.cy), zbuf, znear)
    if noise_sigma > 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        finite = np.isfinite(zbuf)
        zbuf[finite] += rng.normal(0.0, noise_sigma, size=int(finite.sum()))
    zbuf[(zbuf < cam.depth_min) | (zbuf > cam.depth_max)] = np.nan
    return DepthImage(zbuf, pose)


def pixel_rays(cam: CameraModel) -> np.ndarray:
    """Camera-frame ray directions (x/z, y/z, 1) for every pixel, shape (h, w, 3)."""
    u = np.arange(cam.width, dtype=float)
    v = np.arange(cam.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    return np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)


def depth_to_camera_points(img: DepthImage, cam: CameraModel) -> np.ndarray:
    if img.depth.shape != (cam.height, cam.width):
        raise ValueError("depth image does not match the camera")
    rows, cols = np.nonzero(np.isfinite(img.depth))
    z = img.depth[rows, cols]
    return np.column_stack([(cols - cam.cx) / cam.fx * z, (rows - cam.cy) / cam.fy * z, z])


def depth_to_world_cloud(img: DepthImage, cam: CameraModel) -> np.ndarray:
    pc = depth_to_camera_points(img, cam)
    return pc @ img.pose.rotation.T + img.pose.translation


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform surface samples and the unit normals of their triangles."""
    rng = np.random.default_rng(seed)
    V, F = mesh.vertices, mesh.triangles
    areas = triangle_areas(V, F)
    tri = rng.choice(len(F), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = V[F[tri, 0]], V[F[tri, 1]], V[F[tri, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    nrm = np.cross(b - a, c - a)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return pts, nrm


def signed_volume(mesh: TriangleMesh) -> float:
    V, F = mesh.vertices, mesh.triangles
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)
