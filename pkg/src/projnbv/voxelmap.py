"""Five-state voxel map over a growing, lattice-aligned bounding box."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .geometry import CameraModel, ViewPose
from .sensor import DepthImage

NONE, EMPTY, OCCUPIED, UNKNOWN, FRONTIER = 0, 1, 2, 3, 4
STATE_NAMES = {NONE: "NONE", EMPTY: "EMPTY", OCCUPIED: "OCCUPIED", UNKNOWN: "UNKNOWN",
               FRONTIER: "FRONTIER"}

# scan-local evidence, higher wins inside one scan
_EV_UNKNOWN, _EV_EMPTY, _EV_OCCUPIED = 1, 2, 3

_NEIGHBORHOOD = np.ones((3, 3, 3), dtype=bool)


class PoseOutsideWorkspace(ValueError):
    """Raised when the camera sits inside the mapped bounding box."""


@dataclass
class VoxelGrid:
    """Dense grid; cell ``(i, j, k)`` spans ``(lo + (i, j, k)) * resolution`` plus one cell.

    ``lo`` is an integer lattice offset, so the box corners are always exact
    multiples of ``resolution`` and re-indexing after growth is a pure shift.
    """

    resolution: float
    lo: np.ndarray
    states: np.ndarray

    @classmethod
    def empty(cls, resolution: float, lo, shape) -> "VoxelGrid":
        return cls(float(resolution), np.asarray(lo, dtype=np.int64),
                   np.zeros(tuple(int(s) for s in shape), dtype=np.uint8))

    @classmethod
    def covering(cls, points: np.ndarray, resolution: float) -> "VoxelGrid":
        idx = np.floor(np.asarray(points) / resolution).astype(np.int64)
        lo, hi = idx.min(axis=0), idx.max(axis=0)
        return cls.empty(resolution, lo, hi - lo + 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.states.shape

    @property
    def hi(self) -> np.ndarray:
        return self.lo + np.array(self.shape)

    @property
    def origin(self) -> np.ndarray:
        return self.lo * self.resolution

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo * self.resolution, self.hi * self.resolution

    @property
    def center(self) -> np.ndarray:
        a, b = self.bbox
        return 0.5 * (a + b)

    @property
    def half_diagonal(self) -> float:
        a, b = self.bbox
        return 0.5 * float(np.linalg.norm(b - a))

    def cell_of(self, p) -> np.ndarray:
        return np.floor(np.asarray(p) / self.resolution).astype(np.int64) - self.lo

    def cell_centers(self, idx) -> np.ndarray:
        return (np.asarray(idx, dtype=float) + self.lo + 0.5) * self.resolution

    def cells(self, state: int) -> np.ndarray:
        return np.argwhere(self.states == state)

    def count(self, state: int) -> int:
        return int(np.count_nonzero(self.states == state))

    def contains_point(self, p) -> bool:
        a, b = self.bbox
        p = np.asarray(p)
        return bool(np.all(p > a) and np.all(p < b))

    def resized(self, lo, hi) -> "VoxelGrid":
        """Grid over lattice box [lo, hi) containing the current one; new cells are NONE."""
        lo = np.minimum(np.asarray(lo, dtype=np.int64), self.lo)
        hi = np.maximum(np.asarray(hi, dtype=np.int64), self.hi)
        if np.array_equal(lo, self.lo) and np.array_equal(hi, self.hi):
            return self
        out = np.zeros(tuple(hi - lo), dtype=np.uint8)
        o = self.lo - lo
        n = np.array(self.shape)
        out[o[0]:o[0] + n[0], o[1]:o[1] + n[1], o[2]:o[2] + n[2]] = self.states
        return VoxelGrid(self.resolution, lo, out)

    def dump(self) -> str:
        a, b = self.bbox
        lines = ["res %r bbox %r %r %r %r %r %r" % (self.resolution, *a.tolist(), *b.tolist())]
        for i, j, k in np.argwhere(self.states != NONE):
            lines.append(f"{i} {j} {k} {STATE_NAMES[int(self.states[i, j, k])]}")
        return "\n".join(lines) + "\n"


@numba.njit(cache=True)
def _ray_box(o, d, bmin, bmax):
    t0 = -np.inf
    t1 = np.inf
    for a in range(3):
        if d[a] != 0.0:
            ta = (bmin[a] - o[a]) / d[a]
            tb = (bmax[a] - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
        elif o[a] < bmin[a] or o[a] > bmax[a]:
            return 1.0, 0.0
    return t0, t1


@numba.njit(cache=True)
def _traverse(o, d, bmin, res, shape, max_range, out_idx, out_t):
    """Amanatides-Woo traversal. Writes cells and their entry distances, returns the count.

    Cells are indexed relative to ``bmin``; ``out_t`` has one extra slot holding
    the exit distance of the last cell.
    """
    bmax = np.empty(3)
    for a in range(3):
        bmax[a] = bmin[a] + shape[a] * res
    t0, t1 = _ray_box(o, d, bmin, bmax)
    t0 = max(t0, 0.0)
    t1 = min(t1, max_range)
    if not t0 < t1:
        return 0
    cell = np.empty(3, dtype=np.int64)
    step = np.empty(3, dtype=np.int64)
    tmax = np.empty(3)
    tdelta = np.empty(3)
    for a in range(3):
        p = o[a] + t0 * d[a]
        c = int(math.floor((p - bmin[a]) / res))
        c = min(max(c, 0), shape[a] - 1)
        cell[a] = c
        if d[a] > 0.0:
            step[a] = 1
            tmax[a] = (bmin[a] + (c + 1) * res - o[a]) / d[a]
            tdelta[a] = res / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            tmax[a] = (bmin[a] + c * res - o[a]) / d[a]
            tdelta[a] = -res / d[a]
        else:
            step[a] = 0
            tmax[a] = np.inf
            tdelta[a] = np.inf
    n = 0
    t = t0
    cap = out_idx.shape[0]
    while n < cap:
        out_idx[n, 0] = cell[0]
        out_idx[n, 1] = cell[1]
        out_idx[n, 2] = cell[2]
        out_t[n] = t
        n += 1
        a = 0
        if tmax[1] < tmax[a]:
            a = 1
        if tmax[2] < tmax[a]:
            a = 2
        t = tmax[a]
        if t >= t1:
            break
        cell[a] += step[a]
        if cell[a] < 0 or cell[a] >= shape[a]:
            break
        tmax[a] += tdelta[a]
    out_t[n] = min(t, t1)
    return n


def traverse_ray(origin, direction, grid: VoxelGrid, max_range: float = np.inf) -> list[tuple[int, int, int]]:
    """Cells pierced by a ray, in order of increasing distance."""
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    shape = np.array(grid.shape, dtype=np.int64)
    cap = int(shape.sum()) + 3
    idx = np.empty((cap, 3), dtype=np.int64)
    ts = np.empty(cap + 1)
    n = _traverse(np.asarray(origin, dtype=float), d, grid.origin.astype(float),
                  grid.resolution, shape, float(max_range), idx, ts)
    return [tuple(int(x) for x in row) for row in idx[:n]]


@numba.njit(cache=True)
def _integrate(origin, dirs, hit_t, max_t, hit_cells, bmin, res, shape, evidence):
    """Accumulate scan evidence. ``hit_t`` < 0 marks a no-hit ray."""
    cap = shape[0] + shape[1] + shape[2] + 3
    idx = np.empty((cap, 3), dtype=np.int64)
    ts = np.empty(cap + 1)
    for r in range(dirs.shape[0]):
        n = _traverse(origin, dirs[r], bmin, res, shape, max_t[r], idx, ts)
        th = hit_t[r]
        hx = hit_cells[r, 0]
        hy = hit_cells[r, 1]
        hz = hit_cells[r, 2]
        for m in range(n):
            i = idx[m, 0]
            j = idx[m, 1]
            k = idx[m, 2]
            if th < 0.0:
                ev = _EV_EMPTY
            elif i == hx and j == hy and k == hz:
                ev = _EV_OCCUPIED
            elif ts[m + 1] <= th:
                ev = _EV_EMPTY
            elif ts[m] >= th:
                ev = _EV_UNKNOWN
            else:
                # straddles the hit but is not the hit cell (rounding at a face)
                continue
            if ev > evidence[i, j, k]:
                evidence[i, j, k] = ev
        if th >= 0.0:
            if 0 <= hx < shape[0] and 0 <= hy < shape[1] and 0 <= hz < shape[2]:
                evidence[hx, hy, hz] = _EV_OCCUPIED


def scan_rays(img: DepthImage, cam: CameraModel, resolution: float):
    """World-frame ray directions, hit distances along them (-1 = no hit) and hit points.

    One ray per pixel when the pixel pitch is no coarser than a voxel seen at
    ``depth_max``; otherwise rays are supersampled to that angular density and
    take the depth of the pixel they fall in.
    """
    pitch = 1.0 / min(cam.fx, cam.fy)
    voxel_angle = resolution / cam.depth_max
    s = 1 if pitch <= voxel_angle else int(math.ceil(pitch / voxel_angle))
    offs = (np.arange(s) + 0.5) / s - 0.5
    u = (np.arange(cam.width)[:, None] + offs[None, :]).ravel()
    v = (np.arange(cam.height)[:, None] + offs[None, :]).ravel()
    uu, vv = np.meshgrid(u, v)
    depth = img.depth[np.clip(np.rint(vv).astype(int), 0, cam.height - 1),
                      np.clip(np.rint(uu).astype(int), 0, cam.width - 1)]
    ray_c = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    depth = depth.ravel()
    norm = np.linalg.norm(ray_c, axis=1)
    R = img.pose.rotation
    dirs = (ray_c / norm[:, None]) @ R.T
    finite = np.isfinite(depth)
    hit_t = np.where(finite, depth * norm, -1.0)
    max_t = np.where(finite, np.inf, cam.depth_max * norm)
    hits = img.pose.translation + (ray_c[finite] * depth[finite, None]) @ R.T
    return dirs, hit_t, max_t, hits, finite


def integrate_scan(grid: VoxelGrid, img: DepthImage, cam: CameraModel) -> dict:
    """Update ``grid`` in place from one depth image; returns counts of new states."""
    origin = img.pose.translation
    if grid.contains_point(origin):
        raise PoseOutsideWorkspace("camera origin lies inside the mapped bounding box")
    dirs, hit_t, max_t, hits, finite = scan_rays(img, cam, grid.resolution)
    hit_cells = np.full((len(dirs), 3), -1, dtype=np.int64)
    hit_cells[finite] = grid.cell_of(hits)
    evidence = np.zeros(grid.shape, dtype=np.uint8)
    _integrate(origin.astype(float), np.ascontiguousarray(dirs), hit_t, max_t, hit_cells,
               grid.origin.astype(float), grid.resolution, np.array(grid.shape, dtype=np.int64), evidence)
    return apply_evidence(grid, evidence)


def apply_evidence(grid: VoxelGrid, evidence: np.ndarray) -> dict:
    st = grid.states
    open_ = (st == NONE) | (st == UNKNOWN) | (st == FRONTIER)
    new_occ = open_ & (evidence == _EV_OCCUPIED)
    new_emp = open_ & (evidence == _EV_EMPTY)
    new_unk = (st == NONE) & (evidence == _EV_UNKNOWN)
    st[new_occ] = OCCUPIED
    st[new_emp] = EMPTY
    st[new_unk] = UNKNOWN
    return {"empty": int(new_emp.sum()), "occupied": int(new_occ.sum()), "unknown": int(new_unk.sum())}


def extract_frontiers(grid: VoxelGrid) -> np.ndarray:
    """Relabel unknown cells touching both empty and occupied cells (26-neighborhood)."""
    st = grid.states
    near_empty = ndimage.binary_dilation(st == EMPTY, structure=_NEIGHBORHOOD)
    near_occ = ndimage.binary_dilation(st == OCCUPIED, structure=_NEIGHBORHOOD)
    candidate = (st == UNKNOWN) | (st == FRONTIER)
    frontier = candidate & near_empty & near_occ
    st[candidate] = UNKNOWN
    st[frontier] = FRONTIER
    return np.argwhere(frontier)


def grow_to_cover(grid: VoxelGrid, points: np.ndarray) -> VoxelGrid:
    """Enlarge the box so every point's voxel is inside it."""
    if len(points) == 0:
        return grid
    idx = np.floor(np.asarray(points) / grid.resolution).astype(np.int64)
    return grid.resized(idx.min(axis=0), idx.max(axis=0) + 1)


def _occupied_box(grid: VoxelGrid):
    occ = grid.cells(OCCUPIED)
    return occ.min(axis=0) + grid.lo, occ.max(axis=0) + grid.lo + 1


def update_bounding_box(grid: VoxelGrid, gamma: float, current_view: ViewPose,
                        first_frame: bool) -> VoxelGrid:
    """Grow the mapped box; never shrinks it.

    First frame: start from the occupied box and sweep it away from the camera
    along the viewing direction until its diagonal has doubled. Later frames:
    cover all occupied cells and a ``gamma`` margin around every frontier cell.
    """
    if grid.count(OCCUPIED) == 0:
        raise ValueError("grid has no occupied cells")
    res = grid.resolution
    olo, ohi = _occupied_box(grid)
    if first_frame:
        ext = (ohi - olo) * res
        d = np.abs(current_view.optical_axis)
        diag = float(np.linalg.norm(ext))
        # |ext + s d| = 2 |ext|
        b = float(ext @ d)
        s = -b + math.sqrt(b * b + 3.0 * diag * diag)
        lo_w = olo * res + np.minimum(current_view.optical_axis * s, 0.0)
        hi_w = ohi * res + np.maximum(current_view.optical_axis * s, 0.0)
        lo = np.floor(lo_w / res + 1e-9).astype(np.int64)
        hi = np.ceil(hi_w / res - 1e-9).astype(np.int64)
        return grid.resized(lo, hi)
    lo, hi = olo, ohi
    front = grid.cells(FRONTIER)
    if len(front):
        m = int(math.ceil(gamma / res - 1e-9))
        lo = np.minimum(lo, front.min(axis=0) + grid.lo - m)
        hi = np.maximum(hi, front.max(axis=0) + grid.lo + 1 + m)
    return grid.resized(lo, hi)
