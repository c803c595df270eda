"""Candidate view scoring.

The projection scorer works only on ellipsoids; the ray-cast baseline works
only on the voxel grid. Neither reads the other's input.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import (ELLIPSE, CameraModel, Ellipsoid, ViewPose, camera_matrix,
                       conic_pixel_area, dual_quadric, project_dual)
from .voxelmap import FRONTIER, OCCUPIED, UNKNOWN, VoxelGrid, _traverse

Z_NEAR = 0.01


class NoCandidates(ValueError):
    pass


@dataclass
class EllipsoidScene:
    occupied: list = field(default_factory=list)
    frontier: list = field(default_factory=list)

    def __post_init__(self):
        self._duals = None

    def __len__(self):
        return len(self.occupied) + len(self.frontier)

    def all(self) -> list[Ellipsoid]:
        return list(self.occupied) + list(self.frontier)

    def is_frontier(self, i: int) -> bool:
        return i >= len(self.occupied)

    @property
    def centers(self) -> np.ndarray:
        return np.array([e.center for e in self.all()]).reshape(-1, 3)

    @property
    def duals(self) -> list[np.ndarray]:
        if self._duals is None:
            self._duals = [dual_quadric(e) for e in self.all()]
        return self._duals


@dataclass
class EllipsoidTerm:
    id: int
    frontier: bool
    rank: int | None
    weight: float
    area: int
    weighted: float


@dataclass
class ViewScore:
    F: float
    per_ellipsoid: list
    eval_time: float = 0.0


def rank_weights(scene: EllipsoidScene, pose: ViewPose, z_near: float = Z_NEAR):
    """Depth rank and weight 0.5**rank of every ellipsoid center (joint ordering).

    Ellipsoids are indexed occupied first, then frontier. Centers at or behind
    ``z_near`` get rank ``None`` and weight 0.
    """
    C = scene.centers
    z = (C - pose.translation) @ pose.rotation[:, 2]
    ranks = [None] * len(C)
    weights = np.zeros(len(C))
    front = np.flatnonzero(z > z_near)
    order = front[np.lexsort((front, z[front]))]
    for r, i in enumerate(order):
        ranks[i] = r
        weights[i] = 0.5 ** r
    return ranks, weights


def score_view(scene: EllipsoidScene, pose: ViewPose, cam: CameraModel) -> ViewScore:
    """Frontier minus occupied weighted projected pixel areas."""
    t0 = time.perf_counter()
    ranks, weights = rank_weights(scene, pose)
    P = camera_matrix(pose, cam)
    n_occ = len(scene.occupied)
    terms = []
    F = 0.0
    for i, Qs in enumerate(scene.duals):
        area = 0
        if weights[i] > 0.0:
            conic = project_dual(Qs, P)
            if conic.kind == ELLIPSE:
                area = conic_pixel_area(conic, cam)
        weighted = area * weights[i]
        is_front = i >= n_occ
        F += weighted if is_front else -weighted
        terms.append(EllipsoidTerm(i, is_front, ranks[i], float(weights[i]), area, weighted))
    return ViewScore(F, terms, time.perf_counter() - t0)


def select_best(candidates: list[ViewPose], scene: EllipsoidScene, cam: CameraModel):
    """Highest-scoring candidate; ties go to the lowest index."""
    if not candidates:
        raise NoCandidates("no candidate views")
    best_i, best = 0, None
    for i, pose in enumerate(candidates):
        s = score_view(scene, pose, cam)
        if best is None or s.F > best.F:
            best_i, best = i, s
    return candidates[best_i], best


@numba.njit(cache=True)
def _raycast_gain(origin, dirs, bmin, res, states, seen, stamp):
    shape = np.array(states.shape, dtype=np.int64)
    cap = shape[0] + shape[1] + shape[2] + 3
    idx = np.empty((cap, 3), dtype=np.int64)
    ts = np.empty(cap + 1)
    gain = 0
    for r in range(dirs.shape[0]):
        n = _traverse(origin, dirs[r], bmin, res, shape, np.inf, idx, ts)
        for m in range(n):
            i = idx[m, 0]
            j = idx[m, 1]
            k = idx[m, 2]
            s = states[i, j, k]
            if s == OCCUPIED:
                break
            if (s == UNKNOWN or s == FRONTIER) and seen[i, j, k] != stamp:
                seen[i, j, k] = stamp
                gain += 1
    return gain


class RaycastScorer:
    """Per-pixel voxel ray casting; counts distinct unknown/frontier cells seen."""

    def __init__(self, cam: CameraModel):
        self.cam = cam
        u, v = np.meshgrid(np.arange(cam.width, dtype=float), np.arange(cam.height, dtype=float))
        rays = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
        self._rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
        self._seen = None
        self._stamp = 0

    def __call__(self, grid: VoxelGrid, pose: ViewPose) -> tuple[int, float]:
        t0 = time.perf_counter()
        if self._seen is None or self._seen.shape != grid.shape or self._stamp >= 2**31 - 2:
            self._seen = np.zeros(grid.shape, dtype=np.int32)
            self._stamp = 0
        self._stamp += 1
        dirs = np.ascontiguousarray(self._rays @ pose.rotation.T)
        gain = _raycast_gain(pose.translation.astype(float), dirs, grid.origin.astype(float),
                             grid.resolution, grid.states, self._seen, self._stamp)
        return int(gain), time.perf_counter() - t0


def baseline_raycast_score(grid: VoxelGrid, pose: ViewPose, cam: CameraModel) -> tuple[int, float]:
    return RaycastScorer(cam)(grid, pose)
