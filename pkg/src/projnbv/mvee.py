"""Minimum-volume enclosing ellipsoids of voxel clusters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .geometry import Ellipsoid


@dataclass(frozen=True)
class MveeParam:
    epsilon: float = 1e-6
    min_semi_axis: float = 0.005

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1e-3):
            raise ValueError("epsilon must lie in (0, 1e-3]")
        if not self.min_semi_axis > 0.0:
            raise ValueError("min_semi_axis must be positive")


@numba.njit(cache=True)
def _khachiyan_weights(Q, tol, max_iter):
    dl, n = Q.shape
    u = np.full(n, 1.0 / n)
    g = np.empty(n)
    for _ in range(max_iter):
        V = (Q * u) @ Q.T
        Vi = np.linalg.inv(V)
        W = Vi @ Q
        j = 0
        k = -1
        for i in range(n):
            s = 0.0
            for a in range(dl):
                s += Q[a, i] * W[a, i]
            g[i] = s
            if s > g[j]:
                j = i
            if u[i] > 0.0 and (k < 0 or s < g[k]):
                k = i
        gmax = g[j]
        if gmax <= dl * (1.0 + tol):
            break
        gmin = g[k]
        if gmax - dl >= dl - gmin:
            step = (gmax - dl) / (dl * (gmax - 1.0))
            u *= 1.0 - step
            u[j] += step
        else:
            # away step from the least useful active point
            step = min((dl - gmin) / (dl * (gmin - 1.0)), u[k] / (1.0 - u[k]))
            u *= 1.0 + step
            u[k] = max(u[k] - step, 0.0)
        u /= u.sum()
    return u


def khachiyan(X: np.ndarray, tol: float, max_iter: int = 200000):
    """Center and shape of a (1 + tol)-optimal enclosing ellipsoid of a
    full-dimensional point set (Todd-Yildirim iteration with away steps).

    The ellipsoid ``{x : (x-c)^T M (x-c) <= 1}`` is returned before any
    containment rescale.
    """
    n, d = X.shape
    Q = np.ascontiguousarray(np.vstack([X.T, np.ones(n)]))
    u = _khachiyan_weights(Q, float(tol), int(max_iter))
    c = X.T @ u
    S = (X.T * u) @ X - np.outer(c, c)
    return c, np.linalg.inv(S) / d


def _affine_frame(points: np.ndarray, rel_tol: float = 1e-9):
    """Centroid, orthonormal basis of the affine hull and its dimension."""
    mean = points.mean(axis=0)
    D = points - mean
    if len(points) == 1:
        return mean, np.eye(3), 0
    _, s, Vt = np.linalg.svd(D, full_matrices=True)
    scale = max(float(np.abs(D).max()), 1e-300)
    rank = int(np.sum(s > rel_tol * scale * math.sqrt(len(points))))
    return mean, Vt.T, rank


def enclosing_axes(points, epsilon: float = 1e-6):
    """Center, axis matrix (columns) and semi-axes of the MVEE; collapsed axes are 0."""
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(X) == 0:
        raise ValueError("no points")
    mean, basis, rank = _affine_frame(X)
    if rank == 0:
        return mean, np.eye(3), np.zeros(3)
    Y = (X - mean) @ basis[:, :rank]
    if rank == 1:
        a, b = Y[:, 0].min(), Y[:, 0].max()
        c = np.array([0.5 * (a + b)])
        semi = np.array([0.5 * (b - a)])
        R = np.ones((1, 1))
    else:
        # epsilon bounds the volume ratio; the lifted tolerance enters as a power
        tol = (1.0 + epsilon) ** (2.0 / (rank + 1)) - 1.0
        c, M = khachiyan(Y, tol)
        D = Y - c
        M = M / np.einsum("ij,jk,ik->i", D, M, D).max()
        w, R = np.linalg.eigh(M)
        semi = w ** -0.5
    center = mean + basis[:, :rank] @ c
    axes = np.zeros((3, 3))
    axes[:, :rank] = basis[:, :rank] @ R
    axes[:, rank:] = basis[:, rank:]
    full = np.zeros(3)
    full[:rank] = semi
    return center, axes, full


def min_enclosing_ellipsoid(points, param: MveeParam = MveeParam()) -> Ellipsoid:
    center, axes, semi = enclosing_axes(points, param.epsilon)
    e = Ellipsoid.from_axes(center, axes, np.maximum(semi, param.min_semi_axis))
    # boundary points of a badly conditioned shape can land a few ulps outside
    d = np.asarray(points, dtype=float).reshape(-1, 3) - e.center
    worst = float(np.einsum("ij,jk,ik->i", d, e.shape, d).max())
    return Ellipsoid(e.center, e.shape / worst) if worst > 1.0 else e


def fit_cluster_ellipsoids(clusters, voxel_centers, resolution: float,
                           param: MveeParam | None = None) -> list[Ellipsoid]:
    """One ellipsoid per non-empty cluster, grown so it covers whole voxels.

    ``clusters`` is a :class:`~projnbv.gmm.Clustering` (or a list of index
    arrays) indexing into ``voxel_centers``.
    """
    param = param or MveeParam(min_semi_axis=resolution / 2)
    members = getattr(clusters, "clusters", clusters)
    P = np.asarray(voxel_centers, dtype=float).reshape(-1, 3)
    inflate = math.sqrt(3.0) * resolution / 2.0
    out = []
    for idx in members:
        if len(idx) == 0:
            continue
        center, axes, semi = enclosing_axes(P[np.asarray(idx)], param.epsilon)
        out.append(Ellipsoid.from_axes(center, axes, np.maximum(semi + inflate, param.min_semi_axis)))
    return out
