"""Gaussian mixture clustering of voxel centers with BIC model selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

DEFAULT_COV_FLOOR = 0.005 ** 2
_LOG_2PI = math.log(2.0 * math.pi)


class InsufficientPoints(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass
class GmmModel:
    weights: np.ndarray      # (T,)
    means: np.ndarray        # (T, 3)
    covariances: np.ndarray  # (T, 3, 3)
    log_likelihood: float = -np.inf
    history: list = field(default_factory=list)
    n_iter: int = 0
    bic_by_T: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.weights)


@dataclass
class Clustering:
    assignments: np.ndarray
    clusters: list

    @property
    def T(self) -> int:
        return len(self.clusters)


def n_parameters(T: int, dim: int = 3) -> int:
    return (T - 1) + T * dim + T * dim * (dim + 1) // 2


def _floor_cov(S: np.ndarray, floor: float) -> np.ndarray:
    # constrained maximizer of the Gaussian likelihood under eig >= floor
    w, V = np.linalg.eigh(S)
    w = np.maximum(w, floor)
    out = (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _log_gauss(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """(n, T) matrix of per-component log densities."""
    L = np.linalg.cholesky(covs)
    diff = X[None, :, :] - means[:, None, :]                  # (T, n, d)
    # solve L y = diff^T per component
    y = np.linalg.solve(L, np.swapaxes(diff, 1, 2))           # (T, d, n)
    maha = np.einsum("tdn,tdn->tn", y, y)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    d = X.shape[1]
    return (-0.5 * (maha + logdet[:, None] + d * _LOG_2PI)).T


def _joint(X, model: GmmModel) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    return _log_gauss(X, model.means, model.covariances) + logw[None, :]


def log_likelihood(model: GmmModel, points) -> float:
    X = np.asarray(points, dtype=float)
    return float(logsumexp(_joint(X, model), axis=1).sum())


def responsibilities(model: GmmModel, points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    J = _joint(X, model)
    return np.exp(J - logsumexp(J, axis=1, keepdims=True))


def kmeans_pp(X: np.ndarray, T: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, T):
        total = d2.sum()
        if total <= 0.0:
            # remaining points coincide with chosen seeds
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rest[rng.integers(len(rest))])
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _m_step(X, R, cov_floor, prev: GmmModel | None):
    n, d = X.shape
    Nk = R.sum(axis=0)
    T = R.shape[1]
    means = np.empty((T, d))
    covs = np.empty((T, d, d))
    for k in range(T):
        if Nk[k] <= 1e-12 * n:
            # starved component: keep parameters, weight collapses to ~0
            means[k] = prev.means[k] if prev is not None else X.mean(axis=0)
            covs[k] = prev.covariances[k] if prev is not None else cov_floor * np.eye(d)
            continue
        means[k] = R[:, k] @ X / Nk[k]
        D = X - means[k]
        covs[k] = (R[:, k, None] * D).T @ D / Nk[k]
    covs = _floor_cov(covs, cov_floor)
    weights = Nk / n
    return GmmModel(weights / weights.sum(), means, covs)


def fit_gmm(points, T: int, seed: int, cov_floor: float = DEFAULT_COV_FLOOR,
            tol: float = 1e-5, max_iter: int = 100) -> GmmModel:
    """EM fit of a full-covariance mixture, seeded with k-means++."""
    X = np.asarray(points, dtype=float)
    if T < 1 or len(X) < T:
        raise InsufficientPoints(f"need at least {T} points, got {len(X)}")
    rng = np.random.default_rng(seed)
    seeds = kmeans_pp(X, T, rng)
    d2 = ((X[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
    R = np.zeros((len(X), T))
    R[np.arange(len(X)), d2.argmin(axis=1)] = 1.0
    model = _m_step(X, R, cov_floor, None)
    # components seeded on coincident points may start empty
    model.means = np.where(R.sum(axis=0)[:, None] > 0, model.means, seeds)

    history = []
    prev_ll = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        J = _joint(X, model)
        norm = logsumexp(J, axis=1, keepdims=True)
        ll = float(norm.sum())
        history.append(ll)
        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= tol * abs(prev_ll):
            break
        prev_ll = ll
        model = _m_step(X, np.exp(J - norm), cov_floor, model)
    else:
        history.append(log_likelihood(model, X))
    model.log_likelihood = history[-1]
    model.history = history
    model.n_iter = it
    return model


def bic_value(log_lik: float, T: int, n: int, dim: int = 3) -> float:
    return n_parameters(T, dim) * math.log(n) - 2.0 * log_lik


def bic(model: GmmModel, points) -> float:
    X = np.asarray(points, dtype=float)
    return bic_value(log_likelihood(model, X), model.T, len(X), X.shape[1])


def hard_clustering(model: GmmModel, points) -> Clustering:
    X = np.asarray(points, dtype=float)
    raw = _joint(X, model).argmax(axis=1)
    used = np.unique(raw)
    remap = np.full(model.T, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    assign = remap[raw]
    clusters = [np.flatnonzero(assign == k) for k in range(len(used))]
    return Clustering(assign, clusters)


def bic_schedule(T_min: int, T_max: int, step: int = 5) -> list[int]:
    return list(range(T_min, T_max + 1, step)) or [T_min]


def select_cluster_count(points, T_min: int = 5, T_max: int = 50, seed: int = 0,
                         cov_floor: float = DEFAULT_COV_FLOOR, step: int = 5):
    """Fit every scheduled T (capped at the point count) and keep the lowest BIC."""
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(X) == 0:
        raise EmptyInput("no points to cluster")
    candidates = sorted({min(T, len(X)) for T in bic_schedule(T_min, T_max, step)})
    best = None
    scores = {}
    for T in candidates:
        model = fit_gmm(X, T, seed, cov_floor)
        scores[T] = bic_value(model.log_likelihood, T, len(X))
        if best is None or scores[T] < best[0]:
            best = (scores[T], model)
    model = best[1]
    model.bic_by_T = scores
    return model, hard_clustering(model, X)
