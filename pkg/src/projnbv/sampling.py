"""Hemispherical candidate views and longitudinal partitions."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import ViewPose

TWO_PI = 2.0 * math.pi


class DegenerateAzimuth(UserWarning):
    pass


@dataclass(frozen=True)
class SamplingParam:
    alpha: int = 10
    N: int = 400
    d_c: float = 0.35
    elevation_range: tuple[float, float] = (math.radians(10.0), math.radians(80.0))
    beta: int = 4

    def __post_init__(self):
        lo, hi = self.elevation_range
        if self.alpha < 1 or self.N < self.alpha:
            raise ValueError("need alpha >= 1 and N >= alpha")
        if not (0.0 <= lo < hi <= math.pi / 2 + 1e-12):
            raise ValueError("elevation range must satisfy 0 <= lo < hi <= pi/2")
        if self.beta < 2:
            raise ValueError("beta must be at least 2")


@dataclass
class PartitionState:
    beta: int
    scanned: set = field(default_factory=set)

    def mark(self, index: int) -> None:
        if not 0 <= index < self.beta:
            raise ValueError("partition index out of range")
        self.scanned.add(int(index))

    @property
    def complete(self) -> bool:
        return len(self.scanned) == self.beta


def parallel_elevations(alpha: int, elevation_range) -> np.ndarray:
    lo, hi = elevation_range
    if alpha == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, alpha)


def largest_remainder(weights, total: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    quota = total * w / w.sum()
    counts = np.floor(quota).astype(int)
    short = total - counts.sum()
    if short:
        # stable sort keeps the lower index first among equal remainders
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def hemisphere_views(center, half_diagonal: float, param: SamplingParam) -> list[ViewPose]:
    """Views on a sphere of radius ``d_c + half_diagonal`` all looking at ``center``.

    Parallels get view counts proportional to their circumference; views on a
    parallel are evenly spread in azimuth starting at 0.
    """
    center = np.asarray(center, dtype=float)
    radius = param.d_c + half_diagonal
    elev = parallel_elevations(param.alpha, param.elevation_range)
    counts = largest_remainder(np.cos(elev), param.N)
    poses = []
    for theta, n in zip(elev, counts):
        for j in range(n):
            phi = TWO_PI * j / n
            offset = radius * np.array([math.cos(theta) * math.cos(phi),
                                        math.cos(theta) * math.sin(phi),
                                        math.sin(theta)])
            poses.append(ViewPose.look_at(center + offset, center))
    return poses


def sample_candidates(bbox, param: SamplingParam) -> list[ViewPose]:
    """Candidate views around an axis-aligned box ``(lo, hi)``."""
    lo, hi = (np.asarray(b, dtype=float) for b in bbox)
    if np.any(hi <= lo):
        raise ValueError("degenerate bounding box")
    return hemisphere_views(0.5 * (lo + hi), 0.5 * float(np.linalg.norm(hi - lo)), param)


def azimuth_of(pose: ViewPose, center) -> float | None:
    d = pose.position - np.asarray(center, dtype=float)
    if math.hypot(d[0], d[1]) <= 1e-12 * max(1.0, float(np.linalg.norm(d))):
        return None
    return math.atan2(d[1], d[0]) % TWO_PI


def partition_of(pose: ViewPose, center, beta: int) -> int:
    """Longitude sector of the camera position about the vertical axis through ``center``.

    Sector boundaries belong to the upper sector; a relative slack of 1e-9 keeps
    views generated exactly on a boundary from falling back by rounding.
    """
    az = azimuth_of(pose, center)
    if az is None:
        warnings.warn("camera directly above the center; using partition 0", DegenerateAzimuth)
        return 0
    idx = int(math.floor(az / (TWO_PI / beta) + 1e-9))
    return idx % beta


def admissible_partitions(state: PartitionState) -> set[int]:
    if state.complete:
        return set(range(state.beta))
    return {(p + s) % state.beta for p in state.scanned for s in (-1, 1)} - state.scanned


def admissible_candidates(candidates: list[ViewPose], state: PartitionState, center) -> list[int]:
    """Indices of candidates that may be chosen next.

    Before every partition is scanned, only unscanned partitions adjacent to a
    scanned one qualify; if those hold no candidate, any unscanned partition
    does, and failing that, any candidate.
    """
    if not state.scanned:
        raise ValueError("at least one partition must be scanned")
    parts = [partition_of(p, center, state.beta) for p in candidates]
    if state.complete:
        return list(range(len(candidates)))
    allowed = admissible_partitions(state)
    out = [i for i, k in enumerate(parts) if k in allowed]
    if not out:
        out = [i for i, k in enumerate(parts) if k not in state.scanned]
    if not out:
        out = list(range(len(candidates)))
    return out
