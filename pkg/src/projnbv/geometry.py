"""Rigid transforms, quadric/conic algebra and ellipsoid projection.

Conventions
-----------
* A :class:`ViewPose` stores the camera-to-world rotation ``R`` and the camera
  origin ``t`` in world coordinates, so ``p_w = R @ p_c + t``.
* Camera frame: +z along the optical axis, +x to the image right, +y down.
* Pixel centers sit at integer ``(u, v)`` coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

ELLIPSE = "ellipse"
DEGENERATE = "degenerate"


class SingularQuadric(ValueError):
    pass


class DegenerateConic(ValueError):
    pass


@dataclass(frozen=True)
class ViewPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.allclose(R @ R.T, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)

    def matrix(self) -> np.ndarray:
        """4x4 camera-to-world homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0)) -> "ViewPose":
        position = np.asarray(position, dtype=float)
        z = np.asarray(target, dtype=float) - position
        z = z / np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, np.array([0.0, 1.0, 0.0]))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.column_stack([x, y, z]), position)


@dataclass(frozen=True)
class CameraModel:
    fx: float = 525.0
    fy: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    d_c: float = 0.35
    depth_min: float = 0.05
    depth_max: float = 2.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError("need 0 < depth_min < depth_max")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(3)
        A = np.array(self.shape, dtype=float).reshape(3, 3)
        A = 0.5 * (A + A.T)
        c.flags.writeable = False
        A.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", A)

    @classmethod
    def from_axes(cls, center, axes, semi_axes) -> "Ellipsoid":
        """Build from an orthonormal axis matrix (columns) and semi-axis lengths."""
        V = np.asarray(axes, dtype=float)
        s = np.asarray(semi_axes, dtype=float)
        return cls(center, V @ np.diag(1.0 / s**2) @ V.T)

    @classmethod
    def sphere(cls, center, radius: float) -> "Ellipsoid":
        return cls(center, np.eye(3) / radius**2)

    def semi_axes(self) -> np.ndarray:
        """Semi-axis lengths, ascending."""
        w = np.linalg.eigvalsh(self.shape)
        return np.sort(w ** -0.5)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        w, V = np.linalg.eigh(self.shape)
        return w ** -0.5, V

    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi / math.sqrt(np.linalg.det(self.shape))

    def contains(self, points, slack: float = 0.0) -> np.ndarray:
        d = np.atleast_2d(points) - self.center
        return np.einsum("ij,jk,ik->i", d, self.shape, d) <= 1.0 + slack


@dataclass(frozen=True)
class Quadric:
    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float).reshape(4, 4)
        Q = 0.5 * (Q + Q.T)
        Q.flags.writeable = False
        object.__setattr__(self, "Q", Q)


@dataclass(frozen=True)
class Conic:
    Phi: np.ndarray
    kind: str = field(default=ELLIPSE)


def world_to_camera(pose: ViewPose, p_w) -> np.ndarray:
    """C = R^-1 (p_w - t). Accepts a single point or an (n, 3) array."""
    p = np.asarray(p_w, dtype=float)
    return (p - pose.translation) @ pose.rotation


def camera_to_world(pose: ViewPose, p_c) -> np.ndarray:
    return np.asarray(p_c, dtype=float) @ pose.rotation.T + pose.translation


def camera_matrix(pose: ViewPose, cam: CameraModel) -> np.ndarray:
    Rinv = pose.rotation.T
    return cam.K @ np.hstack([Rinv, (-Rinv @ pose.translation)[:, None]])


def project_points(P: np.ndarray, p_w) -> np.ndarray:
    X = np.atleast_2d(np.asarray(p_w, dtype=float))
    x = X @ P[:, :3].T + P[:, 3]
    return x[:, :2] / x[:, 2:3]


def ellipsoid_to_quadric(e: Ellipsoid) -> Quadric:
    A, c = e.shape, e.center
    Ac = A @ c
    Q = np.empty((4, 4))
    Q[:3, :3] = A
    Q[:3, 3] = -Ac
    Q[3, :3] = -Ac
    Q[3, 3] = c @ Ac - 1.0
    return Quadric(Q)


def dual_quadric(e: Ellipsoid) -> np.ndarray:
    """Closed-form Q^-1 for the normalized quadric of ``e``."""
    Ainv = np.linalg.inv(e.shape)
    c = e.center
    Qs = np.empty((4, 4))
    Qs[:3, :3] = Ainv - np.outer(c, c)
    Qs[:3, 3] = -c
    Qs[3, :3] = -c
    Qs[3, 3] = -1.0
    return Qs


def _classify(Phi: np.ndarray, in_front: bool) -> str:
    if not in_front:
        return DEGENERATE
    B = Phi[:2, :2]
    if B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0] <= 0.0:
        return DEGENERATE
    # orient so the quadratic part is positive definite; a real ellipse then has det < 0
    if B[0, 0] < 0:
        Phi = -Phi
    return ELLIPSE if np.linalg.det(Phi) < 0 else DEGENERATE


def project_dual(Qs: np.ndarray, P: np.ndarray) -> Conic:
    """Project a dual quadric (sign-normalized so Qs[3,3] < 0) to a point conic."""
    principal = P[2]
    # plane-vs-ellipsoid support test: negative means the principal plane misses it
    in_front = principal @ Qs @ principal < 0.0 and principal @ Qs[:, 3] < 0.0
    Phis = P @ Qs @ P.T
    Phis = 0.5 * (Phis + Phis.T)
    try:
        Phi = np.linalg.inv(Phis)
    except np.linalg.LinAlgError:
        return Conic(Phis, DEGENERATE)
    Phi = 0.5 * (Phi + Phi.T)
    kind = _classify(Phi, bool(in_front))
    if kind == ELLIPSE and Phi[0, 0] < 0:
        Phi = -Phi
    return Conic(Phi, kind)


def project_quadric(q: Quadric, P: np.ndarray) -> Conic:
    Q = q.Q
    s = np.linalg.svd(Q, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise SingularQuadric("quadric is not invertible")
    Qs = np.linalg.inv(Q)
    if Qs[3, 3] > 0:
        Qs = -Qs
    return project_dual(Qs, P)


@numba.njit(cache=True)
def _conic_value(P00, P01, P11, P02, P12, P22, u, v):
    return P00 * u * u + 2.0 * P01 * u * v + P11 * v * v + 2.0 * P02 * u + 2.0 * P12 * v + P22


def conic_value(Phi: np.ndarray, u, v):
    """Evaluate (u, v, 1) Phi (u, v, 1)^T with the same operation order as the counter."""
    return (Phi[0, 0] * u * u + 2.0 * Phi[0, 1] * u * v + Phi[1, 1] * v * v
            + 2.0 * Phi[0, 2] * u + 2.0 * Phi[1, 2] * v + Phi[2, 2])


@numba.njit(cache=True)
def _count_inside(P00, P01, P11, P02, P12, P22, width, height):
    # assumes P00 > 0 and a real ellipse
    det2 = P00 * P11 - P01 * P01
    u0 = (P01 * P12 - P11 * P02) / det2
    v0 = (P01 * P02 - P00 * P12) / det2
    f0 = _conic_value(P00, P01, P11, P02, P12, P22, u0, v0)
    if f0 >= 0.0:
        return 0
    hv = math.sqrt(-f0 * P00 / det2)
    v_lo = int(math.ceil(min(max(v0 - hv, -2.0), height + 1.0))) - 1
    v_hi = int(math.floor(min(max(v0 + hv, -2.0), height + 1.0))) + 1
    v_lo = max(v_lo, 0)
    v_hi = min(v_hi, height - 1)
    total = 0
    for v in range(v_lo, v_hi + 1):
        # roots of P00 u^2 + 2(P01 v + P02) u + (P11 v^2 + 2 P12 v + P22) = 0
        b = P01 * v + P02
        c = P11 * v * v + 2.0 * P12 * v + P22
        disc = b * b - P00 * c
        if disc < 0.0:
            continue
        r = math.sqrt(disc)
        lo_f = min(max((-b - r) / P00, -2.0), width + 1.0)
        hi_f = min(max((-b + r) / P00, -2.0), width + 1.0)
        lo = min(max(int(math.ceil(lo_f)), 0), width)
        hi = min(max(int(math.floor(hi_f)), -1), width - 1)
        # snap the span so boundary pixels agree with direct evaluation
        while lo > 0 and _conic_value(P00, P01, P11, P02, P12, P22, lo - 1.0, v) < 0.0:
            lo -= 1
        while lo <= hi and not (_conic_value(P00, P01, P11, P02, P12, P22, lo, v) < 0.0):
            lo += 1
        while hi < width - 1 and _conic_value(P00, P01, P11, P02, P12, P22, hi + 1.0, v) < 0.0:
            hi += 1
        while hi >= lo and not (_conic_value(P00, P01, P11, P02, P12, P22, hi, v) < 0.0):
            hi -= 1
        if hi >= lo:
            total += hi - lo + 1
    return total


def conic_pixel_area(c: Conic, cam: CameraModel) -> int:
    """Number of pixel centers strictly inside the ellipse and inside the image."""
    if c.kind != ELLIPSE:
        raise DegenerateConic("conic is not a real ellipse")
    Phi = c.Phi if c.Phi[0, 0] > 0 else -c.Phi
    return int(_count_inside(Phi[0, 0], Phi[0, 1], Phi[1, 1], Phi[0, 2], Phi[1, 2], Phi[2, 2],
                             int(cam.width), int(cam.height)))


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    K = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K
