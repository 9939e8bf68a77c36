"""Shared domain types: Gaussians, camera poses, intrinsics, frames, pyramids.

Conventions used throughout the engine:
  * quaternions are (w, x, y, z), unit norm;
  * CameraPose is camera-to-world: x_world = R @ x_cam + t;
  * depth value 0 marks an invalid sensor reading;
  * images are float arrays in [0, 1], shape (H, W, 3) or (H, W).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

QUAT_NORM_TOL = 1e-6


# ---------------------------------------------------------------------------
# Quaternion / rotation helpers
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b for (w, x, y, z) quaternions (broadcasts)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion; supports (..., 4) batches."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    m = np.stack([
        1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
        2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
        2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
    ], axis=-1)
    return m.reshape(q.shape[:-1] + (3, 3))


def mat_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = 0.5 / np.sqrt(t + 1.0)
        q = np.array([0.25 / s,
                      (m[2, 1] - m[1, 2]) * s,
                      (m[0, 2] - m[2, 0]) * s,
                      (m[1, 0] - m[0, 1]) * s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Quaternion for a rotation vector (axis * angle)."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        # second-order series keeps the map smooth through zero
        half = 0.5 * v
        return quat_normalize(np.concatenate([[1.0 - 0.125 * angle * angle], half]))
    axis = v / angle
    return np.concatenate([[np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis])


def quats_from_rotvecs(v: np.ndarray) -> np.ndarray:
    """Batched rotation-vector to quaternion map, shape (N, 3) -> (N, 4)."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1)
    half = 0.5 * angle
    small = angle < 1e-12
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5, np.sin(half) / safe)
    q = np.concatenate([np.cos(half)[..., None], k[..., None] * v], axis=-1)
    return quat_normalize(q)


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(v: np.ndarray) -> np.ndarray:
    """Rodrigues' rotation matrix for a rotation vector."""
    return quat_to_mat(quat_from_rotvec(v))


# ---------------------------------------------------------------------------
# Camera pose (SE(3) as quaternion + translation, camera-to-world)
# ---------------------------------------------------------------------------

@dataclass
class CameraPose:
    """Rigid camera pose: rotation quaternion (w,x,y,z) + translation, camera-to-world."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(4)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "CameraPose":
        return cls(mat_to_quat(m[:3, :3]), np.asarray(m[:3, 3], dtype=np.float64))

    def rotation(self) -> np.ndarray:
        return quat_to_mat(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation()
        m[:3, 3] = self.t
        return m

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Map camera-frame points to world frame."""
        return pts @ self.rotation().T + self.t

    def inv_transform(self, pts: np.ndarray) -> np.ndarray:
        """Map world-frame points to camera frame."""
        return (pts - self.t) @ self.rotation()

    def normalized(self) -> "CameraPose":
        return CameraPose(quat_normalize(self.q), self.t.copy())

    def is_valid(self, tol: float = QUAT_NORM_TOL) -> bool:
        return abs(np.linalg.norm(self.q) - 1.0) <= tol and np.all(np.isfinite(self.t))


def compose_pose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Group composition a*b (apply b, then a)."""
    return CameraPose(quat_normalize(quat_mul(a.q, b.q)),
                      quat_to_mat(a.q) @ b.t + a.t)


def inverse_pose(p: CameraPose) -> CameraPose:
    qc = quat_conj(p.q)
    return CameraPose(qc, -(quat_to_mat(qc) @ p.t))


def apply_pose_tangent(pose: CameraPose, delta: np.ndarray) -> CameraPose:
    """Retract a 6-vector tangent (body-frame translation, body-frame rotation).

    delta[:3] translates along the camera axes; delta[3:] right-multiplies the
    rotation. This is the tangent convention shared by the rasterizer backward
    pass and the pose optimizers.
    """
    delta = np.asarray(delta, dtype=np.float64)
    r = pose.rotation()
    q = quat_normalize(quat_mul(pose.q, quat_from_rotvec(delta[3:])))
    return CameraPose(q, pose.t + r @ delta[:3])


def apply_rotation_tangent(q: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Right-multiplicative SO(3) tangent retraction for a Gaussian rotation."""
    return quat_normalize(quat_mul(q, quat_from_rotvec(delta)))


# ---------------------------------------------------------------------------
# Intrinsics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def scaled(self, s: float) -> "Intrinsics":
        return Intrinsics(self.fx * s, self.fy * s, self.cx * s, self.cy * s,
                          int(round(self.width * s)), int(round(self.height * s)))

    def backproject(self, xs: np.ndarray, ys: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Camera-frame points for pixel coordinates at the given z-depth."""
        x = (np.asarray(xs, dtype=np.float64) - self.cx) / self.fx * depth
        y = (np.asarray(ys, dtype=np.float64) - self.cy) / self.fy * depth
        return np.stack([x, y, np.broadcast_to(depth, np.shape(x))], axis=-1)


# ---------------------------------------------------------------------------
# Frames and pyramids
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    """One RGB-D observation: color in [0,1], z-depth in meters (0 = invalid)."""

    rgb: np.ndarray
    depth: np.ndarray
    timestamp: float = 0.0
    gt_pose: Optional[CameraPose] = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError("rgb must be (H, W, 3)")
        if self.depth.shape != self.rgb.shape[:2]:
            raise ValueError("depth dims must match rgb")

    @property
    def valid_depth(self) -> np.ndarray:
        return self.depth > 0


DEFAULT_PYRAMID_SCALES = (1.0, 0.5, 0.25)


@dataclass
class ImagePyramid:
    """Ordered (scale, image) pairs; scales default to 1.0 / 0.5 / 0.25."""

    levels: list

    def __post_init__(self):
        base = None
        for scale, img in self.levels:
            if base is None and scale == 1.0:
                base = img.shape[:2]
        if base is not None:
            for scale, img in self.levels:
                want = (int(round(base[0] * scale)), int(round(base[1] * scale)))
                if img.shape[:2] != want:
                    raise ValueError(f"pyramid level {scale} has dims {img.shape[:2]}, expected {want}")

    def scales(self) -> tuple:
        return tuple(s for s, _ in self.levels)

    def level(self, scale: float) -> np.ndarray:
        for s, img in self.levels:
            if s == scale:
                return img
        raise KeyError(f"no pyramid level at scale {scale}")


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class Gaussian3D:
    """A single anisotropic 3D Gaussian primitive."""

    mean: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)

    @property
    def alpha(self) -> float:
        return float(_sigmoid(self.opacity_logit))


def covariance(g: Gaussian3D) -> np.ndarray:
    """World-frame covariance R diag(exp(2*log_scale)) R^T; always SPD."""
    r = quat_to_mat(quat_normalize(g.rotation))
    d = np.exp(2.0 * g.log_scale)
    return (r * d) @ r.T


class GaussianMap:
    """The scene as flat arrays of Gaussian parameters (struct-of-arrays).

    Mutation is reserved for optimizer steps that own the map exclusively;
    everything else treats the arrays as read-only.
    """

    __slots__ = ("means", "log_scales", "rotations", "opacity_logits", "colors")

    def __init__(self, means=None, log_scales=None, rotations=None,
                 opacity_logits=None, colors=None):
        n = 0 if means is None else len(means)
        self.means = _arr(means, (n, 3))
        self.log_scales = _arr(log_scales, (n, 3))
        self.rotations = _arr(rotations, (n, 4))
        self.opacity_logits = _arr(opacity_logits, (n,))
        self.colors = _arr(colors, (n, 3))
        if n and rotations is None:
            self.rotations[:, 0] = 1.0

    def __len__(self) -> int:
        return self.means.shape[0]

    @classmethod
    def empty(cls) -> "GaussianMap":
        return cls()

    @classmethod
    def from_gaussians(cls, gaussians) -> "GaussianMap":
        if not gaussians:
            return cls()
        return cls(
            means=np.stack([g.mean for g in gaussians]),
            log_scales=np.stack([g.log_scale for g in gaussians]),
            rotations=np.stack([quat_normalize(g.rotation) for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians], dtype=np.float64),
            colors=np.stack([g.color for g in gaussians]),
        )

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.means[i], self.log_scales[i], self.rotations[i],
                          float(self.opacity_logits[i]), self.colors[i])

    def alphas(self) -> np.ndarray:
        return _sigmoid(self.opacity_logits)

    def covariances(self) -> np.ndarray:
        """World-frame covariances, shape (N, 3, 3)."""
        r = quat_to_mat(self.rotations)
        d = np.exp(2.0 * self.log_scales)
        return np.einsum("nij,nj,nkj->nik", r, d, r)

    def copy(self) -> "GaussianMap":
        return GaussianMap(self.means.copy(), self.log_scales.copy(),
                           self.rotations.copy(), self.opacity_logits.copy(),
                           self.colors.copy())

    def extend(self, other: "GaussianMap") -> "GaussianMap":
        return GaussianMap(
            np.concatenate([self.means, other.means]),
            np.concatenate([self.log_scales, other.log_scales]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.colors, other.colors]),
        )

    def select(self, keep: np.ndarray) -> "GaussianMap":
        return GaussianMap(self.means[keep], self.log_scales[keep],
                           self.rotations[keep], self.opacity_logits[keep],
                           self.colors[keep])

    def renormalize_rotations(self) -> None:
        self.rotations = quat_normalize(self.rotations)


def _arr(a, shape):
    if a is None:
        return np.zeros(shape, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64).reshape(shape)
    return a.copy()
