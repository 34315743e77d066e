"""Rigid camera poses, pinhole projection, pose errors and pose perturbation.

Poses are camera-from-world: ``X_cam = R @ X_world + t``. Cameras look down
+z with x to the right and y down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


class Pose:
    """Camera-from-world rigid transform.

    Instances are treated as immutable; the arrays are made read-only.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, check: bool = True):
        R = np.array(rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(translation, dtype=np.float64).reshape(3)
        if check:
            if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHO_TOL * 1e3) or np.linalg.det(R) < 0:
                raise ValueError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):
        raise AttributeError("Pose is immutable")

    def __repr__(self) -> str:
        q = self.quaternion_wxyz()
        return f"Pose(q_wxyz={np.round(q, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation)
                    and np.array_equal(self.translation, other.translation))

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, qw, qx, qy, qz, tx, ty, tz) -> "Pose":
        q = np.array([qx, qy, qz, qw], dtype=np.float64)
        if np.linalg.norm(q) == 0:
            raise ValueError("zero quaternion")
        return cls(Rotation.from_quat(q).as_matrix(), [tx, ty, tz], check=False)

    @classmethod
    def from_center(cls, rotation, center) -> "Pose":
        """Build a pose from a camera-from-world rotation and a camera center."""
        R = np.asarray(rotation, dtype=np.float64)
        return cls(R, -R @ np.asarray(center, dtype=np.float64))

    @classmethod
    def look_at(cls, center, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at ``center`` looking at ``target``; image y points away from ``up``."""
        c = np.asarray(center, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - c
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-12:
            raise ValueError("viewing direction parallel to up vector")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls.from_center(np.stack([x, y, z]), c)

    def quaternion_wxyz(self) -> np.ndarray:
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if w < 0 else q

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def apply(self, points) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        X = np.asarray(points, dtype=np.float64)
        return X @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def compose(a: Pose, b: Pose) -> Pose:
    """Pose equivalent to applying ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation, check=False)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation, check=False)


def project(X, pose: Pose, k: Intrinsics) -> Optional[Tuple[np.ndarray, float]]:
    """Project one world point. Returns ``((u, v), depth)`` or ``None`` if behind the camera.

    The pixel may lie outside the image; callers clip.
    """
    Xc = pose.apply(np.asarray(X, dtype=np.float64).reshape(3))
    if Xc[2] <= 0:
        return None
    uv = np.array([k.fx * Xc[0] / Xc[2] + k.cx, k.fy * Xc[1] / Xc[2] + k.cy])
    return uv, float(Xc[2])


def project_points(X, pose: Pose, k: Intrinsics) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection of (N, 3) world points.

    Returns ``(uv, depth, in_front)``; ``uv`` is NaN for points behind the camera.
    """
    Xc = pose.apply(np.asarray(X, dtype=np.float64).reshape(-1, 3))
    z = Xc[:, 2]
    front = z > 0
    zs = np.where(front, z, np.nan)
    uv = np.stack([k.fx * Xc[:, 0] / zs + k.cx, k.fy * Xc[:, 1] / zs + k.cy], axis=1)
    return uv, z, front


def unproject(uv, depth: float, pose: Pose, k: Intrinsics) -> np.ndarray:
    if not depth > 0:
        raise ValueError("depth must be positive")
    u, v = np.asarray(uv, dtype=np.float64).reshape(2)
    Xc = np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])
    return pose.rotation.T @ (Xc - pose.translation)


def pixel_rays(k: Intrinsics) -> np.ndarray:
    """Camera-frame rays with unit z for every pixel center, shape (H, W, 3)."""
    v, u = np.mgrid[0:k.height, 0:k.width].astype(np.float64)
    return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)


def depth_to_camera_points(depth, k: Intrinsics) -> np.ndarray:
    """Lift an (H, W) depth map to camera-frame points (H, W, 3)."""
    return pixel_rays(k) * np.asarray(depth, dtype=np.float64)[..., None]


@dataclass(frozen=True)
class PoseError:
    position_m: float
    rotation_deg: float


def rotation_angle_deg(R) -> float:
    """Angle of rotation ``R`` in degrees, in [0, 180].

    Same angle as ``arccos((trace - 1) / 2)``, computed with ``atan2`` so it
    stays accurate near 0 and 180 degrees.
    """
    R = np.asarray(R, dtype=np.float64)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.degrees(np.arctan2(s, c)))


def pose_error(est: Pose, gt: Pose) -> PoseError:
    """Camera-center distance and relative rotation angle."""
    pos = float(np.linalg.norm(est.center - gt.center))
    return PoseError(pos, rotation_angle_deg(est.rotation @ gt.rotation.T))


def perturb_pose(p: Pose, max_trans_m: float, max_rot_deg: float, rng_seed: int) -> Pose:
    """Randomly shift the camera center and rotate the camera.

    Translation offsets are uniform per world axis; the rotation is a ZYX
    Euler composition with each angle uniform in ``[-max_rot_deg, max_rot_deg]``.
    """
    if max_trans_m < 0 or max_rot_deg < 0:
        raise ValueError("perturbation bounds must be nonnegative")
    if max_trans_m == 0 and max_rot_deg == 0:
        return p
    rng = np.random.default_rng(rng_seed)
    dt = rng.uniform(-max_trans_m, max_trans_m, size=3)
    angles = rng.uniform(-max_rot_deg, max_rot_deg, size=3)
    dR = Rotation.from_euler("ZYX", angles, degrees=True).as_matrix()
    R = dR @ p.rotation
    return Pose.from_center(R, p.center + dt)
