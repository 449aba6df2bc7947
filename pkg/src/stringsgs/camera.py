"""Pinhole camera model, quaternion poses and perspective projection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

Z_EPS = 1e-8

# COLMAP camera model ids
SIMPLE_PINHOLE = 0
PINHOLE = 1
MODEL_NAMES = {SIMPLE_PINHOLE: "SIMPLE_PINHOLE", PINHOLE: "PINHOLE"}
MODEL_IDS = {v: k for k, v in MODEL_NAMES.items()}
MODEL_ARITY = {SIMPLE_PINHOLE: 3, PINHOLE: 4}


@dataclass(frozen=True)
class CameraIntrinsics:
    camera_id: int
    model: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.camera_id}: non-positive image size")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"camera {self.camera_id}: non-positive focal length")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"camera {self.camera_id}: principal point outside image")

    @property
    def params(self) -> tuple[float, ...]:
        if self.model == SIMPLE_PINHOLE:
            return (self.fx, self.cx, self.cy)
        return (self.fx, self.fy, self.cx, self.cy)

    @classmethod
    def from_params(cls, camera_id: int, model: int, width: int, height: int, params) -> "CameraIntrinsics":
        p = [float(x) for x in params]
        if model == SIMPLE_PINHOLE:
            f, cx, cy = p
            return cls(camera_id, model, width, height, f, f, cx, cy)
        if model == PINHOLE:
            fx, fy, cx, cy = p
            return cls(camera_id, model, width, height, fx, fy, cx, cy)
        raise ValueError(f"unsupported camera model id {model}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def normalize_quaternion(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    return q / n


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion; batched over leading axes."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform of one registered image."""

    image_id: int
    qvec: np.ndarray = field(repr=False)
    tvec: np.ndarray = field(repr=False)
    camera_id: int = 1
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "qvec", normalize_quaternion(self.qvec))
        object.__setattr__(self, "tvec", np.asarray(self.tvec, dtype=np.float64).reshape(3))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rotmat(self.qvec)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.tvec

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.camera_id == other.camera_id
            and self.name == other.name
            and np.array_equal(self.qvec, other.qvec)
            and np.array_equal(self.tvec, other.tvec)
        )

    __hash__ = None


class PixelCoord(NamedTuple):
    u: float
    v: float
    depth: float


def world_to_camera(pose: CameraPose, p) -> np.ndarray:
    """Map world points (..., 3) into the camera frame."""
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.rotation.T + pose.tvec


def camera_to_world(pose: CameraPose, pc) -> np.ndarray:
    pc = np.asarray(pc, dtype=np.float64)
    return (pc - pose.tvec) @ pose.rotation


def project(intr: CameraIntrinsics, pose: CameraPose, p) -> Optional[PixelCoord]:
    """Project one world point; ``None`` when behind the camera or off-image."""
    x, y, z = world_to_camera(pose, p)
    if z <= Z_EPS:
        return None
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return None
    return PixelCoord(float(u), float(v), float(z))


def project_points(intr: CameraIntrinsics, pose: CameraPose, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection.

    Returns (uv, depth, valid) where ``valid`` applies the same rule as
    :func:`project`; ``depth`` is reported for every point.
    """
    pc = world_to_camera(pose, pts)
    z = pc[..., 2]
    safe = np.where(z > Z_EPS, z, 1.0)
    u = intr.fx * pc[..., 0] / safe + intr.cx
    v = intr.fy * pc[..., 1] / safe + intr.cy
    valid = (z > Z_EPS) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return np.stack([u, v], axis=-1), z, valid


def unproject(intr: CameraIntrinsics, pose: CameraPose, u: float, v: float, depth: float) -> np.ndarray:
    pc = np.array([(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth])
    return camera_to_world(pose, pc)


def look_at_pose(image_id: int, eye, target, up=(0.0, -1.0, 0.0), camera_id: int = 1, name: str = "") -> CameraPose:
    """Pose of a camera at ``eye`` looking at ``target`` (OpenCV axes: x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])  # world -> camera rows
    return CameraPose(image_id, rotmat_to_quat(R), -R @ eye, camera_id, name)
