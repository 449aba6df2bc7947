"""Lifting 2D text masks to a text / non-text partition of the sparse cloud."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .camera import CameraIntrinsics, CameraPose, project_points
from .colmap_io import SparsePoint, write_ply_points
from .gaussians import N_SH, Region, SplatScene, inverse_sigmoid, rgb_to_sh0

DEFAULT_DILATION = 0.05
INIT_OPACITY = 0.1


@dataclass(frozen=True)
class PointPartition:
    text_ids: frozenset
    nontext_ids: frozenset

    def __post_init__(self):
        if self.text_ids & self.nontext_ids:
            raise ValueError("text and non-text sets overlap")

    def is_text(self, point_id: int) -> bool:
        return point_id in self.text_ids


def disk(diameter: int) -> np.ndarray:
    """Boolean disk whose cell centres lie within diameter/2 of the middle cell."""
    c = (diameter - 1) / 2.0
    yy, xx = np.mgrid[:diameter, :diameter]
    return (xx - c) ** 2 + (yy - c) ** 2 <= (diameter / 2.0) ** 2


def kernel_diameter(width: int, diameter_frac: float) -> int:
    return max(1, int(round(diameter_frac * width)))


def dilate_mask(mask: np.ndarray, diameter_frac: float = DEFAULT_DILATION) -> np.ndarray:
    """Dilate a binary mask with a circular kernel sized relative to the image width."""
    if not 0.0 <= diameter_frac <= 1.0:
        raise ValueError("diameter_frac must lie in [0, 1]")
    mask = np.asarray(mask).astype(bool)
    d = kernel_diameter(mask.shape[1], diameter_frac)
    if d == 1 or not mask.any():
        return mask.astype(np.uint8)
    return ndimage.binary_dilation(mask, structure=disk(d)).astype(np.uint8)


def text_counts(
    points: list[SparsePoint],
    intrinsics: Mapping[int, CameraIntrinsics],
    poses: Iterable[CameraPose],
    masks: Mapping[int, np.ndarray],
) -> np.ndarray:
    """Per point, the number of observing images whose mask covers its projection."""
    poses = {p.image_id: p for p in poses}
    if not points:
        return np.zeros(0, np.int64)
    xyz = np.array([p.position for p in points])
    counts = np.zeros(len(points), np.int64)
    by_image: dict[int, list[int]] = {}
    for k, pt in enumerate(points):
        for iid in pt.track:
            by_image.setdefault(iid, []).append(k)
    for iid in sorted(by_image):
        if iid not in masks:
            raise KeyError(f"no mask for image {iid}")
        pose = poses[iid]
        intr = intrinsics[pose.camera_id]
        idx = np.asarray(by_image[iid])
        uv, _, valid = project_points(intr, pose, xyz[idx])
        m = masks[iid]
        col = np.floor(uv[:, 0]).astype(np.int64)
        row = np.floor(uv[:, 1]).astype(np.int64)
        hit = np.zeros(len(idx), bool)
        hit[valid] = m[row[valid], col[valid]] > 0
        counts[idx[hit]] += 1
    return counts


def classify_points(
    points: list[SparsePoint],
    intrinsics: Mapping[int, CameraIntrinsics],
    poses: Iterable[CameraPose],
    masks: Mapping[int, np.ndarray],
    tau: int = 1,
) -> PointPartition:
    """A point is text when at least ``tau`` of its observing views see it inside the mask.

    ``masks`` are expected to be dilated already.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    counts = text_counts(points, intrinsics, poses, masks)
    text = frozenset(p.point_id for p, c in zip(points, counts) if c >= tau)
    return PointPartition(text, frozenset(p.point_id for p in points) - text)


def nn_scale(xyz: np.ndarray, scene_extent: float) -> np.ndarray:
    """Mean distance to the three nearest neighbours, clamped to [1e-7, extent]."""
    n = len(xyz)
    if n < 2:
        return np.full(n, 0.01 * scene_extent)
    k = min(3, n - 1)
    d, _ = cKDTree(xyz).query(xyz, k=k + 1)
    return np.clip(d[:, 1:].reshape(n, k).mean(axis=1), 1e-7, scene_extent)


def init_gaussians(points: list[SparsePoint], partition: PointPartition, scene_extent: float = 1.0) -> SplatScene:
    if not points:
        return SplatScene.empty(scene_extent)
    xyz = np.array([p.position for p in points], dtype=np.float64)
    rgb = np.array([p.color for p in points], dtype=np.float64) / 255.0
    n = len(points)
    sh = np.zeros((n, N_SH, 3))
    sh[:, 0, :] = rgb_to_sh0(rgb)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    region = np.array([Region.TEXT if p.point_id in partition.text_ids else Region.NON_TEXT for p in points], np.uint8)
    return SplatScene(
        xyz,
        np.repeat(np.log(nn_scale(xyz, scene_extent))[:, None], 3, axis=1),
        quats,
        np.full(n, inverse_sigmoid(INIT_OPACITY)),
        sh,
        region,
        np.array([p.point_id for p in points], np.int64),
        scene_extent,
    )


def export_partition(points: list[SparsePoint], partition: PointPartition, text_path, nontext_path) -> None:
    for ids, path in ((partition.text_ids, text_path), (partition.nontext_ids, nontext_path)):
        sel = [p for p in points if p.point_id in ids]
        write_ply_points(path, [p.position for p in sel] or np.zeros((0, 3)), [p.color for p in sel] or np.zeros((0, 3)))
