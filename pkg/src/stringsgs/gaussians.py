"""Gaussian primitives stored as a structure of arrays."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import IntEnum
from typing import Iterable

import numpy as np

SH_C0 = 0.28209479177387814
MAX_SH_DEGREE = 3
N_SH = (MAX_SH_DEGREE + 1) ** 2


class Region(IntEnum):
    NON_TEXT = 0
    TEXT = 1


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y):
    return np.log(y / (1.0 - y))


def rgb_to_sh0(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def sh0_to_rgb(sh0):
    return np.asarray(sh0) * SH_C0 + 0.5


@dataclass
class Gaussian:
    """A single splat, detached from its scene."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh: np.ndarray
    region: Region = Region.NON_TEXT
    id: int = 0

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    def covariance(self) -> np.ndarray:
        from .camera import quat_to_rotmat

        R = quat_to_rotmat(self.rotation / np.linalg.norm(self.rotation))
        S = np.diag(self.scale)
        M = R @ S
        return M @ M.T


@dataclass
class SplatScene:
    """Optimizable Gaussians plus per-Gaussian region tags and stable ids.

    ``sh`` has shape (N, 16, 3): degree-0 coefficient first, then the
    degree 1..3 bands in the usual real-SH ordering.
    """

    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    region: np.ndarray
    ids: np.ndarray
    scene_extent: float = 1.0
    next_id: int = field(default=-1)

    PARAMS = ("means", "log_scales", "quats", "opacity_logits", "sh")

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, N_SH, 3)
        self.region = np.asarray(self.region, dtype=np.uint8).reshape(n)
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(n)
        if len(np.unique(self.ids)) != n:
            raise ValueError("Gaussian ids must be unique")
        if self.next_id < 0:
            self.next_id = int(self.ids.max()) + 1 if n else 0

    @classmethod
    def empty(cls, scene_extent: float = 1.0) -> "SplatScene":
        return cls(
            np.zeros((0, 3)),
            np.zeros((0, 3)),
            np.zeros((0, 4)),
            np.zeros(0),
            np.zeros((0, N_SH, 3)),
            np.zeros(0, np.uint8),
            np.zeros(0, np.int64),
            scene_extent,
        )

    @classmethod
    def from_gaussians(cls, gs: Iterable[Gaussian], scene_extent: float = 1.0) -> "SplatScene":
        gs = list(gs)
        if not gs:
            return cls.empty(scene_extent)
        sh = np.zeros((len(gs), N_SH, 3))
        for i, g in enumerate(gs):
            c = np.asarray(g.sh).reshape(-1, 3)
            sh[i, : len(c)] = c
        return cls(
            np.array([g.position for g in gs]),
            np.array([g.log_scale for g in gs]),
            np.array([g.rotation for g in gs]),
            np.array([g.opacity_logit for g in gs]),
            sh,
            np.array([int(g.region) for g in gs]),
            np.array([g.id for g in gs]),
            scene_extent,
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            self.means[i].copy(),
            self.log_scales[i].copy(),
            self.quats[i].copy(),
            float(self.opacity_logits[i]),
            self.sh[i].copy(),
            Region(int(self.region[i])),
            int(self.ids[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def copy(self) -> "SplatScene":
        return SplatScene(
            self.means.copy(),
            self.log_scales.copy(),
            self.quats.copy(),
            self.opacity_logits.copy(),
            self.sh.copy(),
            self.region.copy(),
            self.ids.copy(),
            self.scene_extent,
            self.next_id,
        )

    def subset(self, idx) -> "SplatScene":
        idx = np.asarray(idx)
        return SplatScene(
            self.means[idx],
            self.log_scales[idx],
            self.quats[idx],
            self.opacity_logits[idx],
            self.sh[idx],
            self.region[idx],
            self.ids[idx],
            self.scene_extent,
            self.next_id,
        )

    def derive(self, src, means, log_scales) -> "SplatScene":
        """New rows copied from rows ``src`` (repeats allowed) with fresh ids and the given geometry.

        Allocates ids from this scene.
        """
        src = np.asarray(src, dtype=np.int64)
        ids = self.allocate_ids(len(src))
        return SplatScene(
            means, log_scales, self.quats[src], self.opacity_logits[src], self.sh[src], self.region[src],
            ids, self.scene_extent, self.next_id,
        )

    def select(self, region: Region) -> "SplatScene":
        return self.subset(np.flatnonzero(self.region == int(region)))

    @property
    def text_mask(self) -> np.ndarray:
        return self.region == int(Region.TEXT)

    def allocate_ids(self, n: int) -> np.ndarray:
        out = np.arange(self.next_id, self.next_id + n, dtype=np.int64)
        self.next_id += n
        return out

    @staticmethod
    def concat(scenes: list["SplatScene"], scene_extent: float | None = None) -> "SplatScene":
        scenes = [s for s in scenes]
        ext = scene_extent if scene_extent is not None else scenes[0].scene_extent
        out = SplatScene(
            np.concatenate([s.means for s in scenes]),
            np.concatenate([s.log_scales for s in scenes]),
            np.concatenate([s.quats for s in scenes]),
            np.concatenate([s.opacity_logits for s in scenes]),
            np.concatenate([s.sh for s in scenes]),
            np.concatenate([s.region for s in scenes]),
            np.concatenate([s.ids for s in scenes]),
            ext,
        )
        out.next_id = max([out.next_id] + [s.next_id for s in scenes])
        return out

    def equals(self, other: "SplatScene") -> bool:
        """Field-for-field, bit-exact equality."""
        if len(self) != len(other):
            return False
        names = [f.name for f in fields(self) if f.name not in ("scene_extent", "next_id")]
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)
