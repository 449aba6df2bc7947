"""One-time visibility-driven densification of text Gaussians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import quat_to_rotmat
from .gaussians import Gaussian, SplatScene

SPLIT_SHRINK = 1.6


@dataclass(frozen=True)
class DensifyPlan:
    counts: np.ndarray  # N_i per text Gaussian, in scene order
    n_max: int

    def __post_init__(self):
        c = np.asarray(self.counts)
        if len(c) and (c.min() < 1 or c.max() > self.n_max):
            raise ValueError("duplicate counts must lie in [1, n_max]")

    def __len__(self):
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))


def densify_counts(visibility_counts, n_max: int) -> DensifyPlan:
    """Duplicate counts inversely related to visibility, scaled to [1, n_max].

    Computed in exact integer arithmetic so that half-way cases round to
    even deterministically: with the 1/c terms expanded, the normalized
    value is ``(c_max - c) * c_min / (c * (c_max - c_min))``.
    """
    c = np.asarray(visibility_counts, dtype=np.int64)
    if c.size == 0:
        raise ValueError("empty visibility list")
    if c.min() < 1:
        raise ValueError("visibility counts must be >= 1")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    cmin, cmax = int(c.min()), int(c.max())
    if cmin == cmax:
        return DensifyPlan(np.ones(len(c), np.int64), n_max)
    den = c * (cmax - cmin)
    num = (cmax - c) * cmin * (n_max - 1) + den
    q, r = np.divmod(num, den)
    up = (2 * r > den) | ((2 * r == den) & (q % 2 == 1))
    return DensifyPlan(q + up, n_max)


def _split_arrays(mean, log_scale, quat, n, rng):
    R = quat_to_rotmat(quat / np.linalg.norm(quat))
    s = np.exp(log_scale)
    z = rng.standard_normal((n, 3))
    pos = mean + (z * s) @ R.T
    return pos, log_scale - np.log(SPLIT_SHRINK)


def split_gaussian(g: Gaussian, n: int, rng: np.random.Generator) -> list[Gaussian]:
    """Replace ``g`` by ``n`` shrunk copies sampled from its own distribution."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return [g]
    pos, ls = _split_arrays(g.position, g.log_scale, g.rotation, n, rng)
    return [
        Gaussian(p, ls.copy(), g.rotation.copy(), g.opacity_logit, g.sh.copy(), g.region, g.id) for p in pos
    ]


def gaussian_rng(seed: int, gid: int) -> np.random.Generator:
    """Per-Gaussian stream, so results do not depend on iteration order."""
    return np.random.default_rng([int(seed), int(gid)])


def densify_text(scene: SplatScene, plan: DensifyPlan, seed: int = 0) -> SplatScene:
    """Split every text Gaussian according to ``plan``; non-text rows are untouched."""
    text_idx = np.flatnonzero(scene.text_mask)
    if len(text_idx) != len(plan):
        raise ValueError(f"plan has {len(plan)} entries but scene has {len(text_idx)} text Gaussians")
    out = scene.copy()
    keep = np.ones(len(scene), bool)
    new_rows = []
    for k, i in enumerate(text_idx):
        n = int(plan.counts[k])
        if n == 1:
            continue
        keep[i] = False
        pos, ls = _split_arrays(scene.means[i], scene.log_scales[i], scene.quats[i], n, gaussian_rng(seed, scene.ids[i]))
        new_rows.append((i, pos, ls))
    if not new_rows:
        return out
    src = np.concatenate([np.full(len(p), i) for i, p, _ in new_rows])
    children = out.derive(
        src,
        np.concatenate([p for _, p, _ in new_rows]),
        np.concatenate([np.repeat(ls[None], len(p), axis=0) for _, p, ls in new_rows]),
    )
    merged = SplatScene.concat([out.subset(np.flatnonzero(keep)), children])
    merged.next_id = out.next_id
    return merged
