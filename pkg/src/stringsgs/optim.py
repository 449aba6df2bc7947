"""Learning-rate schedules, losses, Adam and adaptive density control."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from .camera import quat_to_rotmat
from .densify import SPLIT_SHRINK
from .gaussians import Region, SplatScene, inverse_sigmoid, sigmoid
from .metrics import ssim
from .render import ParamGrads

REFERENCE_T2 = 30000


@dataclass(frozen=True)
class ScheduleConfig:
    alpha: float = 0.5
    beta: float = 0.0005
    gamma: float = 15000
    t1: int = 3000
    t2: int = 30000
    base_lr_init: float = 1.6e-4
    base_lr_final: float = 1.6e-6
    max_steps: Optional[int] = None  # defaults to t2 - t1
    sh_degree_interval: int = 1000
    max_sh_degree: int = 3

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not self.t1 <= self.t2:
            raise ValueError("t1 must not exceed t2")
        if self.t1 < self.t2 and not self.t1 < self.gamma < self.t2:
            raise ValueError("gamma must lie strictly between t1 and t2")
        if not self.base_lr_init >= self.base_lr_final > 0:
            raise ValueError("need base_lr_init >= base_lr_final > 0")

    @property
    def decay_steps(self) -> int:
        return self.max_steps if self.max_steps is not None else self.t2 - self.t1

    def scaled(self, s: float, t1: Optional[int] = None) -> "ScheduleConfig":
        """Compress the schedule in time by ``s`` keeping the LR-factor curve shape.

        ``t1`` overrides the scaled phase-1 length; gamma keeps its scaled
        offset from the phase boundary.
        """
        new_t1 = int(round(self.t1 * s)) if t1 is None else int(t1)
        return replace(
            self,
            t1=new_t1,
            t2=int(round(self.t2 * s)),
            gamma=new_t1 + (self.gamma - self.t1) * s,
            beta=self.beta / s,
            max_steps=None if self.max_steps is None else int(round(self.max_steps * s)),
            sh_degree_interval=max(1, int(round(self.sh_degree_interval * s))),
        )


@dataclass(frozen=True)
class DensityControlConfig:
    interval: int = 100
    start: int = 500
    stop_fraction: float = 0.5
    grad_threshold: float = 2e-4
    opacity_prune: float = 0.005
    opacity_reset_interval: int = 3000
    percent_dense: float = 0.01
    reset_opacity: float = 0.01
    max_world_scale: float = 0.1  # of scene extent, enforced after the first reset

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if min(self.grad_threshold, self.opacity_prune, self.percent_dense, self.opacity_reset_interval) <= 0:
            raise ValueError("thresholds must be positive")

    def stop(self, t2: int) -> int:
        return int(round(self.stop_fraction * t2))

    def scaled(self, s: float) -> "DensityControlConfig":
        return replace(
            self,
            interval=max(1, int(round(self.interval * s))),
            start=int(round(self.start * s)),
            opacity_reset_interval=max(1, int(round(self.opacity_reset_interval * s))),
        )


# ------------------------------------------------------------------ schedule


def lr_factor(t: float, region, cfg: ScheduleConfig) -> float:
    """Region-specific position-LR multiplier: sigmoid ramp for text, constant otherwise."""
    if Region(int(region)) == Region.TEXT:
        return cfg.alpha / (1.0 + math.exp(-cfg.beta * (t - cfg.gamma)))
    return cfg.alpha


def expon_lr(step: float, lr_init: float, lr_final: float, max_steps: int) -> float:
    """Log-linear interpolation from lr_init to lr_final, clamped at both ends."""
    if max_steps <= 0:
        return lr_final
    r = min(max(step / max_steps, 0.0), 1.0)
    if r == 0.0:
        return lr_init
    if r == 1.0:
        return lr_final
    return math.exp(math.log(lr_init) * (1 - r) + math.log(lr_final) * r)


def base_position_lr(t: float, cfg: ScheduleConfig, scene_extent: float = 1.0) -> float:
    """Position LR of the base schedule shifted to start at the phase boundary."""
    return expon_lr(t - cfg.t1, cfg.base_lr_init, cfg.base_lr_final, cfg.decay_steps) * scene_extent


def vanilla_position_lr(t: float, cfg: ScheduleConfig, scene_extent: float = 1.0) -> float:
    return expon_lr(t, cfg.base_lr_init, cfg.base_lr_final, cfg.t2) * scene_extent


def effective_position_lr(t: float, region, cfg: ScheduleConfig, scene_extent: float = 1.0) -> float:
    if t < cfg.t1:
        # phase 1: text positions are locked, non-text Gaussians are not optimized
        return 0.0
    return lr_factor(t, region, cfg) * base_position_lr(t, cfg, scene_extent)


# ------------------------------------------------------------------ losses


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def masked_l1_loss(render: np.ndarray, gt: np.ndarray, mask: np.ndarray):
    """L1 over masked pixels, normalized by the full image's pixel-channel count."""
    _check(render, gt)
    if mask.shape != render.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {render.shape[:2]}")
    m = (np.asarray(mask) > 0)[..., None]
    diff = (render - gt) * m
    n = render.size
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def full_loss(render: np.ndarray, gt: np.ndarray, lam: float = 0.2):
    """(1 - lam) * L1 + lam * (1 - SSIM) and its gradient w.r.t. the render."""
    _check(render, gt)
    diff = render - gt
    n = render.size
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - lam) * np.sign(diff) / n
    if lam == 0.0:
        return l1, grad
    s, ds = ssim(render, gt, with_grad=True)
    return (1.0 - lam) * l1 + lam * (1.0 - s), grad - lam * ds


# ------------------------------------------------------------------ Adam

PARAM_LRS = {
    "opacity_logits": 0.05,
    "log_scales": 5e-3,
    "quats": 1e-3,
    "sh_dc": 2.5e-3,
    "sh_rest": 2.5e-3 / 20,
}
BETA1, BETA2, EPS = 0.9, 0.999, 1e-15


def _views(scene: SplatScene):
    return {
        "means": scene.means,
        "log_scales": scene.log_scales,
        "quats": scene.quats,
        "opacity_logits": scene.opacity_logits,
        "sh_dc": scene.sh[:, 0, :],
        "sh_rest": scene.sh[:, 1:, :],
    }


def _grad_views(g: ParamGrads):
    return {
        "means": g.means,
        "log_scales": g.log_scales,
        "quats": g.quats,
        "opacity_logits": g.opacity_logits,
        "sh_dc": g.sh[:, 0, :],
        "sh_rest": g.sh[:, 1:, :],
    }


@dataclass
class OptimizerState:
    """Adam moments per parameter class; rows track the scene's Gaussians."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: dict = field(default_factory=dict)

    @classmethod
    def for_scene(cls, scene: SplatScene) -> "OptimizerState":
        st = cls()
        for k, arr in _views(scene).items():
            st.m[k] = np.zeros_like(arr)
            st.v[k] = np.zeros_like(arr)
            st.step[k] = 0
        return st

    def __len__(self):
        return len(self.m["means"]) if self.m else 0

    def keep(self, mask: np.ndarray) -> None:
        for k in self.m:
            self.m[k] = self.m[k][mask]
            self.v[k] = self.v[k][mask]

    def append_zeros(self, n: int) -> None:
        for k in self.m:
            pad = np.zeros((n,) + self.m[k].shape[1:])
            self.m[k] = np.concatenate([self.m[k], pad])
            self.v[k] = np.concatenate([self.v[k], pad])

    def take(self, idx: np.ndarray) -> "OptimizerState":
        return OptimizerState({k: a[idx] for k, a in self.m.items()}, {k: a[idx] for k, a in self.v.items()}, dict(self.step))


@njit(cache=True)
def _adam_rows(p, g, m, v, lr, bc1, bc2):
    # p, g, m, v are (N, k) views; lr holds one rate per row
    n, k = p.shape
    for i in range(n):
        for j in range(k):
            gi = g[i, j]
            mi = m[i, j] * BETA1 + (1 - BETA1) * gi
            vi = v[i, j] * BETA2 + (1 - BETA2) * gi * gi
            m[i, j] = mi
            v[i, j] = vi
            if lr[i] != 0.0:
                p[i, j] -= lr[i] * (mi / bc1) / (np.sqrt(vi / bc2) + EPS)


def adam_step(scene: SplatScene, state: OptimizerState, grads: ParamGrads, lrs: dict, position_lr) -> None:
    """In-place Adam update of every parameter class.

    ``position_lr`` is a scalar or a per-Gaussian array; rows with a zero
    rate keep their values bit-identical.
    """
    if len(state) != len(scene) or len(grads) != len(scene):
        raise ValueError(f"cardinality mismatch: scene {len(scene)}, state {len(state)}, grads {len(grads)}")
    n = len(scene)
    params = _views(scene)
    gv = _grad_views(grads)
    for k, p in params.items():
        if k == "means":
            lr = np.broadcast_to(np.asarray(position_lr, dtype=np.float64), (n,))
        else:
            lr = np.full(n, float(lrs.get(k, PARAM_LRS[k])))
        st = state.step[k] = state.step[k] + 1
        bc1 = 1 - BETA1**st
        bc2 = 1 - BETA2**st
        _adam_rows(
            p.reshape(n, -1), np.asarray(gv[k], dtype=np.float64).reshape(n, -1),
            state.m[k].reshape(n, -1), state.v[k].reshape(n, -1), np.ascontiguousarray(lr), bc1, bc2,
        )
    # sh views alias scene.sh, so in-place updates land in the scene


# ------------------------------------------------------------------ density control


@dataclass
class DensityStats:
    grad_accum: np.ndarray
    denom: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensityStats":
        return cls(np.zeros(n), np.zeros(n))

    def add(self, grads: ParamGrads) -> None:
        self.grad_accum[grads.visible] += grads.mean2d_norm[grads.visible]
        self.denom[grads.visible] += 1

    def keep(self, mask):
        self.grad_accum = self.grad_accum[mask]
        self.denom = self.denom[mask]


def _append_rows(scene: SplatScene, state: Optional[OptimizerState], src: np.ndarray, means: np.ndarray, log_scales: np.ndarray):
    new = scene.derive(src, means, log_scales)
    merged = SplatScene.concat([scene, new])
    merged.next_id = scene.next_id
    if state is not None:
        state.append_zeros(len(src))
    return merged


def density_control_step(
    scene: SplatScene,
    stats: DensityStats,
    cfg: DensityControlConfig,
    t: int,
    state: Optional[OptimizerState] = None,
    seed: int = 0,
    after_reset: bool = False,
) -> SplatScene:
    """Clone, split and prune by accumulated screen-space gradient and opacity.

    Returns a new scene; ``state`` (if given) is edited to match its rows and
    ``stats`` is reset.
    """
    scene = scene.copy()  # ids are allocated on the working copy, not the caller's scene
    n0 = len(scene)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(stats.denom > 0, stats.grad_accum / stats.denom, 0.0)
    max_scale = scene.scales.max(axis=1) if n0 else np.zeros(0)
    dense_lim = cfg.percent_dense * scene.scene_extent
    hot = g >= cfg.grad_threshold

    # clone small hot Gaussians
    clone = np.flatnonzero(hot & (max_scale <= dense_lim))
    if len(clone):
        scene = _append_rows(scene, state, clone, scene.means[clone].copy(), scene.log_scales[clone].copy())

    # split large hot Gaussians (clones excluded); originals removed afterwards
    split = np.flatnonzero(hot & (max_scale > dense_lim))
    if len(split):
        n_split = 2
        R = quat_to_rotmat(scene.quats[split] / np.linalg.norm(scene.quats[split], axis=1, keepdims=True))
        s = np.exp(scene.log_scales[split])
        samples = []
        for k, i in enumerate(split):
            rng = np.random.default_rng([int(seed), int(t), int(scene.ids[i])])
            z = rng.standard_normal((n_split, 3))
            samples.append(scene.means[i] + (z * s[k]) @ R[k].T)
        src = np.repeat(split, n_split)
        means = np.concatenate(samples)
        log_scales = np.repeat(scene.log_scales[split] - np.log(SPLIT_SHRINK), n_split, axis=0)
        scene = _append_rows(scene, state, src, means, log_scales)

    keep = np.ones(len(scene), bool)
    keep[split] = False
    op = scene.opacities
    keep &= op >= cfg.opacity_prune
    if after_reset:
        keep &= scene.scales.max(axis=1) <= cfg.max_world_scale * scene.scene_extent
    out = scene.subset(np.flatnonzero(keep))
    out.next_id = scene.next_id
    if state is not None:
        state.keep(keep)
    stats.grad_accum = np.zeros(len(out))
    stats.denom = np.zeros(len(out))
    return out


def reset_opacity(scene: SplatScene, state: Optional[OptimizerState], value: float = 0.01) -> None:
    new = np.minimum(scene.opacities, value)
    scene.opacity_logits[:] = inverse_sigmoid(new)
    if state is not None:
        state.m["opacity_logits"][:] = 0
        state.v["opacity_logits"][:] = 0
