"""Two-phase text-aware optimization and the single-phase baseline."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .colmap_io import SceneBundle
from .config import RunConfig
from .densify import densify_counts, densify_text
from .gaussians import Region, SplatScene
from .optim import (
    PARAM_LRS,
    DensityControlConfig,
    DensityStats,
    OptimizerState,
    ScheduleConfig,
    adam_step,
    density_control_step,
    effective_position_lr,
    full_loss,
    lr_factor,
    masked_l1_loss,
    reset_opacity,
    vanilla_position_lr,
    base_position_lr,
)
from .render import render_backward, render_with_context
from .seg3d import classify_points, dilate_mask, init_gaussians

log = logging.getLogger(__name__)

# called as hook(t, phase, scene, mean_train_loss) at eval and checkpoint
# iterations and at the last iteration of every phase
Hook = Callable[[int, str, SplatScene, float], None]


class ViewSampler:
    """Seeded shuffle without replacement; a new permutation each epoch."""

    def __init__(self, items: list, rng: np.random.Generator):
        self.items = list(items)
        self.rng = rng
        self.queue: list = []

    def next(self):
        if not self.queue:
            self.queue = [self.items[i] for i in self.rng.permutation(len(self.items))]
        return self.queue.pop()


@dataclass
class Trainer:
    """Single-writer optimization state for one scene."""

    scene: SplatScene
    sched: ScheduleConfig
    dcfg: DensityControlConfig
    background: np.ndarray
    seed: int = 0
    lam: float = 0.2
    state: OptimizerState = None
    stats: DensityStats = None
    loss_sum: float = 0.0
    loss_n: int = 0
    reset_done: bool = False

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        self.state = OptimizerState.for_scene(self.scene)
        self.stats = DensityStats.zeros(len(self.scene))

    def sh_degree(self, t: int) -> int:
        return min(self.sched.max_sh_degree, t // self.sched.sh_degree_interval)

    def step(self, t: int, intr, pose, gt, position_lr, mask=None) -> float:
        deg = self.sh_degree(t)
        img, ctx = render_with_context(self.scene, intr, pose, self.background, deg)
        if mask is None:
            loss, g_img = full_loss(img, gt, self.lam)
        else:
            loss, g_img = masked_l1_loss(img, gt, mask)
        grads = render_backward(self.scene, intr, pose, self.background, g_img, ctx, deg)
        self.stats.add(grads)
        if callable(position_lr):
            position_lr = position_lr(self.scene)
        adam_step(self.scene, self.state, grads, PARAM_LRS, position_lr)
        self.loss_sum += loss
        self.loss_n += 1
        return loss

    def take_loss(self) -> float:
        v = self.loss_sum / self.loss_n if self.loss_n else math.nan
        self.loss_sum, self.loss_n = 0.0, 0
        return v

    def density(self, t: int, start: int, stop: int) -> None:
        """Density control and opacity reset following the reference cadence."""
        if t >= stop or len(self.scene) == 0:
            return
        if t > start and t % self.dcfg.interval == 0:
            self.scene = density_control_step(
                self.scene, self.stats, self.dcfg, t, self.state, self.seed, after_reset=self.reset_done
            )
        if t % self.dcfg.opacity_reset_interval == 0:
            reset_opacity(self.scene, self.state, self.dcfg.reset_opacity)
            self.reset_done = True


def _gt(bundle: SceneBundle, pose):
    return bundle.images[pose.image_id]


def prepare_masks(bundle: SceneBundle, dilation: float) -> dict[int, np.ndarray]:
    return {iid: dilate_mask(m, dilation) for iid, m in bundle.masks.items()}


def segment(bundle: SceneBundle, cfg: RunConfig, masks=None) -> SplatScene:
    """Tagged initial Gaussians for the whole sparse cloud."""
    masks = prepare_masks(bundle, cfg.dilation) if masks is None else masks
    part = classify_points(bundle.points, bundle.intrinsics, bundle.poses, masks, cfg.tau)
    return init_gaussians(bundle.points, part, bundle.scene_extent())


def _order_by_id(scene: SplatScene) -> SplatScene:
    out = scene.subset(np.argsort(scene.ids, kind="stable"))
    out.next_id = scene.next_id
    return out


def _phase_rng(seed: int, phase: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), phase])


def hook_due(t: int, cfg: RunConfig, last: int) -> bool:
    if t == last or t in cfg.eval_iterations:
        return True
    return any(k and t % k == 0 for k in (cfg.eval_interval, cfg.checkpoint_interval))


def run_phase1(
    bundle: SceneBundle,
    cfg: RunConfig,
    init: Optional[SplatScene] = None,
    masks: Optional[dict] = None,
    hook: Optional[Hook] = None,
    densify: bool = True,
    lock_positions: bool = True,
) -> SplatScene:
    """Selective text reconstruction: text Gaussians only, masked L1, locked positions."""
    sched = cfg.schedule
    masks = prepare_masks(bundle, cfg.dilation) if masks is None else masks
    init = segment(bundle, cfg, masks) if init is None else init
    text = init.select(Region.TEXT)
    text.next_id = init.next_id
    views = [p for p in bundle.train_poses if masks[p.image_id].any()]
    if len(text) == 0 or not views:
        warnings.warn("no text Gaussians or no training view with a text mask; phase 1 skipped", RuntimeWarning)
        return text
    if densify:
        track_len = {p.point_id: len(p.track) for p in bundle.points}
        vis = [track_len.get(int(i), 1) for i in text.ids]
        text = densify_text(text, densify_counts(vis, cfg.n_max), cfg.seed)
    ratio = sched.t1 / sched.t2 if sched.t2 else 0.0
    dc = cfg.density
    start = int(round(dc.start * ratio))
    stop = int(round(dc.stop(sched.t2) * ratio))
    tr = Trainer(text, sched, dc, cfg.background, cfg.seed, cfg.lambda_dssim)
    sampler = ViewSampler(views, _phase_rng(cfg.seed, 1))
    extent = init.scene_extent
    for t in range(1, sched.t1 + 1):
        pose = sampler.next()
        pos_lr = 0.0 if lock_positions else vanilla_position_lr(t, sched, extent)
        tr.step(t, bundle.intr(pose), pose, _gt(bundle, pose), pos_lr, masks[pose.image_id])
        tr.density(t, start, stop)
        if hook and hook_due(t, cfg, sched.t1):
            hook(t, "phase1", tr.scene, tr.take_loss())
    return tr.scene


def _region_position_lr(t: int, sched: ScheduleConfig, extent: float):
    base = base_position_lr(t, sched, extent)
    f_text = lr_factor(t, Region.TEXT, sched)
    f_non = lr_factor(t, Region.NON_TEXT, sched)

    def rows(scene: SplatScene) -> np.ndarray:
        return np.where(scene.text_mask, f_text * base, f_non * base)

    return rows


def _joint(bundle, cfg, scene, t_from, t_to, pos_lr_fn, phase, hook):
    sched = cfg.schedule
    tr = Trainer(scene, sched, cfg.density, cfg.background, cfg.seed, cfg.lambda_dssim)
    sampler = ViewSampler(bundle.train_poses, _phase_rng(cfg.seed, 2))
    stop = cfg.density.stop(sched.t2)
    for t in range(t_from, t_to + 1):
        pose = sampler.next()
        tr.step(t, bundle.intr(pose), pose, _gt(bundle, pose), pos_lr_fn(t))
        tr.density(t, cfg.density.start, stop)
        if hook and hook_due(t, cfg, t_to):
            hook(t, phase, tr.scene, tr.take_loss())
    return tr.scene


def run_phase2(
    bundle: SceneBundle, refined_text: SplatScene, nontext: SplatScene, cfg: RunConfig, hook: Optional[Hook] = None
) -> SplatScene:
    """Joint refinement of refined text and initial non-text Gaussians."""
    sched = cfg.schedule
    merged = SplatScene.concat([refined_text, nontext])
    merged.next_id = max(refined_text.next_id, nontext.next_id)
    merged = _order_by_id(merged)
    if sched.t2 <= sched.t1:
        return merged
    extent = merged.scene_extent
    return _joint(bundle, cfg, merged, sched.t1 + 1, sched.t2, lambda t: _region_position_lr(t, sched, extent), "phase2", hook)


def run_vanilla(bundle: SceneBundle, cfg: RunConfig, init: Optional[SplatScene] = None, hook: Optional[Hook] = None) -> SplatScene:
    """Single-phase baseline from the full cloud with the unshifted base schedule."""
    sched = cfg.schedule
    scene = segment(bundle, cfg) if init is None else init.copy()
    scene = _order_by_id(scene)
    extent = scene.scene_extent
    return _joint(bundle, cfg, scene, 1, sched.t2, lambda t: vanilla_position_lr(t, sched, extent), "vanilla", hook)


def run_pipeline(bundle: SceneBundle, cfg: RunConfig, hook: Optional[Hook] = None, phase1_hook: Optional[Hook] = None):
    """Dispatch on ``cfg.mode``; returns (final scene, phase-1 output or None)."""
    masks = prepare_masks(bundle, cfg.dilation)
    init = segment(bundle, cfg, masks)
    if cfg.mode == "vanilla":
        return run_vanilla(bundle, cfg, init, hook), None
    refined = run_phase1(
        bundle,
        cfg,
        init,
        masks,
        hook,
        densify=cfg.mode != "strings_no_densify",
        lock_positions=cfg.mode != "strings_free_pos",
    )
    if phase1_hook:
        phase1_hook(cfg.t1, "phase1", refined, math.nan)
    nontext = init.select(Region.NON_TEXT)
    nontext.next_id = max(init.next_id, refined.next_id)
    return run_phase2(bundle, refined, nontext, cfg, hook), refined
