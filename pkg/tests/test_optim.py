import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stringsgs.gaussians import Region, SplatScene, inverse_sigmoid
from stringsgs.optim import (
    BETA1,
    BETA2,
    EPS,
    PARAM_LRS,
    DensityControlConfig,
    DensityStats,
    OptimizerState,
    ScheduleConfig,
    adam_step,
    base_position_lr,
    density_control_step,
    effective_position_lr,
    full_loss,
    lr_factor,
    masked_l1_loss,
    reset_opacity,
    vanilla_position_lr,
)
from stringsgs.render import ParamGrads, render, render_backward, render_with_context

from conftest import identity_pose, pinhole, random_scene

CFG = ScheduleConfig()
TEXT, NON = Region.TEXT, Region.NON_TEXT


# ---------------------------------------------------------------- schedule


def test_lr_factor_examples():
    assert lr_factor(15000, TEXT, CFG) == pytest.approx(0.25, abs=1e-15)
    for t in (0, 3000, 15000, 30000, 1e9):
        assert lr_factor(t, NON, CFG) == 0.5
    assert lr_factor(30000, TEXT, CFG) == pytest.approx(0.5 / (1 + math.exp(-7.5)), rel=1e-14)
    assert round(lr_factor(30000, TEXT, CFG), 5) == 0.49972


@settings(max_examples=200)
@given(st.floats(-1e5, 75000), st.floats(0, 1e4))
def test_text_factor_monotone_and_below_nontext(t, dt):
    # beyond gamma + ~36/beta the sigmoid rounds to exactly 1 in double precision
    a = lr_factor(t, TEXT, CFG)
    assert 0 <= a < lr_factor(t, NON, CFG) <= CFG.alpha
    if dt > 1e-3 and -5e4 < t < 5e4 and t + dt < 75000:
        assert lr_factor(t + dt, TEXT, CFG) > a


def test_base_lr_endpoints():
    assert base_position_lr(CFG.t1, CFG) == 1.6e-4 and base_position_lr(CFG.t2, CFG) == 1.6e-6
    ext = 2.5
    assert base_position_lr(CFG.t1, CFG, ext) == pytest.approx(1.6e-4 * ext, rel=1e-15)
    assert base_position_lr(CFG.t2, CFG, ext) == pytest.approx(1.6e-6 * ext, rel=1e-15)
    mid = CFG.t1 + CFG.decay_steps / 2
    assert base_position_lr(mid, CFG, ext) == pytest.approx(math.sqrt(1.6e-4 * 1.6e-6) * ext, rel=1e-12)
    # clamped outside the decay window
    assert base_position_lr(CFG.t2 + 500, CFG, ext) == base_position_lr(CFG.t2, CFG, ext)


def test_explicit_max_steps():
    cfg = ScheduleConfig(max_steps=1000)
    assert base_position_lr(cfg.t1 + 1000, cfg) == pytest.approx(1.6e-6, rel=1e-15)


def test_vanilla_schedule_is_unshifted():
    assert vanilla_position_lr(0, CFG) == pytest.approx(1.6e-4)
    assert vanilla_position_lr(CFG.t2, CFG) == pytest.approx(1.6e-6)


def test_effective_lr_examples():
    for t in (0, 1, 1500, 2999):
        assert effective_position_lr(t, TEXT, CFG) == 0.0
    assert effective_position_lr(15000, TEXT, CFG) == pytest.approx(0.25 * base_position_lr(15000, CFG), rel=1e-14)
    assert effective_position_lr(15000, NON, CFG) == pytest.approx(0.5 * base_position_lr(15000, CFG), rel=1e-14)


def test_effective_lr_continuous_on_phase2():
    ts = np.linspace(CFG.t1, CFG.t2, 20001)
    for region in (TEXT, NON):
        v = np.array([effective_position_lr(t, region, CFG) for t in ts])
        assert np.all(np.abs(np.diff(v)) < 1e-3 * v[1:])


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(alpha=0)
    with pytest.raises(ValueError):
        ScheduleConfig(beta=-1)
    with pytest.raises(ValueError):
        ScheduleConfig(t1=5000, t2=4000)
    with pytest.raises(ValueError):
        ScheduleConfig(gamma=2000)


def test_scaled_schedule_preserves_curve():
    s = 2000 / 30000
    sc = CFG.scaled(s, t1=300)
    assert (sc.t1, sc.t2) == (300, 2000)
    assert sc.gamma == pytest.approx(300 + 12000 * s)
    assert sc.beta == pytest.approx(0.0005 / s)
    # same factor at corresponding offsets from the phase boundary
    for u in np.linspace(0, 27000, 13):
        assert lr_factor(300 + u * s, TEXT, sc) == pytest.approx(lr_factor(3000 + u, TEXT, CFG), rel=1e-12)
    plain = CFG.scaled(0.1)
    assert (plain.t1, plain.t2, plain.gamma) == (300, 3000, 1500)


# ---------------------------------------------------------------- losses


def test_masked_l1_examples(rng):
    x = rng.random((4, 5, 3))
    loss, g = masked_l1_loss(x, x, np.ones((4, 5)))
    assert loss == 0
    y = rng.random((4, 5, 3))
    loss, g = masked_l1_loss(x, y, np.zeros((4, 5)))
    assert loss == 0 and not g.any()
    gt = np.zeros((1, 2, 3))
    gt[0, 0] = 1
    loss, g = masked_l1_loss(np.zeros((1, 2, 3)), gt, np.array([[1, 0]]))
    assert loss == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(g[0, 0], -1 / 6) and not g[0, 1].any()


def test_masked_l1_normalized_by_full_image(rng):
    a, b = rng.random((6, 8, 3)), rng.random((6, 8, 3))
    mask = rng.random((6, 8)) < 0.3
    loss, _ = masked_l1_loss(a, b, mask)
    assert loss == pytest.approx(np.abs(a - b)[mask].sum() / a.size, rel=1e-12)


def test_loss_shape_errors():
    with pytest.raises(ValueError):
        masked_l1_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        masked_l1_loss(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        full_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_full_loss_examples(rng):
    x = rng.random((9, 9, 3))
    assert full_loss(x, x)[0] == pytest.approx(0.0, abs=1e-12)
    y = rng.random((9, 9, 3))
    l, g = full_loss(x, y, 0.0)
    assert l == pytest.approx(np.abs(x - y).mean(), rel=1e-14)
    assert np.allclose(g, np.sign(x - y) / x.size)


def test_full_loss_gradient_fd(rng):
    x, y = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    _, g = full_loss(x, y)
    h = 1e-7
    for idx in [(0, 0, 0), (4, 3, 2), (7, 7, 1), (1, 6, 0)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (full_loss(xp, y)[0] - full_loss(xm, y)[0]) / (2 * h)
        assert fd == pytest.approx(g[idx], rel=1e-4, abs=1e-9)


# ---------------------------------------------------------------- Adam


def _grads_like(scene, rng=None, zero=False):
    n = len(scene)
    g = ParamGrads.zeros(n)
    if not zero:
        for name in ("means", "log_scales", "quats", "opacity_logits", "sh"):
            getattr(g, name)[:] = rng.normal(size=getattr(g, name).shape)
    return g


def test_adam_zero_gradients(rng):
    s = random_scene(rng, n=6)
    before = s.copy()
    st_ = OptimizerState.for_scene(s)
    adam_step(s, st_, _grads_like(s, zero=True), PARAM_LRS, 1e-3)
    assert s.equals(before)


def test_adam_first_step_closed_form(rng):
    s = random_scene(rng, n=4)
    before = s.copy()
    g = _grads_like(s, rng)
    adam_step(s, OptimizerState.for_scene(s), g, PARAM_LRS, 1e-3)

    def expected(p, grad, lr):
        m = (1 - BETA1) * grad / (1 - BETA1)
        v = (1 - BETA2) * grad * grad / (1 - BETA2)
        return p - lr * m / (np.sqrt(v) + EPS)

    assert np.allclose(s.means, expected(before.means, g.means, 1e-3), rtol=0, atol=1e-12)
    assert np.allclose(s.log_scales, expected(before.log_scales, g.log_scales, PARAM_LRS["log_scales"]), rtol=0, atol=1e-12)
    assert np.allclose(s.quats, expected(before.quats, g.quats, PARAM_LRS["quats"]), rtol=0, atol=1e-12)
    assert np.allclose(
        s.opacity_logits, expected(before.opacity_logits, g.opacity_logits, PARAM_LRS["opacity_logits"]), rtol=0, atol=1e-12
    )
    assert np.allclose(s.sh[:, 0], expected(before.sh[:, 0], g.sh[:, 0], PARAM_LRS["sh_dc"]), rtol=0, atol=1e-12)
    assert np.allclose(s.sh[:, 1:], expected(before.sh[:, 1:], g.sh[:, 1:], PARAM_LRS["sh_rest"]), rtol=0, atol=1e-12)


def test_adam_locked_positions_bit_identical(rng):
    s = random_scene(rng, n=8)
    means0 = s.means.copy()
    st_ = OptimizerState.for_scene(s)
    for _ in range(5):
        adam_step(s, st_, _grads_like(s, rng), PARAM_LRS, 0.0)
    assert np.array_equal(s.means, means0)


def test_adam_per_row_position_lr(rng):
    s = random_scene(rng, n=6)
    means0 = s.means.copy()
    lr = np.array([0.0, 1e-3, 0.0, 1e-3, 0.0, 1e-3])
    adam_step(s, OptimizerState.for_scene(s), _grads_like(s, rng), PARAM_LRS, lr)
    assert np.array_equal(s.means[lr == 0], means0[lr == 0])
    assert np.all(s.means[lr > 0] != means0[lr > 0])


def test_adam_cardinality_mismatch(rng):
    s = random_scene(rng, n=3)
    with pytest.raises(ValueError):
        adam_step(s, OptimizerState.for_scene(s), ParamGrads.zeros(4), PARAM_LRS, 1e-3)


def test_small_step_does_not_increase_loss(rng):
    intr, pose = pinhole(24, 24, 25.0), identity_pose()
    for k in range(10):
        s = random_scene(rng, n=12, log_scale=(-3.0, -1.5))
        gt = rng.random((24, 24, 3))
        img, ctx = render_with_context(s, intr, pose)
        l0, gimg = full_loss(img, gt)
        g = render_backward(s, intr, pose, (0, 0, 0), gimg, ctx)
        # plain gradient step with lr 1e-6 on every parameter
        for name in ("means", "log_scales", "quats", "opacity_logits", "sh"):
            getattr(s, name)[:] -= 1e-6 * getattr(g, name)
        l1, _ = full_loss(render(s, intr, pose), gt)
        assert l1 <= l0 + 1e-12


# ---------------------------------------------------------------- density control


def _dc_scene(n, scale=0.001, opacity=0.5):
    sh = np.zeros((n, 16, 3))
    return SplatScene(
        np.arange(3 * n, dtype=float).reshape(n, 3), np.log(np.full((n, 3), scale)), np.tile([1.0, 0, 0, 0], (n, 1)),
        np.full(n, inverse_sigmoid(opacity)), sh, np.zeros(n, np.uint8), np.arange(n), 1.0,
    )


def test_density_nothing_hot_only_prunes():
    s = _dc_scene(5)
    s.opacity_logits[2] = inverse_sigmoid(0.001)
    stats = DensityStats(np.full(5, 1e-6), np.ones(5))
    st_ = OptimizerState.for_scene(s)
    out = density_control_step(s, stats, DensityControlConfig(), 600, st_)
    assert len(out) == 4 and 2 not in out.ids
    assert out.equals(s.subset([0, 1, 3, 4]))
    assert len(st_) == 4 and len(stats.denom) == 4 and not stats.denom.any()


def test_density_single_clone():
    s = _dc_scene(4)
    stats = DensityStats(np.array([0.0, 1.0, 0.0, 0.0]), np.array([1.0, 2.0, 1.0, 1.0]))
    st_ = OptimizerState.for_scene(s)
    out = density_control_step(s, stats, DensityControlConfig(), 600, st_)
    assert len(out) == 5
    new = out.subset([4])
    assert np.array_equal(new.means, s.means[[1]]) and np.array_equal(new.log_scales, s.log_scales[[1]])
    assert np.array_equal(new.sh, s.sh[[1]]) and new.ids[0] == 4
    assert out.subset(range(4)).equals(s)
    assert len(st_) == 5 and not st_.m["means"][4].any()


def test_density_split_replaces_with_two_smaller():
    s = _dc_scene(3, scale=0.5)
    stats = DensityStats(np.array([0.0, 0.0, 1.0]), np.ones(3))
    out = density_control_step(s, stats, DensityControlConfig(), 600, seed=7)
    assert len(out) == 4 and 2 not in out.ids
    assert np.allclose(out.scales[2:], 0.5 / 1.6)
    # deterministic under the seed
    again = density_control_step(s, DensityStats(np.array([0.0, 0.0, 1.0]), np.ones(3)), DensityControlConfig(), 600, seed=7)
    assert out.equals(again)


def test_density_large_world_scale_pruned_after_reset():
    s = _dc_scene(2)
    s.log_scales[1] = math.log(0.5)
    kept = density_control_step(s, DensityStats.zeros(2), DensityControlConfig(), 600)
    assert len(kept) == 2
    pruned = density_control_step(s, DensityStats.zeros(2), DensityControlConfig(), 600, after_reset=True)
    assert len(pruned) == 1


def test_reset_opacity_caps_and_clears_moments(rng):
    s = random_scene(rng, n=5, opacity=(0.005, 0.9))
    st_ = OptimizerState.for_scene(s)
    st_.m["opacity_logits"][:] = 1
    before = s.opacities.copy()
    reset_opacity(s, st_, 0.01)
    assert np.allclose(s.opacities, np.minimum(before, 0.01))
    assert not st_.m["opacity_logits"].any()


def test_density_config_validation_and_scaling():
    with pytest.raises(ValueError):
        DensityControlConfig(interval=0)
    d = DensityControlConfig().scaled(0.1)
    assert (d.interval, d.start, d.opacity_reset_interval) == (10, 50, 300)
    assert DensityControlConfig().stop(30000) == 15000
