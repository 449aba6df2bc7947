"""Differentiable Gaussian-splat rendering: projection, compositing, gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _raster
from .camera import Z_EPS, CameraIntrinsics, CameraPose, quat_to_rotmat
from .gaussians import MAX_SH_DEGREE, SplatScene, sigmoid
from .sh import colors_backward, eval_colors

LOWPASS = 0.3
NEAR = 0.01


class Splat2D(NamedTuple):
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


@dataclass
class ParamGrads:
    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    # screen-space gradient norm (NDC units) and visibility, for density control
    mean2d_norm: np.ndarray
    visible: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "ParamGrads":
        return cls(
            np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n), np.zeros((n, 16, 3)), np.zeros(n), np.zeros(n, bool)
        )

    def __len__(self):
        return len(self.means)

    def scaled(self, s: float) -> "ParamGrads":
        return ParamGrads(
            self.means * s, self.log_scales * s, self.quats * s, self.opacity_logits * s, self.sh * s, self.mean2d_norm, self.visible
        )


def covariance3d(log_scales, quats):
    qn = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    R = quat_to_rotmat(qn)
    M = R * np.exp(log_scales)[:, None, :]
    return M @ M.transpose(0, 2, 1), R, M, qn


def project_gaussian(position, log_scale, quat, intr: CameraIntrinsics, pose: CameraPose) -> Optional[Splat2D]:
    """EWA projection of a single Gaussian; ``None`` when behind the camera."""
    pre = _preprocess(
        np.asarray(position, float)[None], np.asarray(log_scale, float)[None], np.asarray(quat, float)[None], intr, pose, Z_EPS
    )
    if not pre["front"][0]:
        return None
    a, b, c = pre["cov2d"][0]
    return Splat2D(pre["mean2d"][0].copy(), np.array([[a, b], [b, c]]), float(pre["pc"][0, 2]))


def _preprocess(means, log_scales, quats, intr, pose, near):
    W = pose.rotation
    pc = means @ W.T + pose.tvec
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    front = z > near
    zs = np.where(front, z, 1.0)
    fx, fy = intr.fx, intr.fy
    mean2d = np.stack([fx * x / zs + intr.cx, fy * y / zs + intr.cy], axis=1)
    n = len(means)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = -fx * x / zs**2
    J[:, 1, 1] = fy / zs
    J[:, 1, 2] = -fy * y / zs**2
    Sigma, R, M, qn = covariance3d(log_scales, quats)
    T = J @ W
    cov = T @ Sigma @ T.transpose(0, 2, 1)
    cov2d = np.stack([cov[:, 0, 0] + LOWPASS, cov[:, 0, 1], cov[:, 1, 1] + LOWPASS], axis=1)
    return dict(pc=pc, front=front, zs=zs, mean2d=mean2d, J=J, T=T, Sigma=Sigma, R=R, M=M, qn=qn, cov2d=cov2d, W=W)


class RenderContext(NamedTuple):
    pre: dict
    order: np.ndarray  # scene indices of drawn splats, in compositing order
    conic: np.ndarray
    opac: np.ndarray
    colors: np.ndarray
    raw: np.ndarray
    dirs: np.ndarray
    norms: np.ndarray
    bbox: np.ndarray
    offsets: np.ndarray
    items: np.ndarray
    t_final: np.ndarray
    sh_degree: int


def _bbox(mean2d, cov2d, opac, width, height):
    """Pixel box outside which alpha stays below the 1/255 cutoff."""
    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    ratio = np.maximum(255.0 * opac, 1.0)
    r = np.sqrt(lam * 2.0 * np.log(ratio))
    # pixel i is sampled at i + 0.5; one pixel of slack absorbs rounding
    x0 = np.floor(mean2d[:, 0] - r - 0.5) - 1
    x1 = np.ceil(mean2d[:, 0] + r - 0.5) + 2
    y0 = np.floor(mean2d[:, 1] - r - 0.5) - 1
    y1 = np.ceil(mean2d[:, 1] + r - 0.5) + 2
    box = np.stack([np.clip(x0, 0, width), np.clip(x1, 0, width), np.clip(y0, 0, height), np.clip(y1, 0, height)], axis=1)
    box = box.astype(np.int64)
    box[ratio <= 1.0] = 0
    return box


def _forward(scene: SplatScene, intr, pose, background, sh_degree):
    W, H = intr.width, intr.height
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    if len(scene) == 0:
        img = np.broadcast_to(bg, (H, W, 3)).copy()
        return img, None
    pre = _preprocess(scene.means, scene.log_scales, scene.quats, intr, pose, NEAR)
    opac = sigmoid(scene.opacity_logits)
    box = _bbox(pre["mean2d"], pre["cov2d"], opac, W, H)
    drawn = pre["front"] & (box[:, 1] > box[:, 0]) & (box[:, 3] > box[:, 2])
    idx = np.flatnonzero(drawn)
    order = idx[np.lexsort((scene.ids[idx], pre["pc"][idx, 2]))]
    a, b, c = pre["cov2d"][order].T
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    colors, raw, dirs, norms = eval_colors(scene.sh[order], scene.means[order], pose.center, sh_degree)
    mean2d = np.ascontiguousarray(pre["mean2d"][order])
    bbox = np.ascontiguousarray(box[order])
    offsets, items = _raster.bin_splats(bbox, W, H)
    img, t_final = _raster.composite_forward(mean2d, conic, np.ascontiguousarray(opac[order]), colors, bbox, bg, W, H, offsets, items)
    ctx = RenderContext(pre, order, conic, opac[order], colors, raw, dirs, norms, bbox, offsets, items, t_final, sh_degree)
    return img, ctx


def render(scene: SplatScene, intr: CameraIntrinsics, pose: CameraPose, background=(0.0, 0.0, 0.0), sh_degree: int = MAX_SH_DEGREE) -> np.ndarray:
    """Render an H x W x 3 image of ``scene`` from ``pose``."""
    return _forward(scene, intr, pose, background, sh_degree)[0]


def render_with_context(scene, intr, pose, background=(0.0, 0.0, 0.0), sh_degree: int = MAX_SH_DEGREE):
    return _forward(scene, intr, pose, background, sh_degree)


def _quat_backward(qn, q, dR):
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = dR
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    gqn = np.stack([gw, gx, gy, gz], axis=1)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    return (gqn - qn * np.sum(gqn * qn, axis=1, keepdims=True)) / norm


def render_backward(
    scene: SplatScene,
    intr: CameraIntrinsics,
    pose: CameraPose,
    background,
    grad_image: np.ndarray,
    ctx: Optional[RenderContext] = None,
    sh_degree: int = MAX_SH_DEGREE,
) -> ParamGrads:
    """Gradients of sum(grad_image * render(scene)) w.r.t. every Gaussian parameter."""
    n = len(scene)
    out = ParamGrads.zeros(n)
    if ctx is None:
        _, ctx = _forward(scene, intr, pose, background, sh_degree)
    if ctx is None or len(ctx.order) == 0:
        return out
    W, H = intr.width, intr.height
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    o = ctx.order
    pre = ctx.pre
    d_m2, d_con, d_op, d_col = _raster.composite_backward(
        np.ascontiguousarray(pre["mean2d"][o]), ctx.conic, np.ascontiguousarray(ctx.opac), ctx.colors, ctx.bbox, bg, W, H,
        ctx.offsets, ctx.items, ctx.t_final, np.ascontiguousarray(grad_image, dtype=np.float64),
    )
    out.visible[o] = True
    out.mean2d_norm[o] = np.hypot(d_m2[:, 0] * 0.5 * W, d_m2[:, 1] * 0.5 * H)

    # colour path
    d_sh, d_mean_col = colors_backward(scene.sh[o], ctx.dirs, ctx.norms, ctx.raw, ctx.sh_degree, d_col)
    out.sh[o] = d_sh

    # opacity
    op = ctx.opac
    out.opacity_logits[o] = d_op * op * (1.0 - op)

    # conic -> cov2d
    A, B, C = ctx.conic[:, 0], ctx.conic[:, 1], ctx.conic[:, 2]
    Q = np.stack([np.stack([A, B], 1), np.stack([B, C], 1)], 1)
    G = np.stack([np.stack([d_con[:, 0], 0.5 * d_con[:, 1]], 1), np.stack([0.5 * d_con[:, 1], d_con[:, 2]], 1)], 1)
    dcov = -Q @ G @ Q
    T = pre["T"][o]
    Sigma = pre["Sigma"][o]
    dSigma = T.transpose(0, 2, 1) @ dcov @ T
    dT = 2.0 * dcov @ T @ Sigma
    dJ = dT @ pre["W"].T

    # Sigma = M M^T, M = R diag(s)
    M = pre["M"][o]
    dM = 2.0 * dSigma @ M
    R = pre["R"][o]
    s = np.exp(scene.log_scales[o])
    out.log_scales[o] = np.sum(dM * R, axis=1) * s
    dR = dM * s[:, None, :]
    out.quats[o] = _quat_backward(pre["qn"][o], scene.quats[o], dR)

    # camera-space position through the mean and the Jacobian
    x, y, z = pre["pc"][o].T
    fx, fy = intr.fx, intr.fy
    gx = d_m2[:, 0] * fx / z - dJ[:, 0, 2] * fx / z**2
    gy = d_m2[:, 1] * fy / z - dJ[:, 1, 2] * fy / z**2
    gz = (
        -d_m2[:, 0] * fx * x / z**2
        - d_m2[:, 1] * fy * y / z**2
        - dJ[:, 0, 0] * fx / z**2
        + dJ[:, 0, 2] * 2 * fx * x / z**3
        - dJ[:, 1, 1] * fy / z**2
        + dJ[:, 1, 2] * 2 * fy * y / z**3
    )
    dpc = np.stack([gx, gy, gz], axis=1)
    out.means[o] = dpc @ pre["W"] + d_mean_col
    return out
