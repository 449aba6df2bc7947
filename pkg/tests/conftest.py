"""Shared fixtures and independent reference implementations used as oracles."""

import math
from pathlib import Path

import numpy as np
import pytest

from stringsgs.camera import PINHOLE, CameraIntrinsics, CameraPose, look_at_pose
from stringsgs.gaussians import N_SH, SH_C0, Region, SplatScene, inverse_sigmoid

FIXTURES = Path(__file__).parent / "fixtures"


def pinhole(width=16, height=16, f=20.0, camera_id=1):
    return CameraIntrinsics(camera_id, PINHOLE, width, height, f, f, width / 2.0, height / 2.0)


def identity_pose(image_id=1, name="view.png"):
    return CameraPose(image_id, np.array([1.0, 0, 0, 0]), np.zeros(3), 1, name)


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_scene(rng, n=5, depth=(2.0, 4.0), spread=0.6, log_scale=(-2.5, -1.2), opacity=(0.2, 0.8), sh_degree=3, text_frac=0.5):
    """Gaussians in front of an identity camera looking down +z."""
    z = rng.uniform(*depth, n)
    means = np.stack([rng.uniform(-spread, spread, n) * z / 3, rng.uniform(-spread, spread, n) * z / 3, z], 1)
    sh = np.zeros((n, N_SH, 3))
    sh[:, 0, :] = (rng.uniform(0.15, 0.85, (n, 3)) - 0.5) / SH_C0
    k = (sh_degree + 1) ** 2
    sh[:, 1:k, :] = rng.normal(scale=0.05, size=(n, k - 1, 3))
    return SplatScene(
        means,
        rng.uniform(*log_scale, (n, 3)),
        np.array([random_quat(rng) for _ in range(n)]),
        inverse_sigmoid(rng.uniform(*opacity, n)),
        sh,
        (rng.random(n) < text_frac).astype(np.uint8) * int(Region.TEXT),
        rng.permutation(np.arange(100, 100 + n)),
        1.0,
    )


# ---------------------------------------------------------------- oracles


def quat_matrix(q):
    """Rotation matrix from a unit quaternion (w, x, y, z), written out longhand."""
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def brute_render(scene, intr, pose, background=(0.0, 0.0, 0.0)):
    """Per-pixel loop over every splat; degree-0 colour only."""
    Rw = quat_matrix(pose.qvec)
    H, W = intr.height, intr.width
    splats = []
    for i in range(len(scene)):
        pc = Rw @ scene.means[i] + pose.tvec
        x, y, z = pc
        if z <= 0.01:
            continue
        J = np.array([[intr.fx / z, 0, -intr.fx * x / z**2], [0, intr.fy / z, -intr.fy * y / z**2]])
        R = quat_matrix(scene.quats[i])
        S = np.diag(np.exp(scene.log_scales[i]))
        Sigma = R @ S @ S @ R.T
        cov = J @ Rw @ Sigma @ Rw.T @ J.T + 0.3 * np.eye(2)
        mean = np.array([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy])
        op = 1.0 / (1.0 + math.exp(-scene.opacity_logits[i]))
        col = np.maximum(scene.sh[i, 0] * SH_C0 + 0.5, 0.0)
        splats.append((z, int(scene.ids[i]), mean, np.linalg.inv(cov), op, col))
    splats.sort(key=lambda s: (s[0], s[1]))
    img = np.zeros((H, W, 3))
    for py in range(H):
        for px in range(W):
            c = np.zeros(3)
            T = 1.0
            for _, _, mean, icov, op, col in splats:
                d = np.array([px + 0.5, py + 0.5]) - mean
                a = min(0.99, op * math.exp(-0.5 * d @ icov @ d))
                if a < 1.0 / 255.0:
                    continue
                c += col * a * T
                T *= 1 - a
            img[py, px] = c + T * np.asarray(background)
    return img


def levenshtein_reference(a, b):
    """Textbook full-table dynamic programme."""
    D = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        D[i][0] = i
    for j in range(len(b) + 1):
        D[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            D[i][j] = min(D[i - 1][j] + 1, D[i][j - 1] + 1, D[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return D[len(a)][len(b)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small synthetic scene on disk, shared by the pipeline tests."""
    from stringsgs.synth import SynthSpec, generate_scene

    spec = SynthSpec(words=("AB",), n_cameras=9, image_size=48, focal=52.0, n_points=600, seed=3)
    root = tmp_path_factory.mktemp("tiny")
    scene = generate_scene(spec, root)
    return root, spec, scene


def look(image_id, eye, target=(0, 0, 0), name=None):
    return look_at_pose(image_id, eye, target, name=name or f"v{image_id:03d}.png")


# ---------------------------------------------------------------- gradient gate


GATE_INTR = dict(width=16, height=16, f=40.0)
GATE_BG = np.array([0.1, 0.2, 0.3])


def alpha_range(scene, intr, pose):
    """Smallest and largest per-splat alpha over all pixel centres (uncapped)."""
    Rw = quat_matrix(pose.qvec)
    yy, xx = np.mgrid[: intr.height, : intr.width] + 0.5
    lo, hi = np.inf, 0.0
    for i in range(len(scene)):
        x, y, z = Rw @ scene.means[i] + pose.tvec
        J = np.array([[intr.fx / z, 0, -intr.fx * x / z**2], [0, intr.fy / z, -intr.fy * y / z**2]])
        R = quat_matrix(scene.quats[i])
        S = np.diag(np.exp(scene.log_scales[i]))
        ic = np.linalg.inv(J @ Rw @ R @ S @ S @ R.T @ Rw.T @ J.T + 0.3 * np.eye(2))
        dx = xx - (intr.fx * x / z + intr.cx)
        dy = yy - (intr.fy * y / z + intr.cy)
        a = scene.opacities[i] * np.exp(-0.5 * (ic[0, 0] * dx * dx + 2 * ic[0, 1] * dx * dy + ic[1, 1] * dy * dy))
        lo, hi = min(lo, a.min()), max(hi, a.max())
    return lo, hi


def gate_scene(rng, n=5):
    """Random 5-Gaussian scene whose alphas stay clear of the cutoff and the cap at every pixel.

    Inside that domain the image is smooth in every parameter, so central
    differences are a valid oracle.
    """
    intr = pinhole(**GATE_INTR)
    while True:
        sh = rng.normal(0, 0.2, (n, N_SH, 3))
        sh[:, 0] = rng.uniform(-0.5, 1.2, (n, 3))
        s = SplatScene(
            rng.uniform(-0.15, 0.15, (n, 3)),
            np.log(rng.uniform(0.45, 0.8, (n, 3))),
            rng.normal(size=(n, 4)),
            rng.uniform(-1.5, 0.5, n),
            sh,
            rng.integers(0, 2, n),
            rng.permutation(n),
        )
        pose = look_at_pose(1, rng.normal(0, 0.3, 3) + [0, 0, -3], [0, 0, 0])
        lo, hi = alpha_range(s, intr, pose)
        if lo > 2.0 / 255.0 and hi < 0.98:
            return s, intr, pose


def fd_check(scene, intr, pose, h=1e-4, rel=1e-3, floor=1e-6, rng=None):
    """Compare analytic gradients with central differences.

    Returns {class: (worst relative error above the floor, max absolute error, max |gradient|)}.
    """
    from stringsgs.render import render, render_backward

    rng = np.random.default_rng(0) if rng is None else rng
    G = rng.normal(size=(intr.height, intr.width, 3))

    def loss(sc):
        return float((render(sc, intr, pose, GATE_BG) * G).sum())

    grads = render_backward(scene, intr, pose, GATE_BG, G)
    worst = {}
    for name in scene.PARAMS:
        arr, an = getattr(scene, name), getattr(grads, name)
        w = e = g = 0.0
        for idx in np.ndindex(arr.shape):
            sp, sm = scene.copy(), scene.copy()
            getattr(sp, name)[idx] += h
            getattr(sm, name)[idx] -= h
            fd = (loss(sp) - loss(sm)) / (2 * h)
            err = abs(fd - an[idx])
            e, g = max(e, err), max(g, abs(fd))
            if err > floor:
                w = max(w, err / max(abs(fd), abs(an[idx])))
        worst[name] = (w, e, g)
    return worst
