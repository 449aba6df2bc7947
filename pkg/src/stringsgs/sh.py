"""Real spherical-harmonics colour evaluation (degrees 0..3) and its derivatives."""

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_basis(dirs: np.ndarray, degree: int, with_grad: bool = False):
    """Basis values (N, 16) for unit directions (N, 3); optionally d basis / d dir (N, 16, 3).

    Coefficients above ``degree`` get a zero basis so inactive bands neither
    contribute nor receive gradient.
    """
    n = len(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    B = np.zeros((n, 16))
    G = np.zeros((n, 16, 3)) if with_grad else None
    B[:, 0] = C0
    if degree >= 1:
        B[:, 1] = -C1 * y
        B[:, 2] = C1 * z
        B[:, 3] = -C1 * x
        if with_grad:
            G[:, 1, 1] = -C1
            G[:, 2, 2] = C1
            G[:, 3, 0] = -C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        B[:, 4] = C2[0] * x * y
        B[:, 5] = C2[1] * y * z
        B[:, 6] = C2[2] * (2 * zz - xx - yy)
        B[:, 7] = C2[3] * x * z
        B[:, 8] = C2[4] * (xx - yy)
        if with_grad:
            G[:, 4] = np.stack([C2[0] * y, C2[0] * x, 0 * x], 1)
            G[:, 5] = np.stack([0 * x, C2[1] * z, C2[1] * y], 1)
            G[:, 6] = np.stack([-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z], 1)
            G[:, 7] = np.stack([C2[3] * z, 0 * x, C2[3] * x], 1)
            G[:, 8] = np.stack([2 * C2[4] * x, -2 * C2[4] * y, 0 * x], 1)
    if degree >= 3:
        B[:, 9] = C3[0] * y * (3 * xx - yy)
        B[:, 10] = C3[1] * x * y * z
        B[:, 11] = C3[2] * y * (4 * zz - xx - yy)
        B[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        B[:, 13] = C3[4] * x * (4 * zz - xx - yy)
        B[:, 14] = C3[5] * z * (xx - yy)
        B[:, 15] = C3[6] * x * (xx - 3 * yy)
        if with_grad:
            G[:, 9] = np.stack([6 * C3[0] * x * y, C3[0] * (3 * xx - 3 * yy), 0 * x], 1)
            G[:, 10] = np.stack([C3[1] * y * z, C3[1] * x * z, C3[1] * x * y], 1)
            G[:, 11] = np.stack([-2 * C3[2] * x * y, C3[2] * (4 * zz - xx - 3 * yy), 8 * C3[2] * y * z], 1)
            G[:, 12] = np.stack([-6 * C3[3] * x * z, -6 * C3[3] * y * z, C3[3] * (6 * zz - 3 * xx - 3 * yy)], 1)
            G[:, 13] = np.stack([C3[4] * (4 * zz - 3 * xx - yy), -2 * C3[4] * x * y, 8 * C3[4] * x * z], 1)
            G[:, 14] = np.stack([2 * C3[5] * x * z, -2 * C3[5] * y * z, C3[5] * (xx - yy)], 1)
            G[:, 15] = np.stack([C3[6] * (3 * xx - 3 * yy), -6 * C3[6] * x * y, 0 * x], 1)
    return (B, G) if with_grad else B


def eval_colors(sh: np.ndarray, means: np.ndarray, cam_center: np.ndarray, degree: int):
    """RGB per Gaussian seen from ``cam_center``; returns (colors, raw, dirs, norms)."""
    d = means - cam_center
    norm = np.linalg.norm(d, axis=1)
    dirs = d / np.maximum(norm, 1e-12)[:, None]
    B = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", B, sh) + 0.5
    return np.maximum(raw, 0.0), raw, dirs, norm


def colors_backward(sh, dirs, norm, raw, degree: int, dL_dcolor: np.ndarray):
    """Gradients of the clamped colour w.r.t. SH coefficients and Gaussian means."""
    g = np.where(raw > 0.0, dL_dcolor, 0.0)
    B, G = sh_basis(dirs, degree, with_grad=True)
    dL_dsh = B[:, :, None] * g[:, None, :]
    if degree == 0:
        return dL_dsh, np.zeros_like(dirs)
    # d colour / d dir, contracted with upstream
    w = np.einsum("nc,nkc->nk", g, sh)
    dL_ddir = np.einsum("nk,nkj->nj", w, G)
    # through dir = d / |d|
    proj = np.einsum("nj,nj->n", dL_ddir, dirs)
    dL_dmean = (dL_ddir - dirs * proj[:, None]) / np.maximum(norm, 1e-12)[:, None]
    return dL_dsh, dL_dmean
