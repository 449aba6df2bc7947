"""Image similarity metrics: PSNR and a differentiable SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
C1 = K1**2
C2 = K2**2


def _gauss_1d(size=WINDOW, sigma=SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


_G1 = _gauss_1d()


def _blur(x: np.ndarray) -> np.ndarray:
    # zero-padded 'same' filtering over the two spatial axes; self-adjoint
    y = correlate1d(x, _G1, axis=0, mode="constant", cval=0.0)
    return correlate1d(y, _G1, axis=1, mode="constant", cval=0.0)


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def ssim(a: np.ndarray, b: np.ndarray, with_grad: bool = False):
    """Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5).

    With ``with_grad`` returns ``(value, d value / d a)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a, b)
    # one filtering pass over all five moment maps stacked on a trailing axis
    mom = _blur(np.stack([a, b, a * a, b * b, a * b], axis=-1))
    mu_a, mu_b, e_aa, e_bb, e_ab = (mom[..., i] for i in range(5))
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    num1 = 2 * mu_a * mu_b + C1
    num2 = 2 * cov + C2
    den1 = mu_a**2 + mu_b**2 + C1
    den2 = var_a + var_b + C2
    smap = num1 * num2 / (den1 * den2)
    value = float(smap.mean())
    if not with_grad:
        return value
    n = smap.size
    # S as a function of (mu_a, e_aa, e_ab); chain rule through the blur
    dS_dmu_a = (2 * mu_b * num2 + num1 * 2 * (-mu_b)) / (den1 * den2) - smap * (
        2 * mu_a / den1 + (-2 * mu_a) / den2
    )
    dS_deaa = -smap / den2
    dS_deab = 2 * num1 / (den1 * den2)
    back = _blur(np.stack([dS_dmu_a, dS_deaa, dS_deab], axis=-1))
    grad = (back[..., 0] + 2 * a * back[..., 1] + b * back[..., 2]) / n
    return value, grad


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for unit dynamic range; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
