"""Held-out view evaluation: SSIM, gradient sharpness, PSNR.

SSIM is single-scale on luma with an 11x11 Gaussian window (sigma 1.5,
K1 = 0.01, K2 = 0.03, dynamic range 1).  When a mask is given, any window
touching an invalid pixel is excluded from the mean.

Sharpness ("grad") is the mean 3x3 Sobel gradient magnitude on luma
scaled to [0, 255], with wrap-around borders so the score is invariant to
circular shifts of a periodic image.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.ndimage import convolve

from . import raster
from .align import luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _windows(img, size=SSIM_WINDOW):
    return np.lib.stride_tricks.sliding_window_view(img, (size, size))


def ssim(img_a, img_b, mask=None):
    """Mean SSIM over all valid 11x11 windows of the two images."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = luma(a), luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")

    win = _gaussian_window()
    wa = _windows(a)
    wb = _windows(b)
    mu_a = np.einsum("hwij,ij->hw", wa, win)
    mu_b = np.einsum("hwij,ij->hw", wb, win)
    var_a = np.einsum("hwij,ij->hw", wa * wa, win) - mu_a ** 2
    var_b = np.einsum("hwij,ij->hw", wb * wb, win) - mu_b ** 2
    cov = np.einsum("hwij,ij->hw", wa * wb, win) - mu_a * mu_b

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
             / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))

    if mask is not None:
        valid = _windows(np.asarray(mask, dtype=bool)).all(axis=(2, 3))
        if not valid.any():
            return 0.0
        return float(score[valid].mean())
    return float(score.mean())


def grad_sharpness(img):
    """Mean Sobel gradient magnitude on [0, 255] luma."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = luma(a)
    a = a * 255.0
    gx = convolve(a, SOBEL_X, mode="wrap")
    gy = convolve(a, SOBEL_X.T, mode="wrap")
    return float(np.sqrt(gx ** 2 + gy ** 2).mean())


def psnr(img_a, img_b, mask=None):
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    d2 = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if d2.ndim == m.ndim + 1:
            m = m[..., None]
        m = np.broadcast_to(m, d2.shape)
        if not m.any():
            return float("nan")
        mse = d2[m].mean()
    else:
        mse = d2.mean()
    if mse <= 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def evaluate(scene, atlas):
    """Render each eval view from the atlas and compare to ground truth.

    Returns a list of per-view dicts plus a trailing MEAN row; comparisons
    are restricted to the rendered coverage mask.
    """
    if not scene.eval_indices:
        raise ValueError("scene has no evaluation split")
    rows = []
    for fi in scene.eval_indices:
        fr = scene.frames[fi]
        buf = raster.rasterize(scene.mesh, atlas.tri_uv, atlas.texels, fr.pose, fr.intrinsics)
        rows.append({
            "view_index": fi,
            "ssim": ssim(buf.rgb, fr.rgb, mask=buf.mask),
            "grad": grad_sharpness(buf.rgb),
            "psnr": psnr(buf.rgb, fr.rgb, mask=buf.mask),
            "coverage": float(buf.mask.mean()),
        })
    mean = {"view_index": "MEAN"}
    for key in ("ssim", "grad", "psnr", "coverage"):
        mean[key] = float(np.mean([r[key] for r in rows]))
    return rows + [mean]


def write_report(rows, path):
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=["view_index", "ssim", "grad", "psnr", "coverage"])
        wr.writeheader()
        wr.writerows(rows)
