"""FFT phase-correlation alignment.

Registers ground-truth frames against renders of the current texture,
producing per-frame 2D translations for the refinement stage.  The model
is translation-only; offsets use the centered wrap-around convention so
|dx| <= W/2 and |dy| <= H/2.

Convention: `phase_correlate(a, b)` returns the shift to apply to `b`
(content moving by (dx, dy) with wrap-around) so it best matches `a`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])
MIN_COVERAGE = 0.05


@dataclass
class Offset2D:
    dx: float
    dy: float
    peak_confidence: float

    def as_int(self):
        return int(round(self.dx)), int(round(self.dy))


def luma(rgb):
    return np.asarray(rgb) @ LUMA


def _hann2d(h, w):
    return np.outer(np.hanning(h), np.hanning(w))


def _centered(idx, n):
    return idx - n if idx > n // 2 else idx


def phase_correlate(img_a, img_b, mask=None, subpixel=False):
    """Translation between two equal-size luma images via phase correlation.

    Masked-out pixels are replaced by the image mean, both images are Hann
    windowed, and the peak of the inverse FFT of the normalized cross-power
    spectrum gives the offset.  All-constant input yields (0, 0) with zero
    confidence.
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape
    if h < 8 or w < 8:
        raise ValueError(f"images must be at least 8x8, got {h}x{w}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.any():
            a = np.where(mask, a, a[mask].mean())
            b = np.where(mask, b, b[mask].mean())
    win = _hann2d(h, w)
    fa = np.fft.fft2((a - a.mean()) * win)
    fb = np.fft.fft2((b - b.mean()) * win)
    cross = fa * np.conj(fb)
    mag = np.abs(cross)
    if mag.max() < 1e-12:
        return Offset2D(0.0, 0.0, 0.0)
    corr = np.real(np.fft.ifft2(cross / np.maximum(mag, 1e-12)))
    py, px = np.unravel_index(np.argmax(corr), corr.shape)
    peak = corr[py, px]
    total = np.abs(corr).sum()
    conf = float(np.clip(peak / total, 0.0, 1.0)) if total > 0 else 0.0

    dx, dy = float(_centered(px, w)), float(_centered(py, h))
    if subpixel:
        dx += _parabolic(corr[py, (px - 1) % w], peak, corr[py, (px + 1) % w])
        dy += _parabolic(corr[(py - 1) % h, px], peak, corr[(py + 1) % h, px])
    return Offset2D(dx=dx, dy=dy, peak_confidence=conf)


def _parabolic(left, center, right):
    den = left - 2.0 * center + right
    if abs(den) < 1e-12:
        return 0.0
    return float(np.clip(0.5 * (left - right) / den, -0.5, 0.5))


def shift_image(img, dx, dy):
    """Circular shift moving content by (dx, dy) pixels (x right, y down)."""
    return np.roll(np.roll(img, int(round(dy)), axis=0), int(round(dx)), axis=1)


def align_frame(gt_frame, render, subpixel=False):
    """Offset to apply to the ground-truth frame so it matches the render.

    Uses the render's coverage mask; if fewer than 5% of pixels are
    covered, the view is unusable and (0, 0) with zero confidence is
    returned.
    """
    if render.mask.mean() < MIN_COVERAGE:
        return Offset2D(0.0, 0.0, 0.0)
    return phase_correlate(luma(render.rgb), luma(gt_frame.rgb),
                           mask=render.mask, subpixel=subpixel)


def patchwise_align(gt_frame, render, patch=None, subpixel=False):
    """Independent phase correlation per non-overlapping square patch.

    Returns a 2D object array of Offset2D, one per full patch (partial
    border patches are dropped).  Ablation-only: a patch sees no global
    content, which is why this mode underperforms global alignment.
    """
    gl = luma(gt_frame.rgb)
    rl = luma(render.rgb)
    h, w = gl.shape
    if patch is None:
        patch = max(8, h // 4)
    if patch < 8:
        raise ValueError(f"patch side must be >= 8, got {patch}")
    rows, cols = h // patch, w // patch
    if rows < 1 or cols < 1:
        raise ValueError(f"patch {patch} larger than image {h}x{w}")
    grid = np.empty((rows, cols), dtype=object)
    for r in range(rows):
        for c in range(cols):
            sl = (slice(r * patch, (r + 1) * patch), slice(c * patch, (c + 1) * patch))
            grid[r, c] = phase_correlate(rl[sl], gl[sl], mask=render.mask[sl],
                                         subpixel=subpixel)
    return grid


def sad(img_a, img_b, mask=None):
    """Sum of absolute differences, optionally restricted to a mask."""
    d = np.abs(np.asarray(img_a, dtype=np.float64) - np.asarray(img_b, dtype=np.float64))
    if mask is not None:
        if d.ndim == 3:
            d = d * mask[..., None]
        else:
            d = d * mask
    return float(d.sum())
