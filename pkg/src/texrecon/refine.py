"""Adversarial texture refinement.

Alternates texture and discriminator updates on (render, ground-truth)
crop pairs from the training views.  The texture loss is
lambda * L1 + GAN generator loss, with lambda = 10 decayed by 0.8 every
960 steps; Adam with beta1 = 0.5, beta2 = 0.999; texture / discriminator
learning rates 1e-3 / 1e-4; 4000 iterations by default.

Alignment offsets are applied to the ground truth (the render stays on
the texture's uv grid so texel gradients remain exact) and are refreshed
against the current texture's render every decay period.  Views are
scheduled round-robin in capture order; crop positions come from a
seeded generator, so a fixed seed replays bit-for-bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import raster
from .align import Offset2D, align_frame, patchwise_align, shift_image

ALIGN_MODES = ("off", "global", "patchwise")
MIN_GAN_CROP = 70  # smallest input that survives the five VALID convolutions


@dataclass
class OptimConfig:
    lambda0: float = 10.0
    lambda_decay: float = 0.8
    decay_every: int = 960
    lr_texture: float = 1e-3
    lr_discriminator: float = 1e-4
    iterations: int = 4000
    crop: int = 256  # clipped to the smallest view dimension
    gan_weight: float = 1.0
    seed: int = 0
    dtype: str = "float32"  # optimization precision; tests use float64

    def __post_init__(self):
        if min(self.lambda0, self.lambda_decay, self.lr_texture,
               self.lr_discriminator, self.decay_every, self.crop) <= 0:
            raise ValueError("config values must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class TrainStepRecord:
    step: int
    lam: float
    l1_value: float
    d_loss: float
    g_loss: float
    view_index: int
    offset_dx: float
    offset_dy: float
    skipped: bool = False


def lambda_at(step, cfg):
    """L1 weight at a step: lambda0 * decay^(step // decay_every)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return cfg.lambda0 * cfg.lambda_decay ** (step // cfg.decay_every)


def sample_texture_diff(texels, uv_points):
    """Differentiable bilinear texture lookup at (N, 2) uv in [0, 1]^2."""
    h, w = texels.shape[:2]
    xy = np.asarray(uv_points, dtype=np.float64) * np.array([w, h]) - 0.5
    return ad.bilinear_sample(texels, xy)


@dataclass
class ViewCache:
    """Per-view geometry, rasterized once (poses never change here)."""

    frame_index: int
    mask: np.ndarray  # (H, W)
    uv: np.ndarray  # (H, W, 2) texture uv for covered pixels
    depth: np.ndarray
    tri_id: np.ndarray
    bary: np.ndarray


def build_view_cache(scene, atlas, frame_index):
    fr = scene.frames[frame_index]
    buf = raster.rasterize_ids(scene.mesh, fr.pose, fr.intrinsics)
    uv = np.zeros(buf.mask.shape + (2,))
    if buf.mask.any():
        tid = buf.tri_id[buf.mask]
        uv[buf.mask] = np.einsum("nk,nkd->nd", buf.bary[buf.mask], atlas.tri_uv[tid])
    return ViewCache(frame_index=frame_index, mask=buf.mask, uv=uv,
                     depth=buf.depth, tri_id=buf.tri_id, bary=buf.bary)


def render_from_cache(texels_values, cache):
    """Non-differentiable full-view render used for alignment refreshes."""
    h, w = cache.mask.shape
    rgb = np.zeros((h, w, 3))
    if cache.mask.any():
        rgb[cache.mask] = np.clip(
            raster.sample_bilinear(texels_values, cache.uv[cache.mask]), 0.0, 1.0)
    return raster.RenderBuffers(rgb=rgb, depth=cache.depth, mask=cache.mask,
                                tri_id=cache.tri_id, bary=cache.bary)


def _offset_for_crop(entry, x0, y0, crop, shape):
    if isinstance(entry, Offset2D):
        return entry
    # patch grid: report the offset of the patch containing the crop center
    rows, cols = entry.shape
    ph, pw = shape[0] // rows, shape[1] // cols
    r = min((y0 + crop // 2) // ph, rows - 1)
    c = min((x0 + crop // 2) // pw, cols - 1)
    return entry[r, c]


def _shifted_gt(rgb, entry):
    """Warp ground truth by one global offset or patch-by-patch.

    Patchwise warping shifts each patch region by its own estimate, so
    disagreeing patches leave discontinuities at their borders.
    """
    if isinstance(entry, Offset2D):
        return shift_image(rgb, entry.dx, entry.dy)
    rows, cols = entry.shape
    h, w = rgb.shape[:2]
    ph, pw = h // rows, w // cols
    out = np.empty_like(rgb)
    shifted = {}
    for r in range(rows):
        y1 = h if r == rows - 1 else (r + 1) * ph
        for c in range(cols):
            x1 = w if c == cols - 1 else (c + 1) * pw
            off = entry[r, c]
            key = (off.dx, off.dy)
            if key not in shifted:
                shifted[key] = shift_image(rgb, off.dx, off.dy)
            out[r * ph:y1, c * pw:x1] = shifted[key][r * ph:y1, c * pw:x1]
    return out


def advoptim_step(texture, disc, scene, cache, offset, step, cfg, tex_opt, disc_opt, rng):
    """One alternating update; returns a TrainStepRecord."""
    fr = scene.frames[cache.frame_index]
    h, w = cache.mask.shape
    crop = min(cfg.crop, h, w)
    lam = lambda_at(step, cfg)

    x0 = int(rng.integers(0, w - crop + 1))
    y0 = int(rng.integers(0, h - crop + 1))
    off = _offset_for_crop(offset, x0, y0, crop, (h, w))
    window = (slice(y0, y0 + crop), slice(x0, x0 + crop))
    mask_c = cache.mask[window]
    if not mask_c.any():
        return TrainStepRecord(step=step, lam=lam, l1_value=float("nan"),
                               d_loss=float("nan"), g_loss=float("nan"),
                               view_index=cache.frame_index,
                               offset_dx=off.dx, offset_dy=off.dy, skipped=True)

    dtype = cfg.np_dtype
    gt_full = _shifted_gt(fr.rgb, offset)
    gt_c = gt_full[window].astype(dtype)
    gt_c = gt_c * mask_c[..., None]

    ys, xs = np.nonzero(mask_c)
    uv_pts = cache.uv[window][ys, xs]

    def render_crop(diff):
        tex = texture if diff else ad.constant(texture.values)
        colors = sample_texture_diff(tex, uv_pts)
        img = ad.scatter_to_image(colors, ys, xs, (crop, crop, 3))
        return img

    def nchw(t):
        v = t.values if isinstance(t, ad.DiffTensor) else t
        out = np.ascontiguousarray(np.transpose(v, (2, 0, 1))[None].astype(dtype))
        return out

    gt_t = ad.constant(nchw(gt_c))
    use_gan = cfg.gan_weight > 0 and crop >= MIN_GAN_CROP

    d_loss_val = float("nan")
    g_loss_val = float("nan")
    if use_gan:
        # discriminator update: real pair (gt, gt), fake pair (render, gt),
        # run as one N = 2 batch through the shared conv stack
        disc.set_requires_grad(True)
        render_const = ad.constant(nchw(render_crop(diff=False)))
        pairs = ad.stack_batch(ad.concat_channels(gt_t, gt_t),
                               ad.concat_channels(render_const, gt_t))
        scores = disc.forward(pairs)
        d_loss = ad.gan_d_loss(ad.batch_item(scores, 0), ad.batch_item(scores, 1))
        ad.backward(d_loss)
        disc_opt.step()
        disc_opt.zero_grad()
        d_loss_val = float(d_loss.values)

    # texture update on lambda * L1 + GAN generator loss
    render = render_crop(diff=True)
    render_img = ad.DiffTensor(nchw(render), parents=(render,),
                               backward_fn=lambda g: render._accumulate(
                                   np.transpose(g[0], (1, 2, 0))))
    l1 = ad.l1_loss(render_img, gt_t, mask=mask_c[None, None, :, :])
    loss = ad.scale(l1, lam)
    if use_gan:
        disc.set_requires_grad(False)
        fake_scores = disc.forward(ad.concat_channels(render_img, gt_t))
        g_loss = ad.gan_g_loss(fake_scores)
        g_loss_val = float(g_loss.values)
        loss = ad.add(loss, ad.scale(g_loss, cfg.gan_weight))
    ad.backward(loss)
    tex_opt.step()
    tex_opt.zero_grad()
    np.clip(texture.values, 0.0, 1.0, out=texture.values)

    return TrainStepRecord(step=step, lam=lam, l1_value=float(l1.values),
                           d_loss=d_loss_val, g_loss=g_loss_val,
                           view_index=cache.frame_index,
                           offset_dx=off.dx, offset_dy=off.dy)


def compute_offsets(scene, caches, texels_values, mode):
    """Per-view alignment offsets against renders of the current texture."""
    offsets = []
    for cache in caches:
        fr = scene.frames[cache.frame_index]
        if mode == "off":
            offsets.append(Offset2D(0.0, 0.0, 1.0))
            continue
        render = render_from_cache(texels_values, cache)
        if mode == "global":
            offsets.append(align_frame(fr, render))
        else:
            offsets.append(patchwise_align(fr, render))
    return offsets


def run_texsmooth(scene, t_init, cfg=None, alignment_mode="global", disc_seed=0):
    """Refine a baked texture; returns (refined atlas, step records)."""
    if alignment_mode not in ALIGN_MODES:
        raise ValueError(f"alignment_mode must be one of {ALIGN_MODES}")
    if not scene.train_indices:
        raise ValueError("scene has an empty train split")
    cfg = cfg or OptimConfig()
    dtype = cfg.np_dtype

    caches = [build_view_cache(scene, t_init, fi) for fi in scene.train_indices]
    texture = ad.parameter(t_init.texels.astype(dtype))
    disc = ad.Discriminator(seed=disc_seed, dtype=dtype)
    tex_opt = ad.Adam([texture], lr=cfg.lr_texture)
    disc_opt = ad.Adam(disc.params(), lr=cfg.lr_discriminator)
    rng = np.random.default_rng(cfg.seed)

    offsets = None
    records = []
    # per-op finite checks are for debugging / float64 test runs; in the hot
    # loop the texture itself is guarded at every alignment refresh instead
    check_finite_prev = ad.CHECK_FINITE
    ad.CHECK_FINITE = False
    try:
        for step in range(cfg.iterations):
            if step % cfg.decay_every == 0:
                if not np.all(np.isfinite(texture.values)):
                    raise FloatingPointError("non-finite texels during refinement")
                offsets = compute_offsets(scene, caches, texture.values, alignment_mode)
            vi = step % len(caches)
            rec = advoptim_step(texture, disc, scene, caches[vi], offsets[vi], step,
                                cfg, tex_opt, disc_opt, rng)
            records.append(rec)
    finally:
        ad.CHECK_FINITE = check_finite_prev
    if not np.all(np.isfinite(texture.values)):
        raise FloatingPointError("non-finite texels after refinement")

    refined = replace(t_init, texels=np.clip(texture.values.astype(np.float64), 0.0, 1.0))
    return refined, records


def write_log(records, path):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "lambda", "l1", "d_loss", "g_loss", "view_index",
                     "offset_dx", "offset_dy", "skipped"])
        for r in records:
            wr.writerow([r.step, r.lam, r.l1_value, r.d_loss, r.g_loss,
                         r.view_index, r.offset_dx, r.offset_dy, int(r.skipped)])
