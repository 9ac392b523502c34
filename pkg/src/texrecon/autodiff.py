"""Minimal reverse-mode autodiff over dense numpy arrays.

Just enough machinery for the refinement stage: 2D convolution, leaky
ReLU, sigmoid, bilinear texture sampling, L1 and GAN losses, and Adam.
Graphs are built eagerly; `backward(loss)` topologically sorts the tape
and visits each node exactly once.  Everything is single-threaded and
deterministic.

Tests run in float64 (finite-difference checks need the headroom);
production optimization may run in float32 via the dtype argument on the
entry points.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

SCORE_EPS = 1e-7  # clamp for log arguments in GAN losses
CHECK_FINITE = True


class DiffTensor:
    """Dense value array plus gradient accumulator and tape linkage."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None):
        self.values = np.asarray(values)
        if CHECK_FINITE and not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite values entered the graph")
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        # gradients are kept in the tensor's own precision; the stored array
        # is never mutated in place, so aliasing an incoming buffer is safe
        if self.grad is None:
            self.grad = g if g.dtype == self.values.dtype else g.astype(self.values.dtype)
        else:
            self.grad = self.grad + g


def constant(values):
    return DiffTensor(values)


def parameter(values):
    return DiffTensor(np.array(values, copy=True), requires_grad=True)


def backward(loss):
    """Backpropagate from a scalar loss through the tape."""
    if loss.values.size != 1:
        raise ValueError("backward expects a scalar loss")
    order = []
    seen = set()

    def visit(node):
        if id(node) in seen:
            return
        seen.add(id(node))
        for p in node._parents:
            visit(p)
        order.append(node)

    visit(loss)
    loss._accumulate(np.ones_like(loss.values))
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# ops


@dataclass
class ConvLayer:
    """4x4 VALID convolution layer (cross-correlation semantics)."""

    in_channels: int
    out_channels: int
    stride: int
    weight: DiffTensor = field(default=None)  # (O, C, 4, 4)
    bias: DiffTensor = field(default=None)  # (O,)
    KERNEL = 4

    def init(self, rng, dtype=np.float64):
        bound = 1.0 / np.sqrt(self.in_channels * self.KERNEL * self.KERNEL)
        w = rng.uniform(-bound, bound,
                        size=(self.out_channels, self.in_channels, self.KERNEL, self.KERNEL))
        self.weight = parameter(w.astype(dtype))
        self.bias = parameter(np.zeros(self.out_channels, dtype=dtype))
        return self

    def params(self):
        return [self.weight, self.bias]


def conv2d(x, layer):
    """x: (N, C, H, W) -> (N, O, Ho, Wo) with Ho = (H - 4)//stride + 1."""
    k, s = ConvLayer.KERNEL, layer.stride
    n, c, h, w = x.shape
    if c != layer.in_channels:
        raise ValueError(f"expected {layer.in_channels} channels, got {c}")
    if h < k or w < k:
        raise ValueError(f"spatial dims {h}x{w} smaller than kernel {k}")
    ho, wo = (h - k) // s + 1, (w - k) // s + 1

    win = np.lib.stride_tricks.sliding_window_view(x.values, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]  # (N, C, Ho, Wo, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    wmat = layer.weight.values.reshape(layer.out_channels, c * k * k)
    out = cols @ wmat.T + layer.bias.values
    out = out.reshape(n, ho, wo, layer.out_channels).transpose(0, 3, 1, 2)

    def bwd(grad):
        o = layer.out_channels
        if layer.weight.requires_grad or layer.bias.requires_grad:
            g = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(-1, o)
            if layer.weight.requires_grad:
                layer.weight._accumulate((g.T @ cols).reshape(layer.weight.shape))
            if layer.bias.requires_grad:
                layer.bias._accumulate(g.sum(axis=0))
        if x.requires_grad:
            # columns of gT follow (batch, row, col) order to match gct below
            if n == 1:
                gT = grad.reshape(o, ho * wo)
            else:
                gT = np.ascontiguousarray(grad.transpose(1, 0, 2, 3)).reshape(o, -1)
            gct = (wmat.T @ gT).reshape(c, k, k, n, ho, wo)
            gx = np.zeros(x.shape, dtype=x.values.dtype)
            if s == 1:
                for ki in range(k):
                    for kj in range(k):
                        gx[:, :, ki:ki + ho, kj:kj + wo] += gct[:, ki, kj].transpose(1, 0, 2, 3)
            else:
                # accumulate per stride phase so the additions hit contiguous
                # rows, then interleave the phases back into gx
                for pi in range(s):
                    hp = (h - pi + s - 1) // s
                    for pj in range(s):
                        wp = (w - pj + s - 1) // s
                        buf = np.zeros((n, c, hp, wp), dtype=gx.dtype)
                        for ki in range(pi, k, s):
                            r0 = ki // s
                            for kj in range(pj, k, s):
                                c0 = kj // s
                                buf[:, :, r0:r0 + ho, c0:c0 + wo] += \
                                    gct[:, ki, kj].transpose(1, 0, 2, 3)
                        gx[:, :, pi::s, pj::s] = buf
            x._accumulate(gx)

    return DiffTensor(out, parents=(x, layer.weight, layer.bias), backward_fn=bwd)


def leaky_relu(x, slope=0.2):
    dt = x.values.dtype.type
    factor = np.where(x.values >= 0, dt(1.0), dt(slope))
    out = x.values * factor

    def bwd(grad):
        if x.requires_grad:
            x._accumulate(grad * factor)

    return DiffTensor(out, parents=(x,), backward_fn=bwd)


def sigmoid(x):
    # evaluated in the numerically stable half to avoid exp overflow
    v = x.values
    pos = v >= 0
    e = np.exp(np.where(pos, -v, v))
    out = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(grad):
        if x.requires_grad:
            x._accumulate(grad * out * (1.0 - out))

    return DiffTensor(out, parents=(x,), backward_fn=bwd)


def add(a, b):
    out = a.values + b.values

    def bwd(grad):
        if a.requires_grad:
            a._accumulate(grad)
        if b.requires_grad:
            b._accumulate(grad)

    return DiffTensor(out, parents=(a, b), backward_fn=bwd)


def scale(x, c):
    out = x.values * c

    def bwd(grad):
        if x.requires_grad:
            x._accumulate(grad * c)

    return DiffTensor(out, parents=(x,), backward_fn=bwd)


def concat_channels(a, b):
    """Concatenate two NCHW tensors along the channel axis."""
    ca = a.shape[1]
    out = np.concatenate([a.values, b.values], axis=1)

    def bwd(grad):
        if a.requires_grad:
            a._accumulate(grad[:, :ca])
        if b.requires_grad:
            b._accumulate(grad[:, ca:])

    return DiffTensor(out, parents=(a, b), backward_fn=bwd)


def stack_batch(a, b):
    """Stack two (1, C, H, W) tensors into an N = 2 batch."""
    out = np.concatenate([a.values, b.values], axis=0)

    def bwd(grad):
        if a.requires_grad:
            a._accumulate(grad[:1])
        if b.requires_grad:
            b._accumulate(grad[1:])

    return DiffTensor(out, parents=(a, b), backward_fn=bwd)


def batch_item(x, index):
    """Select one item of a batch as a (1, ...) tensor."""
    out = x.values[index:index + 1]

    def bwd(grad):
        if x.requires_grad:
            g = np.zeros_like(x.values)
            g[index:index + 1] = grad
            x._accumulate(g)

    return DiffTensor(out, parents=(x,), backward_fn=bwd)


def l1_loss(a, b, mask=None):
    """Mean absolute difference, optionally over a boolean mask."""
    diff = a.values - b.values
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), diff.shape)
        n = max(int(m.sum()), 1)
        sign = np.where(m, np.sign(diff), 0.0)
        val = np.abs(diff[m]).sum() / n
    else:
        n = diff.size
        sign = np.sign(diff)
        val = np.abs(diff).mean()

    def bwd(grad):
        g = grad * sign / n
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return DiffTensor(val, parents=(a, b), backward_fn=bwd)


def _clamped_log_mean(x, flip):
    """mean(log(s)) with s = x or 1-x, scores clamped into (0, 1)."""
    s = 1.0 - x.values if flip else x.values
    sc = np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)
    val = np.log(sc).mean()
    inside = (s > SCORE_EPS) & (s < 1.0 - SCORE_EPS)

    def bwd(grad):
        if x.requires_grad:
            g = grad * np.where(inside, 1.0 / sc, 0.0) / s.size
            x._accumulate(-g if flip else g)

    return DiffTensor(val, parents=(x,), backward_fn=bwd)


def gan_d_loss(real_scores, fake_scores):
    """-mean log D(real) - mean log(1 - D(fake))."""
    lr = _clamped_log_mean(real_scores, flip=False)
    lf = _clamped_log_mean(fake_scores, flip=True)
    return scale(add(lr, lf), -1.0)


def gan_g_loss(fake_scores):
    """-mean log D(fake)."""
    return scale(_clamped_log_mean(fake_scores, flip=False), -1.0)


def bilinear_sample(texture, xy):
    """Differentiable bilinear lookup.

    texture: (H, W, C) DiffTensor; xy: (N, 2) float array in texel-center
    coordinates (texel (i, j) is at x = i, y = j).  Gradients distribute to
    the four neighbor texels by their bilinear weights.
    """
    h, w = texture.shape[:2]
    x = np.clip(xy[:, 0], 0.0, w - 1.0)
    y = np.clip(xy[:, 1], 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (x - x0)[:, None], (y - y0)[:, None]
    t = texture.values
    out = ((1 - fy) * ((1 - fx) * t[y0, x0] + fx * t[y0, x1])
           + fy * ((1 - fx) * t[y1, x0] + fx * t[y1, x1]))

    def bwd(grad):
        if texture.requires_grad:
            gt = np.zeros(texture.shape, dtype=texture.values.dtype)
            np.add.at(gt, (y0, x0), grad * (1 - fy) * (1 - fx))
            np.add.at(gt, (y0, x1), grad * (1 - fy) * fx)
            np.add.at(gt, (y1, x0), grad * fy * (1 - fx))
            np.add.at(gt, (y1, x1), grad * fy * fx)
            texture._accumulate(gt)

    return DiffTensor(out, parents=(texture,), backward_fn=bwd)


def scatter_to_image(colors, ys, xs, shape):
    """Place (N, C) colors at pixel coordinates into a zero (H, W, C) image."""
    out = np.zeros(shape, dtype=colors.values.dtype)
    out[ys, xs] = colors.values

    def bwd(grad):
        if colors.requires_grad:
            colors._accumulate(grad[ys, xs])

    return DiffTensor(out, parents=(colors,), backward_fn=bwd)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, values):
        return cls(m=np.zeros_like(values), v=np.zeros_like(values))


def adam_step(values, grad, state, lr, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; mutates and returns (values, state)."""
    state.step += 1
    state.m *= beta1
    state.m += (1 - beta1) * grad
    state.v *= beta2
    state.v += (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1 ** state.step)
    v_hat = state.v / (1 - beta2 ** state.step)
    np.sqrt(v_hat, out=v_hat)
    v_hat += eps
    m_hat /= v_hat
    m_hat *= lr
    values -= m_hat if m_hat.dtype == values.dtype else m_hat.astype(values.dtype)
    return values, state


class Adam:
    """Adam over a list of DiffTensor parameters."""

    def __init__(self, params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = [AdamState.like(p.values) for p in self.params]

    def step(self):
        for p, st in zip(self.params, self.state):
            if p.grad is None:
                continue
            adam_step(p.values, p.grad, st, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# discriminator

DISCRIMINATOR_STACK = ((6, 64, 2), (64, 128, 2), (128, 128, 2), (128, 128, 1), (128, 1, 1))


class Discriminator:
    """Five 4x4 VALID conv layers; leaky ReLU between, sigmoid on top.

    Input is a 6-channel pair: the rendered crop and the ground-truth crop
    concatenated along channels.  Output values are strictly in (0, 1).
    """

    def __init__(self, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.layers = [ConvLayer(i, o, s).init(rng, dtype)
                       for (i, o, s) in DISCRIMINATOR_STACK]

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = leaky_relu(conv2d(x, layer))
        return sigmoid(conv2d(x, self.layers[-1]))

    def set_requires_grad(self, flag):
        for p in self.params():
            p.requires_grad = flag

    def save(self, blob_path, manifest_path):
        """Flat little-endian float64 blob plus a JSON shape manifest."""
        names, shapes, chunks = [], [], []
        for li, layer in enumerate(self.layers):
            for name, p in (("weight", layer.weight), ("bias", layer.bias)):
                names.append(f"layer{li}.{name}")
                shapes.append(list(p.shape))
                chunks.append(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
        with open(blob_path, "wb") as f:
            f.write(b"".join(chunks))
        with open(manifest_path, "w") as f:
            json.dump({"params": [{"name": n, "shape": s} for n, s in zip(names, shapes)]}, f)

    def load(self, blob_path, manifest_path):
        with open(manifest_path) as f:
            manifest = json.load(f)
        raw = np.fromfile(blob_path, dtype="<f8")
        offset = 0
        flat = {}
        for rec in manifest["params"]:
            size = int(np.prod(rec["shape"]))
            flat[rec["name"]] = raw[offset:offset + size].reshape(rec["shape"])
            offset += size
        for li, layer in enumerate(self.layers):
            layer.weight.values[...] = flat[f"layer{li}.weight"]
            layer.bias.values[...] = flat[f"layer{li}.bias"]
        return self
