"""Shared fixtures: small synthetic scenes reused across test modules."""

import numpy as np
import pytest

from texrecon import synth
from texrecon.scene import split_views


@pytest.fixture(scope="session")
def small_scene():
    """12-view, 96x80 checker room with its ground-truth atlas (split applied)."""
    spec = synth.SynthSpec(n_views=12, width=96, height=80, tex_side=128)
    scene, gt_atlas = synth.make_scene(spec)
    return split_views(scene, 0.1), gt_atlas


@pytest.fixture(scope="session")
def room_scene():
    """20-view, 160x128 checker room used by the heavier end-to-end tests."""
    spec = synth.SynthSpec(n_views=20, width=160, height=128, tex_side=256)
    scene, gt_atlas = synth.make_scene(spec)
    return split_views(scene, 0.1), gt_atlas


def textured_image(rng, h, w):
    """Random smooth-but-textured single-channel image for registration tests."""
    img = rng.uniform(0.0, 1.0, size=(h, w))
    # a little smoothing so the phase spectrum is not pure white noise
    for axis in (0, 1):
        img = (img + np.roll(img, 1, axis=axis) + np.roll(img, -1, axis=axis)) / 3.0
    y, x = np.mgrid[0:h, 0:w]
    img += 0.5 * np.sin(2 * np.pi * x / 16.0) * np.sin(2 * np.pi * y / 12.0)
    return img
