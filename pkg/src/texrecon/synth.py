"""Synthetic scenes with known ground truth.

Builds an inward-facing textured box room, places cameras on an interior
orbit, and renders the "captured" RGBD frames directly from the
ground-truth texture with exact depth.  Because the ground-truth atlas
and the per-frame shifts are known, these scenes serve as oracles for
baking quality, alignment recovery and end-to-end metrics.

Misalignment injection uses circular shifts so the wrap-around model of
phase correlation is exact in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import zoom

from . import raster
from .atlas import assign_planes, detect_overlaps, pack_atlas
from .scene import CameraPose, Frame, Intrinsics, Mesh, Scene, matrix_to_euler


@dataclass
class SynthSpec:
    room: tuple = (3.0, 3.0, 2.4)  # meters
    texture: str = "checker"  # checker | noise
    n_views: int = 20
    orbit_radius: float = 0.7
    face_divisions: int = 4
    width: int = 160
    height: int = 128
    tex_side: int = 256
    seed: int = 0


def box_room_mesh(dims, divisions=1):
    """Axis-aligned box with inward-facing triangles (viewed from inside).

    Each face is an n x n grid of quads (two triangles each); hard
    per-triangle frame assignment needs triangles small enough that a
    single view can cover one, so the synthetic room defaults to a
    tessellated box.
    """
    hx, hy, hz = np.asarray(dims, dtype=np.float64) / 2.0
    n = max(int(divisions), 1)
    # face = (corner, edge1, edge2, inward normal)
    faces = [
        ((-hx, -hy, -hz), (0, 2 * hy, 0), (0, 0, 2 * hz), (1.0, 0, 0)),
        ((hx, -hy, -hz), (0, 2 * hy, 0), (0, 0, 2 * hz), (-1.0, 0, 0)),
        ((-hx, -hy, -hz), (2 * hx, 0, 0), (0, 0, 2 * hz), (0, 1.0, 0)),
        ((-hx, hy, -hz), (2 * hx, 0, 0), (0, 0, 2 * hz), (0, -1.0, 0)),
        ((-hx, -hy, -hz), (2 * hx, 0, 0), (0, 2 * hy, 0), (0, 0, 1.0)),  # floor
        ((-hx, -hy, hz), (2 * hx, 0, 0), (0, 2 * hy, 0), (0, 0, -1.0)),  # ceiling
    ]
    verts, tris = [], []
    for corner, e1, e2, inward in faces:
        corner, e1, e2 = map(np.asarray, (corner, e1, e2))
        base = len(verts)
        for i in range(n + 1):
            for j in range(n + 1):
                verts.append(corner + e1 * (i / n) + e2 * (j / n))
        for i in range(n):
            for j in range(n):
                a = base + i * (n + 1) + j
                b, c, d = a + (n + 1), a + (n + 1) + 1, a + 1
                for tri in ((a, b, c), (a, c, d)):
                    p = [verts[v] for v in tri]
                    nv = np.cross(p[1] - p[0], p[2] - p[0])
                    tris.append(tri if np.dot(nv, inward) > 0 else tri[::-1])
    mesh = Mesh(vertices=np.array(verts), triangles=np.array(tris))
    mesh.validate()
    return mesh


def look_at_pose(eye, target, world_up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose with +z forward and +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(world_up, dtype=np.float64))
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight up/down; pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
    else:
        right /= nr
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    if np.linalg.det(rot) < 0:
        rot[:, 0] = -rot[:, 0]
    return CameraPose(euler=matrix_to_euler(rot), translation=eye)


def _smooth_noise(rng, h, w, cells=16):
    coarse = rng.uniform(0.0, 1.0, size=(max(cells, 2), max(cells, 2), 3))
    out = zoom(coarse, (h / coarse.shape[0], w / coarse.shape[1], 1), order=1)
    return out[:h, :w]


def procedural_texels(kind, h, w, seed=0, period=24):
    """Smooth colorful texture in [0.05, 0.95]; edges are soft so that
    render-then-bake round trips stay faithful under bilinear resampling."""
    rng = np.random.default_rng(seed)
    noise = _smooth_noise(rng, h, w)
    if kind == "noise":
        tex = noise
    elif kind == "checker":
        y, x = np.mgrid[0:h, 0:w].astype(np.float64)
        wave = np.sin(2 * np.pi * x / period) * np.sin(2 * np.pi * y / period)
        checker = 0.5 + 0.5 * np.tanh(4.0 * wave)
        tex = np.empty((h, w, 3))
        tex[..., 0] = 0.25 + 0.5 * checker
        tex[..., 1] = 0.75 - 0.5 * checker
        tex[..., 2] = 0.35 + 0.3 * checker
        tex = 0.7 * tex + 0.3 * noise
    else:
        raise ValueError(f"unknown texture kind: {kind}")
    return np.clip(tex, 0.05, 0.95)


def orbit_poses(spec, dims):
    """Interior orbit with cycled pitch so walls, floor and ceiling are seen."""
    rng = np.random.default_rng(spec.seed)
    poses = []
    hz = dims[2] / 2.0
    # pitch cycle length is coprime to the sparsity factors 1..5, so
    # keeping every k-th view still mixes wall, floor and ceiling cameras
    pitch_cycle = (-0.55, 0.2, 0.55, -0.2, 0.0, 0.45, -0.45)
    for i in range(spec.n_views):
        theta = 2.0 * np.pi * i / spec.n_views
        eye = np.array([spec.orbit_radius * np.cos(theta),
                        spec.orbit_radius * np.sin(theta),
                        0.15 * np.sin(3 * theta)])
        jitter = rng.uniform(-0.1, 0.1, size=3)
        target_z = pitch_cycle[i % len(pitch_cycle)] * hz
        target = np.array([-eye[0], -eye[1], target_z]) + jitter
        poses.append(look_at_pose(eye, target))
    return poses


def make_scene(spec=None):
    """Build (Scene, ground-truth TextureAtlas) from a SynthSpec."""
    spec = spec or SynthSpec()
    if spec.n_views < 1:
        raise ValueError("n_views must be >= 1")
    mesh = box_room_mesh(spec.room, spec.face_divisions)
    assignment = detect_overlaps(assign_planes(mesh), mesh)
    gt_atlas = pack_atlas(assignment, mesh, spec.tex_side)
    gt_atlas = replace(gt_atlas, texels=procedural_texels(
        spec.texture, gt_atlas.height, gt_atlas.width, seed=spec.seed))

    intr = Intrinsics(fx=0.6 * spec.width, fy=0.6 * spec.width,
                      cx=spec.width / 2.0, cy=spec.height / 2.0,
                      width=spec.width, height=spec.height)
    frames = []
    for i, pose in enumerate(orbit_poses(spec, spec.room)):
        buf = raster.rasterize(mesh, gt_atlas.tri_uv, gt_atlas.texels, pose, intr)
        depth = np.where(buf.mask, buf.depth, 0.0)
        frame = Frame(rgb=buf.rgb, depth=depth, pose=pose, intrinsics=intr, index=i)
        frame.validate()
        frames.append(frame)
    scene = Scene(mesh=mesh, frames=tuple(frames),
                  train_indices=tuple(range(len(frames))), eval_indices=())
    return scene, gt_atlas


def inject_misalignment(scene, max_shift, seed=0):
    """Circularly shift each training frame's rgb by a random integer offset.

    Returns (new scene, {frame index: (dx, dy)}).  Depth, poses and eval
    frames are untouched.
    """
    if max_shift < 0:
        raise ValueError("max_shift must be >= 0")
    rng = np.random.default_rng(seed)
    train = set(scene.train_indices)
    shifts = {}
    frames = []
    for i, fr in enumerate(scene.frames):
        if i in train and max_shift > 0:
            dx = int(rng.integers(-max_shift, max_shift + 1))
            dy = int(rng.integers(-max_shift, max_shift + 1))
        else:
            dx = dy = 0
        shifts[i] = (dx, dy)
        if (dx, dy) == (0, 0):
            frames.append(fr)
        else:
            rgb = np.roll(np.roll(fr.rgb, dy, axis=0), dx, axis=1)
            frames.append(replace(fr, rgb=rgb))
    return replace(scene, frames=tuple(frames)), shifts
