"""Software rasterizer: projection, z-buffering, sampling, visibility."""

import numpy as np
import pytest

from texrecon import raster
from texrecon.align import luma, phase_correlate
from texrecon.scene import CameraPose, Intrinsics, Mesh

INTR = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)
POSE = CameraPose(euler=np.zeros(3), translation=np.zeros(3))


def quad_mesh(z, size=2.0, offset=(0.0, 0.0)):
    """Two triangles forming a camera-facing square at depth z."""
    ox, oy = offset
    s = size / 2.0
    verts = np.array([[-s + ox, -s + oy, z], [s + ox, -s + oy, z],
                      [s + ox, s + oy, z], [-s + ox, s + oy, z]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(vertices=verts, triangles=tris)


def quad_uv():
    return np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]], dtype=float)


# ---------------------------------------------------------------------------
# projection

def test_project_on_axis():
    px, depth = raster.project(np.array([0.0, 0.0, 2.0]), POSE, INTR)
    assert px == (50.0, 50.0) and depth == 2.0


def test_project_off_axis():
    px, depth = raster.project(np.array([1.0, 0.0, 2.0]), POSE, INTR)
    assert px == (100.0 * 0.5 + 50.0, 50.0) and depth == 2.0


def test_project_behind_camera():
    assert raster.project(np.array([0.0, 0.0, 0.0]), POSE, INTR) is None
    assert raster.project(np.array([0.0, 0.0, -1.0]), POSE, INTR) is None


def test_project_points_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(50, 3)) + np.array([0, 0, 3.0])
    px, z, valid = raster.project_points(pts, POSE, INTR)
    assert valid.all()
    for i in range(50):
        (u, v), d = raster.project(pts[i], POSE, INTR)
        assert np.allclose(px[i], (u, v)) and np.isclose(z[i], d)


# ---------------------------------------------------------------------------
# rasterize

def test_constant_texture_quad():
    mesh = quad_mesh(z=2.0)
    tex = np.zeros((8, 8, 3))
    tex[..., 0] = 1.0  # constant red
    buf = raster.rasterize(mesh, quad_uv(), tex, POSE, INTR)
    assert buf.mask.any()
    assert np.allclose(buf.rgb[buf.mask], [1.0, 0.0, 0.0])
    assert set(np.unique(buf.tri_id[buf.mask])) <= {0, 1}


def test_buffer_invariants():
    mesh = quad_mesh(z=2.0, size=1.0)
    buf = raster.rasterize(mesh, quad_uv(), np.ones((4, 4, 3)), POSE, INTR)
    assert np.array_equal(buf.mask, buf.tri_id >= 0)
    assert np.array_equal(buf.mask, np.isfinite(buf.depth))
    b = buf.bary[buf.mask]
    assert (b >= -1e-6).all()
    assert np.allclose(b.sum(axis=1), 1.0, atol=1e-6)


def test_zbuffer_near_quad_wins():
    near = quad_mesh(z=1.0)
    far = quad_mesh(z=2.0)
    mesh = Mesh(vertices=np.vstack([near.vertices, far.vertices]),
                triangles=np.vstack([near.triangles, far.triangles + 4]))
    uv = np.vstack([quad_uv(), quad_uv()])
    buf = raster.rasterize(mesh, uv, np.ones((4, 4, 3)), POSE, INTR)
    assert np.allclose(buf.depth[buf.mask], 1.0)
    assert set(np.unique(buf.tri_id[buf.mask])) <= {0, 1}


def test_bilinear_exact_at_texel_centers():
    rng = np.random.default_rng(2)
    tex = rng.uniform(0, 1, size=(7, 5, 3))
    h, w = tex.shape[:2]
    ii, jj = np.meshgrid(np.arange(w), np.arange(h))
    uv = np.stack([(ii.ravel() + 0.5) / w, (jj.ravel() + 0.5) / h], axis=1)
    out = raster.sample_bilinear(tex, uv)
    assert np.allclose(out, tex.reshape(-1, 3), atol=1e-12)


def test_bilinear_midpoint_average():
    tex = np.zeros((2, 2, 1))
    tex[0, 0] = 1.0
    out = raster.sample_bilinear(tex, np.array([[0.5, 0.5]]))
    assert np.isclose(out[0, 0], 0.25)


def test_rasterize_deterministic():
    mesh = quad_mesh(z=2.0)
    tex = np.random.default_rng(0).uniform(0, 1, size=(16, 16, 3))
    a = raster.rasterize(mesh, quad_uv(), tex, POSE, INTR)
    b = raster.rasterize(mesh, quad_uv(), tex, POSE, INTR)
    for name in ("rgb", "depth", "mask", "tri_id", "bary"):
        assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=True)


def test_shared_edge_pixels_covered_once():
    # the quad diagonal is shared by both triangles; the fill rule must give
    # each interior pixel to exactly one of them (no holes along the seam)
    mesh = quad_mesh(z=2.0)
    buf = raster.rasterize(mesh, quad_uv(), np.ones((4, 4, 3)), POSE, INTR)
    ys, xs = np.nonzero(buf.mask)
    interior = (xs > xs.min()) & (xs < xs.max()) & (ys > ys.min()) & (ys < ys.max())
    region = buf.mask[ys[interior].min():ys[interior].max() + 1,
                      xs[interior].min():xs[interior].max() + 1]
    assert region.all()


def test_self_registration_of_checker_render():
    mesh = quad_mesh(z=1.5, size=4.0)
    y, x = np.mgrid[0:32, 0:32]
    tex = np.repeat((((x // 4 + y // 4) % 2).astype(float))[..., None], 3, axis=2)
    buf = raster.rasterize(mesh, quad_uv(), tex, POSE, INTR)
    off = phase_correlate(luma(buf.rgb), luma(buf.rgb), mask=buf.mask)
    assert (off.dx, off.dy) == (0.0, 0.0)
    assert off.peak_confidence > 0.1


# ---------------------------------------------------------------------------
# visibility

def test_visibility_front_facing():
    mesh = quad_mesh(z=2.0, size=1.0)
    vis = raster.visibility(mesh, POSE, INTR)
    assert np.allclose(vis, 1.0, atol=0.05)


def test_visibility_occluded():
    near = quad_mesh(z=1.0, size=3.0)
    far = quad_mesh(z=2.0, size=1.0)
    mesh = Mesh(vertices=np.vstack([near.vertices, far.vertices]),
                triangles=np.vstack([near.triangles, far.triangles + 4]))
    vis = raster.visibility(mesh, POSE, INTR)
    assert np.allclose(vis[2:], 0.0)


def test_visibility_depth_disagreement():
    mesh = quad_mesh(z=2.0, size=1.0)
    frame_depth = np.full((100, 100), 1.0)  # frame says everything is at 1m
    vis = raster.visibility(mesh, POSE, INTR, frame_depth)
    assert np.allclose(vis, 0.0)


def test_visibility_partially_outside_viewport():
    # a quad whose projection extends past the image border: the fraction is
    # measured against the full projected area, so it must drop below 1
    mesh = quad_mesh(z=2.0, size=2.0, offset=(0.9, 0.0))
    vis = raster.visibility(mesh, POSE, INTR)
    assert (vis < 0.95).any()
    assert (vis > 0.0).all()


def test_depth_tolerance_floor_and_relative():
    d = np.array([0.1, 1.0, 10.0])
    tol = raster.depth_tolerance(d)
    assert np.allclose(tol, [0.02, 0.02, 0.2])
