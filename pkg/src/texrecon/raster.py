"""Deterministic software rasterizer.

Produces per-view RGB (sampled from a texture), depth, coverage-mask,
triangle-id and barycentric buffers.  Pinhole projection, near-plane
clipping, z-buffered fill with the top-left rule, perspective-correct
barycentric interpolation (1/Z weighting).  Single-threaded and pure:
identical inputs give bit-identical buffers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEAR_EPS = 1e-9
NEAR_PLANE = 1e-4
NO_TRIANGLE = -1


@dataclass
class RenderBuffers:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W), +inf where empty
    mask: np.ndarray  # (H, W) bool
    tri_id: np.ndarray  # (H, W) int, -1 where empty
    bary: np.ndarray  # (H, W, 3) barycentric wrt the covering triangle


def world_to_camera(points, pose):
    """Transform (N, 3) world points into camera coordinates."""
    R = pose.rotation
    return (np.asarray(points) - pose.translation) @ R


def project(point, pose, intr):
    """Project one world point; returns ((u, v), depth) or None if behind camera."""
    cam = world_to_camera(np.asarray(point, dtype=np.float64)[None, :], pose)[0]
    z = cam[2]
    if z <= NEAR_EPS:
        return None
    u = intr.fx * cam[0] / z + intr.cx
    v = intr.fy * cam[1] / z + intr.cy
    return (u, v), z


def project_points(points, pose, intr):
    """Vectorized projection: (N, 3) -> pixels (N, 2), depth (N,), valid (N,)."""
    cam = world_to_camera(points, pose)
    z = cam[:, 2]
    valid = z > NEAR_EPS
    zs = np.where(valid, z, 1.0)
    px = np.stack([intr.fx * cam[:, 0] / zs + intr.cx,
                   intr.fy * cam[:, 1] / zs + intr.cy], axis=1)
    return px, z, valid


def _clip_near(cam_pts, attrs, near=NEAR_PLANE):
    """Sutherland-Hodgman clip of one camera-space triangle against z = near.

    `attrs` is (3, A) per-vertex attributes, linearly interpolated at the
    clip crossings.  Returns a list of (cam_pts (3,3), attrs (3,A)) triangles.
    """
    pts, out_attrs = [], []
    for i in range(3):
        j = (i + 1) % 3
        p, q = cam_pts[i], cam_pts[j]
        pin, qin = p[2] > near, q[2] > near
        if pin:
            pts.append(p)
            out_attrs.append(attrs[i])
        if pin != qin:
            t = (near - p[2]) / (q[2] - p[2])
            pts.append(p + t * (q - p))
            out_attrs.append(attrs[i] + t * (attrs[j] - attrs[i]))
    if len(pts) < 3:
        return []
    tris = []
    for k in range(1, len(pts) - 1):  # fan triangulation of the convex polygon
        tris.append((np.array([pts[0], pts[k], pts[k + 1]]),
                     np.array([out_attrs[0], out_attrs[k], out_attrs[k + 1]])))
    return tris


def sample_bilinear(texture, uv):
    """Bilinear texture lookup at (N, 2) uv in [0, 1]^2.

    Texel centers sit at ((i + 0.5)/W, (j + 0.5)/H), so sampling exactly at
    a center returns that texel's value.
    """
    h, w = texture.shape[:2]
    x = np.clip(uv[:, 0] * w - 0.5, 0.0, w - 1.0)
    y = np.clip(uv[:, 1] * h - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2) if w > 1 else np.zeros_like(x, int)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2) if h > 1 else np.zeros_like(y, int)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (x - x0)[:, None], (y - y0)[:, None]
    return ((1 - fy) * ((1 - fx) * texture[y0, x0] + fx * texture[y0, x1])
            + fy * ((1 - fx) * texture[y1, x0] + fx * texture[y1, x1]))


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _raster_one(cam, attrs, intr, depth_buf, tri_buf, attr_bufs, tri_index,
                count_cover=None, count_area=None):
    """Rasterize one clipped camera-space triangle into the buffers.

    attrs: (3, A) per-vertex attributes interpolated perspective-correct.
    attr_bufs: (H, W, A) storage written where the z-test passes.
    count_cover: optional (T,) array incremented per covered pixel (pre-z,
    viewport-clipped).  count_area: optional (T,) array accumulating the
    analytic screen-space area in pixels (pre-z, NOT viewport-clipped).
    """
    h, w = depth_buf.shape
    z = cam[:, 2]
    sx = intr.fx * cam[:, 0] / z + intr.cx
    sy = intr.fy * cam[:, 1] / z + intr.cy

    area = _edge(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2])
    if area == 0:
        return
    if count_area is not None:
        count_area[tri_index] += 0.5 * abs(area)
    if area < 0:  # keep winding consistent so edge functions are >= 0 inside
        sx, sy, z = sx[::-1].copy(), sy[::-1].copy(), z[::-1].copy()
        attrs = attrs[::-1]
        area = -area

    x0 = max(int(np.floor(sx.min())), 0)
    x1 = min(int(np.ceil(sx.max())), w - 1)
    y0 = max(int(np.floor(sy.min())), 0)
    y1 = min(int(np.ceil(sy.max())), h - 1)
    if x1 < x0 or y1 < y0:
        return

    xs = np.arange(x0, x1 + 1) + 0.5
    ys = np.arange(y0, y1 + 1) + 0.5
    px, py = np.meshgrid(xs, ys)

    inside = np.ones(px.shape, dtype=bool)
    lam = np.empty((3,) + px.shape)
    for i in range(3):
        a, b = (i + 1) % 3, (i + 2) % 3
        e = _edge(sx[a], sy[a], sx[b], sy[b], px, py)
        # top-left rule: edges that are exactly hit belong to the triangle
        # only if they are top or left edges
        dx, dy = sx[b] - sx[a], sy[b] - sy[a]
        top_left = (dy < 0) or (dy == 0 and dx > 0)
        inside &= (e > 0) | ((e == 0) & top_left)
        lam[i] = e / area
    if not inside.any():
        return

    iy, ix = np.nonzero(inside)
    l0, l1, l2 = lam[0][inside], lam[1][inside], lam[2][inside]
    inv_z = l0 / z[0] + l1 / z[1] + l2 / z[2]
    pix_z = 1.0 / inv_z

    if count_cover is not None:
        count_cover[tri_index] += len(ix)

    yy, xx = iy + y0, ix + x0
    better = pix_z < depth_buf[yy, xx] - 1e-12
    if not better.any():
        return
    yy, xx = yy[better], xx[better]
    pz = pix_z[better]
    # perspective-correct attribute weights
    w0 = (l0[better] / z[0]) * pz
    w1 = (l1[better] / z[1]) * pz
    w2 = (l2[better] / z[2]) * pz

    depth_buf[yy, xx] = pz
    tri_buf[yy, xx] = tri_index
    attr_bufs[yy, xx] = (w0[:, None] * attrs[0] + w1[:, None] * attrs[1]
                         + w2[:, None] * attrs[2])


def _raster_pass(mesh, pose, intr, count_cover=None, count_area=None):
    """Shared z-buffer pass; attributes are the original-triangle barycentrics."""
    h, w = intr.height, intr.width
    depth = np.full((h, w), np.inf)
    tri_id = np.full((h, w), NO_TRIANGLE, dtype=np.int64)
    bary = np.zeros((h, w, 3))
    corners = mesh.corners()
    ident = np.eye(3)
    for t in range(len(corners)):
        cam = world_to_camera(corners[t], pose)
        for cpts, cattrs in _clip_near(cam, ident):
            _raster_one(cpts, cattrs, intr, depth, tri_id, bary, t, count_cover, count_area)
    return depth, tri_id, bary


def rasterize(mesh, uv, texture, pose, intr):
    """Render a textured mesh from one camera.

    uv: (T, 3, 2) per-triangle-corner texture coordinates in [0, 1]^2.
    Returns RenderBuffers; uncovered pixels keep rgb 0, depth +inf.
    """
    depth, tri_id, bary = _raster_pass(mesh, pose, intr)
    mask = tri_id >= 0
    rgb = np.zeros(depth.shape + (3,))
    if mask.any():
        tid = tri_id[mask]
        b = bary[mask]
        pix_uv = np.einsum("nk,nkd->nd", b, uv[tid])
        rgb[mask] = np.clip(sample_bilinear(texture, pix_uv), 0.0, 1.0)
    return RenderBuffers(rgb=rgb, depth=depth, mask=mask, tri_id=tri_id, bary=bary)


def rasterize_ids(mesh, pose, intr):
    """Geometry-only pass: RenderBuffers with rgb left at zero."""
    depth, tri_id, bary = _raster_pass(mesh, pose, intr)
    mask = tri_id >= 0
    return RenderBuffers(rgb=np.zeros(depth.shape + (3,)), depth=depth,
                         mask=mask, tri_id=tri_id, bary=bary)


def depth_tolerance(depth, floor=0.02, rel=0.02):
    """Occlusion-agreement tolerance: max(floor meters, rel * depth)."""
    return np.maximum(floor, rel * depth)


def triangle_coverage(mesh, pose, intr, frame_depth=None, tol_floor=0.02, tol_rel=0.02):
    """Per-triangle (visible fraction, rasterized pixel count).

    The fraction counts each triangle's rasterized pixels that survive the
    z-buffer and, when `frame_depth` is given, agree with it within the
    tolerance, over the triangle's full projected area (so parts outside
    the viewport count as invisible).  Triangles that never reach the
    viewport get 0.
    """
    cover = np.zeros(len(mesh.triangles), dtype=np.int64)
    area = np.zeros(len(mesh.triangles))
    depth, tri_id, _ = _raster_pass(mesh, pose, intr, count_cover=cover, count_area=area)
    vis = np.zeros(len(mesh.triangles))
    mask = tri_id >= 0
    if frame_depth is not None:
        fd = frame_depth[mask]
        agree = (fd > 0) & (np.abs(depth[mask] - fd) <= depth_tolerance(depth[mask],
                                                                        tol_floor, tol_rel))
        surviving = tri_id[mask][agree]
    else:
        surviving = tri_id[mask]
    np.add.at(vis, surviving, 1.0)
    nonzero = area > 1e-9
    vis[nonzero] /= area[nonzero]
    return np.clip(vis, 0.0, 1.0), cover


def visibility(mesh, pose, intr, frame_depth=None, tol_floor=0.02, tol_rel=0.02):
    """Per-triangle visible fraction in [0, 1]; see `triangle_coverage`."""
    return triangle_coverage(mesh, pose, intr, frame_depth, tol_floor, tol_rel)[0]
