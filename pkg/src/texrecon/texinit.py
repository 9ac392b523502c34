"""Hard-assignment texture initialization.

Each mesh triangle is assigned one source training frame by maximizing a
sum of per-triangle quality cues, optionally with an adjacency bonus for
neighboring triangles that pick the same frame.  The chosen frames are
then baked into the atlas texels.

Cues (all in [0, 1], combined as psi = w1*c1 + w2*c2 + w3*c3):
    c1  visible fraction of the triangle in the frame, with depth
        agreement against the frame's depth map
    c2  squared cosine of the viewing angle (fronto-parallel is best)
    c3  sampling density: projected pixel area / allotted texel area,
        capped at 1
psi is forced to 0 whenever c1 is 0, so an invisible triangle is never a
candidate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from . import raster
from .atlas import triangle_adjacency

NONE_FRAME = -1
UNSEEN_FILL = 0.5
DIFFUSION_PASSES = 64


@dataclass
class CueTable:
    frame_indices: list  # capture-order index per column
    c1: np.ndarray  # (T, F) visibility fraction
    c2: np.ndarray  # (T, F) view-angle quality
    c3: np.ndarray  # (T, F) sampling-resolution score
    psi: np.ndarray  # (T, F) combined score


@dataclass
class LabelAssignment:
    t: np.ndarray  # (T,) capture-order frame index, NONE_FRAME when unseen


def compute_cues(scene, atlas, weights=(1.0, 1.0, 1.0)):
    """Score every (triangle, training frame) pair."""
    mesh = scene.mesh
    normals = mesh.normals()
    centroids = mesh.centroids()
    uv_texels = atlas.tri_uv * np.array([atlas.width, atlas.height])
    e1 = uv_texels[:, 1] - uv_texels[:, 0]
    e2 = uv_texels[:, 2] - uv_texels[:, 0]
    texel_area = np.maximum(0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]), 1e-12)

    cols = list(scene.train_indices)
    n_tri, n_f = len(mesh.triangles), len(cols)
    c1 = np.zeros((n_tri, n_f))
    c2 = np.zeros((n_tri, n_f))
    c3 = np.zeros((n_tri, n_f))
    for col, fi in enumerate(cols):
        fr = scene.frames[fi]
        vis, cover = raster.triangle_coverage(mesh, fr.pose, fr.intrinsics, fr.depth)
        view = centroids - fr.pose.translation
        view /= np.linalg.norm(view, axis=1, keepdims=True)
        c1[:, col] = vis
        c2[:, col] = np.maximum(0.0, -np.einsum("td,td->t", normals, view)) ** 2
        c3[:, col] = np.minimum(1.0, cover / texel_area)

    w1, w2, w3 = weights
    psi = w1 * c1 + w2 * c2 + w3 * c3
    psi[c1 == 0] = 0.0
    return CueTable(frame_indices=cols, c1=c1, c2=c2, c3=c3, psi=psi)


def solve_unary(cues):
    """Independent per-triangle argmax of psi; unseen triangles get NONE."""
    cols = np.argmax(cues.psi, axis=1)
    t = np.array(cues.frame_indices, dtype=np.int64)[cols]
    t[cues.psi.max(axis=1) <= 0.0] = NONE_FRAME
    return LabelAssignment(t=t)


def pairwise_objective(cues, adjacency, omega4, assignment):
    frame_to_col = {f: c for c, f in enumerate(cues.frame_indices)}
    obj = 0.0
    for i, fi in enumerate(assignment.t):
        if fi != NONE_FRAME:
            obj += cues.psi[i, frame_to_col[fi]]
    for i, j in adjacency:
        if assignment.t[i] != NONE_FRAME and assignment.t[i] == assignment.t[j]:
            obj += omega4
    return obj


def _pairwise_sweeps(psi, neighbors, omega4, labels, max_sweeps):
    for _ in range(max_sweeps):
        changed = False
        for i in range(len(labels)):
            if labels[i] < 0:
                continue
            score = psi[i].copy()
            for j in neighbors[i]:
                if labels[j] >= 0:
                    score[labels[j]] += omega4
            score[psi[i] <= 0.0] = -np.inf
            best = int(np.argmax(score))
            if best != labels[i]:
                labels[i] = best
                changed = True
        if not changed:
            break
    return labels


def solve_pairwise(cues, adjacency, omega4=1.0, max_sweeps=100):
    """ICM on psi plus an adjacency bonus for equal frame choices.

    Sweeps triangles in index order until a fixpoint (or max_sweeps).
    Candidate frames are restricted to psi > 0, so visibility gating is
    preserved.  Because the adjacency bonus creates local optima for
    coordinate ascent, ICM restarts from the unary solution and from each
    "everyone picks frame f where possible" labeling, keeping the restart
    with the best objective.  omega4 = 0 reproduces the unary solution
    exactly.
    """
    if omega4 < 0:
        raise ValueError("omega4 must be >= 0")
    init = solve_unary(cues)
    if omega4 == 0 or not adjacency:
        return init
    frame_ids = np.array(cues.frame_indices, dtype=np.int64)
    frame_to_col = {f: c for c, f in enumerate(frame_ids)}
    n_tri, n_f = cues.psi.shape
    neighbors = [[] for _ in range(n_tri)]
    for i, j in adjacency:
        neighbors[i].append(j)
        neighbors[j].append(i)

    unary_labels = np.array([frame_to_col[f] if f != NONE_FRAME else -1 for f in init.t])
    inits = [unary_labels]
    for col in range(n_f):
        # prefer frame col wherever it is a valid candidate
        cand = np.where(cues.psi[:, col] > 0.0, col, unary_labels)
        inits.append(cand)

    def objective(labels):
        obj = float(cues.psi[np.arange(n_tri), np.maximum(labels, 0)][labels >= 0].sum())
        for i, j in adjacency:
            if labels[i] >= 0 and labels[i] == labels[j]:
                obj += omega4
        return obj

    best_labels, best_obj = None, -np.inf
    for start in inits:
        labels = _pairwise_sweeps(cues.psi, neighbors, omega4, start.copy(), max_sweeps)
        obj = objective(labels)
        if obj > best_obj + 1e-12:
            best_labels, best_obj = labels, obj
    t = np.where(best_labels >= 0, frame_ids[np.maximum(best_labels, 0)], NONE_FRAME)
    return LabelAssignment(t=t.astype(np.int64))


def _texel_footprint(uv, width, height):
    """Texel-center coordinates and barycentrics covering one uv triangle.

    Returns (ix, iy, bary) for texel centers inside the triangle.
    """
    xy = uv * np.array([width, height]) - 0.5  # texel-center coordinates
    x0 = max(int(np.floor(xy[:, 0].min())), 0)
    x1 = min(int(np.ceil(xy[:, 0].max())), width - 1)
    y0 = max(int(np.floor(xy[:, 1].min())), 0)
    y1 = min(int(np.ceil(xy[:, 1].max())), height - 1)
    if x1 < x0 or y1 < y0:
        return (np.empty(0, int),) * 2 + (np.empty((0, 3)),)
    gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    px, py = gx.ravel().astype(np.float64), gy.ravel().astype(np.float64)
    a, b, c = xy
    den = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if abs(den) < 1e-12:
        return (np.empty(0, int),) * 2 + (np.empty((0, 3)),)
    l1 = ((px - a[0]) * (c[1] - a[1]) - (py - a[1]) * (c[0] - a[0])) / den
    l2 = ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])) / den
    l0 = 1.0 - l1 - l2
    inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
    bary = np.stack([l0, l1, l2], axis=1)[inside]
    return gx.ravel()[inside], gy.ravel()[inside], bary


def _dilate_once(texels, filled):
    """Grow the filled region by one texel, averaging filled 4-neighbors."""
    h, w = filled.shape
    nb_sum = np.zeros((h, w, 3))
    nb_cnt = np.zeros((h, w))
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        shifted = np.zeros_like(filled)
        src = filled[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)]
        shifted[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)] = src
        vals = np.zeros_like(nb_sum)
        vals[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)] = \
            texels[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)]
        nb_sum += np.where(shifted[..., None], vals, 0.0)
        nb_cnt += shifted
    grow = (~filled) & (nb_cnt > 0)
    texels[grow] = nb_sum[grow] / nb_cnt[grow][:, None]
    return filled | grow


def bake(scene, atlas, assignment, tol_floor=0.02, tol_rel=0.02):
    """Fill atlas texels from each triangle's assigned source frame.

    Texels are mapped to 3D via barycentric inversion of the uv triangle,
    projected into the source frame and bilinearly sampled (with a depth
    agreement check against the frame's depth map).  Texels of unseen
    triangles are filled by 4-neighbor diffusion from baked texels, then
    mid-gray; one final dilation pass builds the chart gutter.

    Returns (baked TextureAtlas, covered-texel mask).
    """
    mesh = scene.mesh
    h, w = atlas.height, atlas.width
    texels = np.zeros((h, w, 3))
    covered = np.zeros((h, w), dtype=bool)
    footprint = np.zeros((h, w), dtype=bool)

    corners = mesh.corners()
    for i in range(len(mesh.triangles)):
        ix, iy, bary = _texel_footprint(atlas.tri_uv[i], w, h)
        if len(ix) == 0:
            continue
        footprint[iy, ix] = True
        fi = assignment.t[i]
        if fi == NONE_FRAME:
            continue
        fr = scene.frames[fi]
        pts3d = bary @ corners[i]
        px, z, valid = raster.project_points(pts3d, fr.pose, fr.intrinsics)
        iw, ih = fr.intrinsics.width, fr.intrinsics.height
        valid &= (px[:, 0] >= 0.5) & (px[:, 0] <= iw - 0.5) \
            & (px[:, 1] >= 0.5) & (px[:, 1] <= ih - 0.5)
        if valid.any():
            uv_img = px[valid] / np.array([iw, ih])
            frame_depth = raster.sample_bilinear(fr.depth[..., None], uv_img)[:, 0]
            tol = raster.depth_tolerance(z[valid], tol_floor, tol_rel)
            ok = (frame_depth > 0) & (np.abs(frame_depth - z[valid]) <= tol)
            colors = raster.sample_bilinear(fr.rgb, uv_img[ok])
            sel = np.nonzero(valid)[0][ok]
            texels[iy[sel], ix[sel]] = np.clip(colors, 0.0, 1.0)
            covered[iy[sel], ix[sel]] = True

    # diffuse into unbaked footprint texels from baked neighbors
    filled = covered.copy()
    for _ in range(DIFFUSION_PASSES):
        want = footprint & ~filled
        if not want.any():
            break
        before = filled.copy()
        grown = _dilate_once(texels, filled)
        # only accept growth into texels we actually want to fill
        reject = (grown & ~before) & ~want
        texels[reject] = 0.0
        filled = before | (grown & want)
    texels[footprint & ~filled] = UNSEEN_FILL
    filled |= footprint

    # one-texel gutter so bilinear lookups at chart borders stay in-chart
    _dilate_once(texels, filled)

    return replace(atlas, texels=texels), covered


def save_assignment(assignment, path):
    with open(path, "w") as f:
        json.dump({"t": assignment.t.tolist()}, f)


def save_cue_table(cues, path):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["triangle", "frame", "c1", "c2", "c3", "psi"])
        for i in range(cues.psi.shape[0]):
            for col, fi in enumerate(cues.frame_indices):
                wr.writerow([i, fi, cues.c1[i, col], cues.c2[i, col],
                             cues.c3[i, col], cues.psi[i, col]])
