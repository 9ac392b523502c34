"""Texture atlas generation.

Maps mesh geometry to a texture image: each triangle is assigned to a
projection plane by maximizing a smoothed normal-alignment objective over
the triangle adjacency (ICM), overlapping orthographic projections are
split onto duplicate planes, and each plane becomes a square chart tiled
into one atlas image.

The plane label set defaults to the six axis-aligned directions.  The
unary term rewards alignment of the triangle normal with the plane
direction; the pairwise term is a Potts bonus for adjacent triangles
sharing a plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from shapely.geometry import Polygon

AXIS_DIRECTIONS = np.array([
    [1, 0, 0], [-1, 0, 0],
    [0, 1, 0], [0, -1, 0],
    [0, 0, 1], [0, 0, -1],
], dtype=np.float64)

CHART_SIDES = (512, 1024, 2048)
RGB_SIDES = (480, 960, 1920)
CHART_PAD = 2  # texels kept clear around each chart's content
OVERLAP_AREA_EPS = 1e-9


@dataclass
class PlaneBasis:
    direction: np.ndarray  # unit projection direction
    axis_u: np.ndarray
    axis_v: np.ndarray


@dataclass
class PlaneAssignment:
    labels: np.ndarray  # (T,) plane label per triangle
    planes: list  # PlaneBasis per label


@dataclass
class TextureAtlas:
    texels: np.ndarray  # (H, W, 3) in [0, 1]
    tri_uv: np.ndarray  # (T, 3, 2) per-corner uv in [0, 1]^2 (atlas coords)
    charts: list  # dicts: {"label", "x0", "y0", "side"}
    height: int
    width: int
    tri_label: np.ndarray = field(default=None)


def plane_basis(direction):
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    helper = np.array([0.0, 1.0, 0.0]) if abs(d[0]) > 0.9 else np.array([1.0, 0.0, 0.0])
    u = helper - np.dot(helper, d) * d
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return PlaneBasis(direction=d, axis_u=u, axis_v=v)


def triangle_adjacency(mesh):
    """Unordered pairs of triangles sharing an edge, each listed once."""
    edges = {}
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges.setdefault(key, []).append(t)
    pairs = set()
    for tris in edges.values():
        for i in range(len(tris)):
            for j in range(i + 1, len(tris)):
                pairs.add((min(tris[i], tris[j]), max(tris[i], tris[j])))
    return sorted(pairs)


def plane_unary(mesh, planes, w_u=1.0):
    """(T, L) unary scores: w_u * (normal . plane direction)."""
    normals = mesh.normals()
    dirs = np.stack([p.direction for p in planes])
    return w_u * normals @ dirs.T


def _icm_sweeps(unary, neighbors, pairwise_weight, labels, max_sweeps):
    for _ in range(max_sweeps):
        changed = False
        for i in range(len(labels)):
            score = unary[i].copy()
            for j in neighbors[i]:
                score[labels[j]] += pairwise_weight
            best = int(np.argmax(score))
            if best != labels[i]:
                labels[i] = best
                changed = True
        if not changed:
            break
    return labels


def icm_labels(unary, adjacency, pairwise_weight, max_sweeps=100):
    """Coordinate-ascent labeling for unary + Potts-bonus objectives.

    Sweeps items in index order, re-assigning each to its best label given
    its neighbors, until a full sweep changes nothing.  Coordinate ascent
    can stall in local optima when the Potts bonus is strong, so it is
    restarted from the unary argmax and from each constant labeling; the
    restart with the best final objective wins (earliest on ties).  Label
    ties break toward the lowest index, so the result is deterministic,
    and the objective never decreases within a run.
    """
    n, n_labels = unary.shape
    if pairwise_weight == 0 or not adjacency:
        return np.argmax(unary, axis=1)
    neighbors = [[] for _ in range(n)]
    for i, j in adjacency:
        neighbors[i].append(j)
        neighbors[j].append(i)
    inits = [np.argmax(unary, axis=1)]
    inits += [np.full(n, lab, dtype=np.int64) for lab in range(n_labels)]
    best_labels, best_obj = None, -np.inf
    for init in inits:
        labels = _icm_sweeps(unary, neighbors, pairwise_weight, init.copy(), max_sweeps)
        obj = labeling_objective(unary, adjacency, pairwise_weight, labels)
        if obj > best_obj + 1e-12:
            best_labels, best_obj = labels, obj
    return best_labels


def labeling_objective(unary, adjacency, pairwise_weight, labels):
    obj = float(unary[np.arange(len(labels)), labels].sum())
    for i, j in adjacency:
        if labels[i] == labels[j]:
            obj += pairwise_weight
    return obj


def assign_planes(mesh, planes=None, w_u=1.0, w_p=0.5):
    """Assign each triangle to a projection plane via ICM over the adjacency."""
    if len(mesh.triangles) == 0:
        raise ValueError("cannot assign planes on an empty mesh")
    if planes is None:
        planes = [plane_basis(d) for d in AXIS_DIRECTIONS]
    unary = plane_unary(mesh, planes, w_u)
    adjacency = triangle_adjacency(mesh)
    labels = icm_labels(unary, adjacency, w_p)
    return PlaneAssignment(labels=labels, planes=list(planes))


def project_to_plane(points, basis):
    """Orthographic (u, v) coordinates of (N, 3) points on a plane basis."""
    pts = np.asarray(points, dtype=np.float64)
    return np.stack([pts @ basis.axis_u, pts @ basis.axis_v], axis=-1)


def _projected_polygons(mesh, assignment, tris):
    basis_cache = {}
    polys = {}
    for t in tris:
        lab = assignment.labels[t]
        if lab not in basis_cache:
            basis_cache[lab] = assignment.planes[lab]
        pts = project_to_plane(mesh.vertices[mesh.triangles[t]], basis_cache[lab])
        polys[t] = Polygon(pts)
    return polys


def detect_overlaps(assignment, mesh):
    """Split projected overlaps onto duplicate plane labels.

    Within each plane's orthographic projection, triangles are considered
    in index order; a triangle conflicts if its projection overlaps an
    earlier kept one by more than a small area.  Conflicting triangles are
    grouped into connected components over the mesh adjacency and each
    component moves to a fresh duplicate of the plane, repeating until no
    overlap remains.
    """
    labels = assignment.labels.copy()
    planes = list(assignment.planes)
    adjacency = triangle_adjacency(mesh)
    neighbors = [[] for _ in range(len(mesh.triangles))]
    for i, j in adjacency:
        neighbors[i].append(j)
        neighbors[j].append(i)

    for _ in range(len(mesh.triangles) + 1):
        conflicted_by_label = {}
        for lab in sorted(set(labels.tolist())):
            tris = [t for t in range(len(labels)) if labels[t] == lab]
            if len(tris) < 2:
                continue
            polys = _projected_polygons(mesh, PlaneAssignment(labels, planes), tris)
            kept, conflicted = [], []
            for t in tris:
                p = polys[t]
                hit = False
                for k in kept:
                    if p.intersection(polys[k]).area > OVERLAP_AREA_EPS:
                        hit = True
                        break
                (conflicted if hit else kept).append(t)
            if conflicted:
                conflicted_by_label[lab] = conflicted
        if not conflicted_by_label:
            return PlaneAssignment(labels=labels, planes=planes)
        for lab, conflicted in sorted(conflicted_by_label.items()):
            remaining = set(conflicted)
            while remaining:
                seed = min(remaining)
                comp, stack = {seed}, [seed]
                while stack:
                    cur = stack.pop()
                    for nb in neighbors[cur]:
                        if nb in remaining and nb not in comp:
                            comp.add(nb)
                            stack.append(nb)
                remaining -= comp
                new_lab = len(planes)
                planes.append(planes[lab])
                for t in comp:
                    labels[t] = new_lab
    raise RuntimeError("overlap resolution did not terminate")


def resolution_policy(frames):
    """Chart side length from the majority RGB resolution.

    Larger image side 480 -> 512, 960 -> 1024, 1920 -> 2048; any other
    side maps to the nearest of the three listed sides.
    """
    if not frames:
        raise ValueError("no frames")
    sides = [max(f.intrinsics.width, f.intrinsics.height) for f in frames]
    values, counts = np.unique(sides, return_counts=True)
    major = int(values[np.argmax(counts)])
    nearest = int(np.argmin([abs(major - r) for r in RGB_SIDES]))
    return CHART_SIDES[nearest]


def pack_atlas(assignment, mesh, side):
    """Tile one square chart per plane into a near-square atlas grid.

    UVs are aspect-preserving orthographic coordinates normalized into the
    chart's rectangle (with a small pad), expressed in [0, 1]^2 over the
    whole atlas.
    """
    labels = assignment.labels
    used = sorted(set(labels.tolist()))
    cols = math.ceil(math.sqrt(len(used)))
    rows = math.ceil(len(used) / cols)
    width, height = cols * side, rows * side

    tri_uv = np.zeros((len(labels), 3, 2))
    charts = []
    for slot, lab in enumerate(used):
        cx0 = (slot % cols) * side
        cy0 = (slot // cols) * side
        charts.append({"label": int(lab), "x0": int(cx0), "y0": int(cy0), "side": int(side)})
        tris = np.nonzero(labels == lab)[0]
        basis = assignment.planes[lab]
        pts = project_to_plane(mesh.vertices[mesh.triangles[tris]].reshape(-1, 3), basis)
        lo = pts.min(axis=0)
        extent = max(float((pts.max(axis=0) - lo).max()), 1e-12)
        scale = (side - 2 * CHART_PAD) / extent
        local = (pts - lo) * scale + CHART_PAD  # texel coordinates within the chart
        uv = np.stack([(cx0 + local[:, 0]) / width, (cy0 + local[:, 1]) / height], axis=1)
        tri_uv[tris] = uv.reshape(-1, 3, 2)

    texels = np.zeros((height, width, 3))
    return TextureAtlas(texels=texels, tri_uv=tri_uv, charts=charts,
                        height=height, width=width, tri_label=labels.copy())


def build_atlas(mesh, frames, side=None, w_u=1.0, w_p=0.5):
    """Full geometry-to-atlas path: plane MRF, overlap split, packing."""
    assignment = detect_overlaps(assign_planes(mesh, w_u=w_u, w_p=w_p), mesh)
    if side is None:
        side = resolution_policy(frames)
    return pack_atlas(assignment, mesh, side)


def save_atlas(atlas, png_path, json_path):
    arr = np.clip(np.round(atlas.texels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(png_path)
    meta = {
        "height": atlas.height,
        "width": atlas.width,
        "charts": atlas.charts,
        "tri_uv": atlas.tri_uv.tolist(),
    }
    with open(json_path, "w") as f:
        json.dump(meta, f)


def load_atlas(png_path, json_path):
    texels = np.asarray(Image.open(png_path).convert("RGB"), dtype=np.float64) / 255.0
    with open(json_path) as f:
        meta = json.load(f)
    return TextureAtlas(texels=texels, tri_uv=np.array(meta["tri_uv"]),
                        charts=meta["charts"], height=meta["height"], width=meta["width"])
