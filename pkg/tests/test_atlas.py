"""Atlas generation: adjacency, plane labeling, overlap splitting, packing."""

import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from texrecon.atlas import (
    AXIS_DIRECTIONS,
    OVERLAP_AREA_EPS,
    assign_planes,
    build_atlas,
    detect_overlaps,
    icm_labels,
    labeling_objective,
    pack_atlas,
    plane_basis,
    plane_unary,
    project_to_plane,
    resolution_policy,
    triangle_adjacency,
)
from texrecon.scene import Intrinsics, Mesh


def cube_mesh():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    # outward-facing faces of the unit cube (two triangles each)
    faces = [
        (0, 1, 3, 2, [-1, 0, 0]), (4, 6, 7, 5, [1, 0, 0]),
        (0, 4, 5, 1, [0, -1, 0]), (2, 3, 7, 6, [0, 1, 0]),
        (0, 2, 6, 4, [0, 0, -1]), (1, 5, 7, 3, [0, 0, 1]),
    ]
    tris, outward = [], []
    for a, b, c, d, n in faces:
        for tri in ((a, b, c), (a, c, d)):
            p = v[list(tri)]
            nv = np.cross(p[1] - p[0], p[2] - p[0])
            tris.append(tri if np.dot(nv, n) > 0 else tri[::-1])
            outward.append(n)
    return Mesh(vertices=v, triangles=np.array(tris)), np.array(outward, dtype=float)


def icosahedron():
    p = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ], dtype=float)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return Mesh(vertices=verts, triangles=faces)


def intr(w, h):
    return Intrinsics(fx=1.0, fy=1.0, cx=w / 2, cy=h / 2, width=w, height=h)


class FakeFrame:
    def __init__(self, w, h):
        self.intrinsics = intr(w, h)


def all_labelings(n, n_labels):
    grids = np.meshgrid(*([np.arange(n_labels)] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)  # (n_labels^n, n)


def brute_force_best(unary, adjacency, w_p):
    """Exhaustive optimum of the unary + Potts-bonus labeling objective."""
    n, n_labels = unary.shape
    labelings = all_labelings(n, n_labels)
    scores = unary[np.arange(n), labelings].sum(axis=1)
    for i, j in adjacency:
        scores += w_p * (labelings[:, i] == labelings[:, j])
    return float(scores.max())


# ---------------------------------------------------------------------------
# adjacency

def test_adjacency_two_triangles():
    mesh = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float),
                triangles=np.array([[0, 1, 2], [1, 3, 2]]))
    assert triangle_adjacency(mesh) == [(0, 1)]


def test_adjacency_strip_of_four():
    verts = np.array([[i, (i % 2), 0] for i in range(6)], dtype=float)
    tris = np.array([[0, 1, 2], [1, 3, 2], [2, 3, 4], [3, 5, 4]])
    assert triangle_adjacency(Mesh(vertices=verts, triangles=tris)) == [(0, 1), (1, 2), (2, 3)]


def test_adjacency_icosahedron():
    assert len(triangle_adjacency(icosahedron())) == 30


# ---------------------------------------------------------------------------
# plane assignment

def test_cube_unary_argmax_labels():
    mesh, outward = cube_mesh()
    assignment = assign_planes(mesh, w_p=0.0)
    dirs = np.array([assignment.planes[l].direction for l in assignment.labels])
    assert np.allclose(dirs, outward)


def test_wp_zero_equals_unary_argmax():
    rng = np.random.default_rng(0)
    mesh = icosahedron()
    planes = [plane_basis(d) for d in AXIS_DIRECTIONS]
    unary = plane_unary(mesh, planes)
    assignment = assign_planes(mesh, w_p=0.0)
    assert np.array_equal(assignment.labels, np.argmax(unary, axis=1))


def test_large_wp_merges_near_equal_normals():
    # two coplanar adjacent triangles whose normals tie between two planes;
    # a strong Potts bonus must force a shared label
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    mesh = Mesh(vertices=verts, triangles=np.array([[0, 1, 2], [1, 3, 2]]))
    unary = np.array([[1.00, 0.99], [0.99, 1.00]])
    labels = icm_labels(unary, [(0, 1)], pairwise_weight=10.0)
    assert labels[0] == labels[1]
    # brute force agrees that sharing is optimal
    assert labeling_objective(unary, [(0, 1)], 10.0, labels) == \
        brute_force_best(unary, [(0, 1)], 10.0)


def test_icm_vs_brute_force():
    # mesh-like 6-triangle / 6-label instances against exhaustive search:
    # normal-alignment unaries (random unit normals against the six axis
    # directions) and a sparse strip adjacency with the default Potts bonus
    rng = np.random.default_rng(42)
    n, hits = 6, 0
    trials = 200
    for _ in range(trials):
        normals = rng.standard_normal((n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        unary = normals @ AXIS_DIRECTIONS.T
        edges = [(i, i + 1) for i in range(n - 1) if rng.uniform() < 0.8]
        edges += [(i, i + 2) for i in range(n - 2) if rng.uniform() < 0.2]
        w_p = 0.5
        labels = icm_labels(unary, sorted(edges), w_p)
        got = labeling_objective(unary, edges, w_p, labels)
        best = brute_force_best(unary, edges, w_p)
        assert got <= best + 1e-9
        if got >= best - 1e-9:
            hits += 1
    assert hits >= 0.95 * trials


def test_icm_monotone_objective():
    rng = np.random.default_rng(7)
    unary = rng.uniform(0, 1, size=(10, 6))
    edges = [(i, i + 1) for i in range(9)]
    start = labeling_objective(unary, edges, 0.3, np.argmax(unary, axis=1))
    final = labeling_objective(unary, edges, 0.3, icm_labels(unary, edges, 0.3))
    assert final >= start - 1e-12


def test_assign_planes_rejects_empty_mesh():
    empty = Mesh(vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3), dtype=int))
    with pytest.raises(ValueError):
        assign_planes(empty)


# ---------------------------------------------------------------------------
# overlap detection

def test_flat_terrain_unchanged():
    verts = np.array([[x, y, 0.0] for y in range(3) for x in range(3)])
    tris = []
    for y in range(2):
        for x in range(2):
            a = y * 3 + x
            tris += [[a, a + 1, a + 3], [a + 1, a + 4, a + 3]]
    mesh = Mesh(vertices=verts, triangles=np.array(tris))
    assignment = assign_planes(mesh)
    refined = detect_overlaps(assignment, mesh)
    assert np.array_equal(refined.labels, assignment.labels)
    assert len(refined.planes) == len(assignment.planes)


def stacked_quads_mesh():
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                      [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]])
    return Mesh(vertices=verts, triangles=tris)


def test_stacked_quads_split_to_new_label():
    mesh = stacked_quads_mesh()
    assignment = assign_planes(mesh)
    assert len(set(assignment.labels.tolist())) == 1  # same normal, same plane
    refined = detect_overlaps(assignment, mesh)
    assert len(set(refined.labels.tolist())) == 2
    assert len(refined.planes) == len(assignment.planes) + 1
    # the lower-index quad keeps the original label
    assert refined.labels[0] == assignment.labels[0]
    assert refined.labels[2] == len(assignment.planes)


def test_no_overlaps_after_refinement():
    mesh = stacked_quads_mesh()
    refined = detect_overlaps(assign_planes(mesh), mesh)
    for lab in set(refined.labels.tolist()):
        tris = np.nonzero(refined.labels == lab)[0]
        basis = refined.planes[lab]
        polys = [Polygon(project_to_plane(mesh.vertices[mesh.triangles[t]], basis))
                 for t in tris]
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                assert polys[i].intersection(polys[j]).area <= OVERLAP_AREA_EPS


# ---------------------------------------------------------------------------
# resolution policy

def test_resolution_policy_named_sides():
    assert resolution_policy([FakeFrame(480, 360)]) == 512
    assert resolution_policy([FakeFrame(960, 720)]) == 1024
    assert resolution_policy([FakeFrame(1920, 1440)]) == 2048


def test_resolution_policy_majority():
    frames = [FakeFrame(960, 720)] * 3 + [FakeFrame(1920, 1440)]
    assert resolution_policy(frames) == 1024


def test_resolution_policy_nearest_side():
    assert resolution_policy([FakeFrame(500, 400)]) == 512
    assert resolution_policy([FakeFrame(1200, 900)]) == 1024


# ---------------------------------------------------------------------------
# packing

def test_pack_single_plane():
    mesh = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float),
                triangles=np.array([[0, 1, 2]]))
    atlas = pack_atlas(assign_planes(mesh), mesh, 512)
    assert (atlas.height, atlas.width) == (512, 512)


def test_pack_grid_shapes():
    mesh, _ = cube_mesh()
    assignment = assign_planes(mesh, w_p=0.0)  # 6 planes used
    atlas = pack_atlas(assignment, mesh, 128)
    assert (atlas.width, atlas.height) == (3 * 128, 2 * 128)  # ceil(sqrt 6)=3 cols

    # 4 planes -> 2x2; 5 planes -> 3x2
    for n_planes, (cols, rows) in ((4, (2, 2)), (5, (3, 2))):
        labels = np.arange(n_planes)
        sub = Mesh(vertices=np.arange(3 * n_planes * 3, dtype=float).reshape(-1, 3) % 7,
                   triangles=np.arange(3 * n_planes).reshape(-1, 3))
        fake = assign_planes(cube_mesh()[0])  # reuse plane bases
        from texrecon.atlas import PlaneAssignment
        asn = PlaneAssignment(labels=labels, planes=list(fake.planes) * 2)
        atlas = pack_atlas(asn, sub, 64)
        assert (atlas.width, atlas.height) == (cols * 64, rows * 64)


def test_uv_inside_charts():
    mesh, _ = cube_mesh()
    atlas = build_atlas(mesh, [FakeFrame(480, 360)], side=128)
    assert atlas.tri_uv.min() >= 0.0 and atlas.tri_uv.max() <= 1.0
    label_of = {c["label"]: c for c in atlas.charts}
    for t in range(len(mesh.triangles)):
        chart = label_of[int(atlas.tri_label[t])]
        xy = atlas.tri_uv[t] * np.array([atlas.width, atlas.height])
        assert (xy[:, 0] >= chart["x0"]).all() and (xy[:, 0] <= chart["x0"] + chart["side"]).all()
        assert (xy[:, 1] >= chart["y0"]).all() and (xy[:, 1] <= chart["y0"] + chart["side"]).all()


def test_uv_triangles_disjoint_within_chart():
    mesh, _ = cube_mesh()
    atlas = build_atlas(mesh, [FakeFrame(480, 360)], side=128)
    dims = np.array([atlas.width, atlas.height])
    for lab in set(atlas.tri_label.tolist()):
        tris = np.nonzero(atlas.tri_label == lab)[0]
        polys = [Polygon(atlas.tri_uv[t] * dims) for t in tris]
        chart_area = 128 * 128
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                assert polys[i].intersection(polys[j]).area < 1e-6 * chart_area


def test_atlas_round_trip(tmp_path):
    from texrecon.atlas import load_atlas, save_atlas
    mesh, _ = cube_mesh()
    atlas = build_atlas(mesh, [FakeFrame(480, 360)], side=64)
    atlas.texels[:] = np.random.default_rng(0).uniform(0, 1, size=atlas.texels.shape)
    save_atlas(atlas, tmp_path / "a.png", tmp_path / "a.json")
    back = load_atlas(tmp_path / "a.png", tmp_path / "a.json")
    assert back.height == atlas.height and back.width == atlas.width
    assert np.allclose(back.texels, atlas.texels, atol=1.0 / 255.0)
    assert np.allclose(back.tri_uv, atlas.tri_uv)
