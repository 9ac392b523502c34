"""Scene data model, dataset I/O, splitting, subsampling, pose noise."""

import numpy as np
import pytest

from texrecon.scene import (
    CameraPose,
    Frame,
    Intrinsics,
    Mesh,
    Scene,
    ValidationError,
    euler_to_matrix,
    load_scene,
    matrix_to_euler,
    perturb_poses,
    read_depth,
    read_obj,
    read_pose,
    save_scene,
    split_views,
    subsample_train_views,
    write_depth,
    write_obj,
    write_pose,
)


def tiny_frame(i, w=8, h=6):
    rng = np.random.default_rng(i)
    return Frame(
        rgb=rng.uniform(0, 1, size=(h, w, 3)),
        depth=np.full((h, w), 2.0),
        pose=CameraPose(euler=np.zeros(3), translation=np.array([0.0, 0.0, float(i)])),
        intrinsics=Intrinsics(fx=10.0, fy=10.0, cx=w / 2, cy=h / 2, width=w, height=h),
        index=i,
    )


def tiny_scene(n):
    mesh = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float),
                triangles=np.array([[0, 1, 2]]))
    frames = tuple(tiny_frame(i) for i in range(n))
    return Scene(mesh=mesh, frames=frames,
                 train_indices=tuple(range(n)), eval_indices=())


# ---------------------------------------------------------------------------
# validation

def test_mesh_rejects_out_of_range_index():
    mesh = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float),
                triangles=np.array([[0, 1, 3]]))
    with pytest.raises(ValidationError):
        mesh.validate()


def test_mesh_rejects_degenerate_triangle():
    mesh = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float),
                triangles=np.array([[0, 1, 2]]))
    with pytest.raises(ValidationError):
        mesh.validate()


def test_mesh_normals_unit_length():
    rng = np.random.default_rng(0)
    verts = rng.uniform(-1, 1, size=(30, 3))
    tris = np.array([[i, i + 1, i + 2] for i in range(0, 27, 3)])
    mesh = Mesh(vertices=verts, triangles=tris)
    assert np.allclose(np.linalg.norm(mesh.normals(), axis=1), 1.0, atol=1e-9)


def test_frame_rejects_depth_size_mismatch():
    fr = tiny_frame(3)
    bad = Frame(rgb=fr.rgb, depth=np.zeros((4, 4)), pose=fr.pose,
                intrinsics=fr.intrinsics, index=3)
    with pytest.raises(ValidationError, match="3"):
        bad.validate()


def test_intrinsics_invariants():
    with pytest.raises(ValidationError):
        Intrinsics(fx=-1.0, fy=1.0, cx=0, cy=0, width=4, height=4)
    with pytest.raises(ValidationError):
        Intrinsics(fx=1.0, fy=1.0, cx=10, cy=0, width=4, height=4)


def test_rotation_orthonormal():
    rng = np.random.default_rng(1)
    for _ in range(20):
        eul = rng.uniform(-np.pi, np.pi, size=3)
        R = euler_to_matrix(eul)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert np.isclose(np.linalg.det(R), 1.0, atol=1e-9)
        assert np.allclose(euler_to_matrix(matrix_to_euler(R)), R, atol=1e-9)


# ---------------------------------------------------------------------------
# file formats

def test_obj_round_trip(tmp_path):
    mesh = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [0.25, 1, -0.5]], dtype=float),
                triangles=np.array([[0, 1, 2]]))
    write_obj(mesh, tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    assert np.allclose(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_depth_round_trip(tmp_path):
    depth = np.random.default_rng(0).uniform(0, 5, size=(6, 9))
    write_depth(depth, tmp_path / "d.depth")
    raw = (tmp_path / "d.depth").read_bytes()
    assert raw[:4] == b"TEXD" and len(raw) == 16 + 6 * 9 * 4
    back = read_depth(tmp_path / "d.depth")
    assert back.shape == (6, 9)
    assert np.allclose(back, depth, atol=1e-6)


def test_depth_rejects_bad_header(tmp_path):
    (tmp_path / "bad.depth").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(ValidationError):
        read_depth(tmp_path / "bad.depth")


def test_pose_round_trip(tmp_path):
    pose = CameraPose(euler=np.array([0.3, -0.2, 1.1]), translation=np.array([1.0, 2.0, 3.0]))
    write_pose(pose, tmp_path / "p.txt")
    back = read_pose(tmp_path / "p.txt")
    assert np.allclose(back.matrix(), pose.matrix(), atol=1e-9)


def test_scene_round_trip(tmp_path, small_scene):
    scene, _ = small_scene
    manifest = save_scene(scene, tmp_path / "ds")
    back = load_scene(manifest)
    assert len(back.frames) == len(scene.frames)
    assert [f.index for f in back.frames] == list(range(len(scene.frames)))
    for a, b in zip(scene.frames, back.frames):
        assert np.allclose(a.rgb, b.rgb, atol=1.0 / 255.0)
        assert np.allclose(a.depth, b.depth, atol=1e-6)
        assert np.allclose(a.pose.matrix(), b.pose.matrix(), atol=1e-9)


def test_load_scene_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scene(tmp_path / "nothing" / "manifest.json")


def test_load_scene_bad_triangle_index(tmp_path, small_scene):
    scene, _ = small_scene
    save_scene(scene, tmp_path / "ds")
    (tmp_path / "ds" / "mesh.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(ValidationError):
        load_scene(tmp_path / "ds" / "manifest.json")


# ---------------------------------------------------------------------------
# splitting / subsampling

def test_split_20_frames():
    scene = split_views(tiny_scene(20), 0.10)
    assert scene.eval_indices == (0, 10)
    assert len(scene.train_indices) == 18
    assert set(scene.eval_indices) | set(scene.train_indices) == set(range(20))
    assert set(scene.eval_indices) & set(scene.train_indices) == set()


def test_split_10_frames():
    scene = split_views(tiny_scene(10), 0.10)
    assert scene.eval_indices == (0,)
    assert len(scene.train_indices) == 9


def test_split_2807_frames():
    # strided split at fraction 0.10 over a long capture
    n = 2807
    stride = max(2, round(1 / 0.10))
    eval_idx = tuple(range(0, n, stride))
    assert len(eval_idx) == 281 and n - len(eval_idx) == 2526


def test_split_rejects_bad_fraction():
    with pytest.raises(ValueError):
        split_views(tiny_scene(5), 0.0)
    with pytest.raises(ValueError):
        split_views(tiny_scene(1), 0.1)


def test_subsample_k1_identity():
    scene = split_views(tiny_scene(20), 0.10)
    assert subsample_train_views(scene, 1).train_indices == scene.train_indices


def test_subsample_strides():
    scene = split_views(tiny_scene(20), 0.10)  # 18 train frames
    assert len(subsample_train_views(scene, 3).train_indices) == 6
    k5 = subsample_train_views(scene, 5).train_indices
    assert k5 == tuple(scene.train_indices[i] for i in (0, 5, 10, 15))
    with pytest.raises(ValueError):
        subsample_train_views(scene, 0)


# ---------------------------------------------------------------------------
# pose noise

def test_perturb_zero_fraction_identity():
    scene = split_views(tiny_scene(10), 0.10)
    out = perturb_poses(scene, 0.0, seed=3)
    for a, b in zip(scene.frames, out.frames):
        assert np.array_equal(a.pose.euler, b.pose.euler)
        assert np.array_equal(a.pose.translation, b.pose.translation)


def test_perturb_deterministic_and_bounded():
    scene = split_views(tiny_scene(10), 0.10)
    out1 = perturb_poses(scene, 0.05, seed=7)
    out2 = perturb_poses(scene, 0.05, seed=7)
    train = set(scene.train_indices)
    for i, (orig, a, b) in enumerate(zip(scene.frames, out1.frames, out2.frames)):
        assert np.array_equal(a.pose.euler, b.pose.euler)
        for comp_a, comp_o in zip(
                np.concatenate([a.pose.euler, a.pose.translation]),
                np.concatenate([orig.pose.euler, orig.pose.translation])):
            assert abs(comp_a - comp_o) <= 0.05 * abs(comp_o) + 1e-15
        if i not in train:  # eval poses untouched
            assert np.array_equal(a.pose.euler, orig.pose.euler)
        R = a.pose.rotation
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)


def test_perturb_zero_component_unchanged():
    scene = split_views(tiny_scene(10), 0.10)
    out = perturb_poses(scene, 0.05, seed=1)
    fi = scene.train_indices[0]
    # euler angles are all exactly zero in the tiny scene -> zero noise bound
    assert np.array_equal(out.frames[fi].pose.euler, scene.frames[fi].pose.euler)


def test_perturb_rejects_negative_fraction():
    with pytest.raises(ValueError):
        perturb_poses(split_views(tiny_scene(4), 0.1), -0.1)
