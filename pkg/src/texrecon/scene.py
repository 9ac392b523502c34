"""Scene data model and dataset I/O.

A scene bundles a triangle mesh with an ordered list of posed RGBD frames.
Scenes are immutable: splitting, subsampling and pose perturbation all
return new Scene objects, so a loaded scene can be shared freely across
workers.

Dataset directory layout (see `load_scene` / `save_scene`):
    manifest.json   {"mesh": path, "frames": [{"rgb", "depth", "pose",
                     "intrinsics": {fx, fy, cx, cy, width, height}}, ...]}
    mesh            ASCII OBJ, `v`/`f` records only
    rgb             8-bit PNG
    depth           raw float32, 16-byte header: b"TEXD", width u32,
                    height u32, reserved u32 (all little-endian)
    pose            16 whitespace-separated numbers, row-major 4x4
                    camera-to-world matrix

Euler convention: intrinsic X-Y-Z (roll, pitch, yaw applied in that
order).  The pose-noise model perturbs the Euler angles and translation
components and rebuilds the rotation matrix, which keeps it orthonormal
by construction.  RNG is numpy's PCG64 seeded explicitly, so runs replay
exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

DEPTH_MAGIC = b"TEXD"
EULER_ORDER = "XYZ"  # intrinsic


class ValidationError(ValueError):
    """A scene or file violated a structural invariant."""


def euler_to_matrix(euler):
    return Rotation.from_euler(EULER_ORDER, np.asarray(euler, dtype=np.float64)).as_matrix()


def matrix_to_euler(matrix):
    return Rotation.from_matrix(np.asarray(matrix, dtype=np.float64)).as_euler(EULER_ORDER)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world transform stored as Euler angles + translation."""

    euler: np.ndarray  # (3,) radians, intrinsic X-Y-Z
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        object.__setattr__(self, "euler", np.asarray(self.euler, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    @property
    def rotation(self):
        return euler_to_matrix(self.euler)

    @classmethod
    def from_matrix(cls, mat4):
        mat4 = np.asarray(mat4, dtype=np.float64)
        return cls(euler=matrix_to_euler(mat4[:3, :3]), translation=mat4[:3, 3].copy())

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class Frame:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) meters, 0 = invalid
    pose: CameraPose
    intrinsics: Intrinsics
    index: int

    def validate(self):
        h, w = self.rgb.shape[:2]
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValidationError(f"frame {self.index}: rgb must be HxWx3, got {self.rgb.shape}")
        if self.depth.shape != (h, w):
            raise ValidationError(
                f"frame {self.index}: depth shape {self.depth.shape} != rgb {h}x{w}"
            )
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValidationError(
                f"frame {self.index}: image {w}x{h} does not match intrinsics "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )
        if np.any(self.depth < 0):
            raise ValidationError(f"frame {self.index}: negative depth values")


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) meters
    triangles: np.ndarray  # (T, 3) vertex indices

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64))

    def validate(self):
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            bad = int(np.argmax(self.triangles.max(axis=1) >= len(self.vertices)))
            raise ValidationError(f"triangle {bad}: vertex index out of range")
        if self.triangles.size and self.triangles.min() < 0:
            raise ValidationError("negative vertex index in triangles")
        areas = self.areas()
        if np.any(areas <= 1e-12):
            bad = int(np.argmin(areas))
            raise ValidationError(f"triangle {bad}: degenerate (area {areas[bad]:.3e})")

    def corners(self):
        """(T, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    def areas(self):
        c = self.corners()
        cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def normals(self):
        """(T, 3) unit normals (right-hand rule over vertex order)."""
        c = self.corners()
        cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return cross / np.linalg.norm(cross, axis=1, keepdims=True)

    def centroids(self):
        return self.corners().mean(axis=1)


@dataclass(frozen=True)
class Scene:
    mesh: Mesh
    frames: tuple
    train_indices: tuple
    eval_indices: tuple

    @property
    def train_frames(self):
        return [self.frames[i] for i in self.train_indices]

    @property
    def eval_frames(self):
        return [self.frames[i] for i in self.eval_indices]


# ---------------------------------------------------------------------------
# file formats


def read_obj(path):
    path = Path(path)
    verts, faces = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(idx) != 3:
                raise ValidationError(f"{path}:{lineno}: only triangle faces supported")
            faces.append(idx)
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh, path):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_depth(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != DEPTH_MAGIC:
        raise ValidationError(f"{path}: bad depth header")
    w, h, _ = struct.unpack("<III", raw[4:16])
    depth = np.frombuffer(raw[16:], dtype="<f4")
    if depth.size != w * h:
        raise ValidationError(f"{path}: depth payload size mismatch")
    return depth.reshape(h, w).astype(np.float64)


def write_depth(depth, path):
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC + struct.pack("<III", w, h, 0))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_pose(path):
    vals = [float(x) for x in Path(path).read_text().split()]
    if len(vals) != 16:
        raise ValidationError(f"{path}: expected 16 numbers, got {len(vals)}")
    return CameraPose.from_matrix(np.array(vals).reshape(4, 4))


def write_pose(pose, path):
    Path(path).write_text(" ".join(f"{v:.12g}" for v in pose.matrix().ravel()) + "\n")


def read_rgb(path):
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return img / 255.0


def write_rgb(rgb, path):
    arr = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


# ---------------------------------------------------------------------------
# scene operations


def load_scene(manifest_path):
    """Load a dataset directory into a Scene (all frames start as train)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())

    mesh_path = root / manifest["mesh"]
    if not mesh_path.exists():
        raise FileNotFoundError(f"mesh not found: {mesh_path}")
    mesh = read_obj(mesh_path)
    mesh.validate()

    frames = []
    for i, rec in enumerate(manifest["frames"]):
        for key in ("rgb", "depth", "pose"):
            p = root / rec[key]
            if not p.exists():
                raise FileNotFoundError(f"frame {i}: {key} not found: {p}")
        intr = Intrinsics(**rec["intrinsics"])
        frame = Frame(
            rgb=read_rgb(root / rec["rgb"]),
            depth=read_depth(root / rec["depth"]),
            pose=read_pose(root / rec["pose"]),
            intrinsics=intr,
            index=i,
        )
        frame.validate()
        frames.append(frame)

    return Scene(mesh=mesh, frames=tuple(frames),
                 train_indices=tuple(range(len(frames))), eval_indices=())


def save_scene(scene, out_dir):
    """Write a scene as a dataset directory consumable by `load_scene`."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    write_obj(scene.mesh, out / "mesh.obj")
    recs = []
    for i, fr in enumerate(scene.frames):
        rgb_p, depth_p, pose_p = (f"frames/{i:04d}.png", f"frames/{i:04d}.depth",
                                  f"frames/{i:04d}.pose.txt")
        write_rgb(fr.rgb, out / rgb_p)
        write_depth(fr.depth, out / depth_p)
        write_pose(fr.pose, out / pose_p)
        recs.append({
            "rgb": rgb_p, "depth": depth_p, "pose": pose_p,
            "intrinsics": {
                "fx": fr.intrinsics.fx, "fy": fr.intrinsics.fy,
                "cx": fr.intrinsics.cx, "cy": fr.intrinsics.cy,
                "width": fr.intrinsics.width, "height": fr.intrinsics.height,
            },
        })
    (out / "manifest.json").write_text(json.dumps({"mesh": "mesh.obj", "frames": recs}, indent=1))
    return out / "manifest.json"


def split_views(scene, eval_fraction=0.1):
    """Reserve a uniformly-strided evaluation split.

    Evaluation views are every round(1/eval_fraction)-th frame in capture
    order, starting at index 0; the remainder is the training split.
    """
    if not 0 < eval_fraction < 1:
        raise ValueError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n = len(scene.frames)
    if n < 2:
        raise ValueError("need at least 2 frames to split")
    stride = max(2, round(1.0 / eval_fraction))
    eval_idx = tuple(range(0, n, stride))
    train_idx = tuple(i for i in range(n) if i % stride != 0)
    return replace(scene, train_indices=train_idx, eval_indices=eval_idx)


def subsample_train_views(scene, k):
    """Keep every k-th training view (train order); eval is untouched."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return replace(scene, train_indices=scene.train_indices[::k])


def perturb_poses(scene, fraction, seed=0):
    """Add uniform noise in +-fraction*|component| to each train pose component.

    All six pose components (three Euler angles, three translation
    components) are perturbed independently; evaluation poses are left
    untouched.  Deterministic for a fixed seed.
    """
    if fraction < 0:
        raise ValueError(f"fraction must be >= 0, got {fraction}")
    rng = np.random.default_rng(seed)
    train = set(scene.train_indices)
    frames = []
    for i, fr in enumerate(scene.frames):
        if i not in train or fraction == 0:
            frames.append(fr)
            continue
        comp = np.concatenate([fr.pose.euler, fr.pose.translation])
        noise = rng.uniform(-1.0, 1.0, size=6) * fraction * np.abs(comp)
        comp = comp + noise
        frames.append(replace(fr, pose=CameraPose(euler=comp[:3], translation=comp[3:])))
    return replace(scene, frames=tuple(frames))
