"""End-to-end pipeline: split, atlas, initialization, refinement, evaluation.

Shared by the CLI and the test harness so ablations run exactly the same
code path.  All artifacts land under an output directory together with a
run.json recording the fully resolved configuration.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import metrics, refine, synth, texinit
from .atlas import build_atlas, save_atlas, triangle_adjacency
from .scene import perturb_poses, split_views, subsample_train_views


@dataclass
class PipelineOptions:
    eval_fraction: float = 0.1
    k: int = 1  # train-view sparsity: keep every k-th training view
    pairwise: bool = False
    omega4: float = 1.0
    align: str = "global"  # off | global | patchwise
    tex_side: int = None  # None: resolution policy from the frames
    misalign: int = 0  # inject +-px circular shifts on train frames
    pose_noise: float = 0.0
    cue_weights: tuple = (1.0, 1.0, 1.0)
    plane_weights: tuple = (1.0, 0.5)  # (w_u, w_p)
    optim: refine.OptimConfig = field(default_factory=refine.OptimConfig)
    seed: int = 0


def prepare_scene(scene, opts):
    scene = split_views(scene, opts.eval_fraction)
    scene = subsample_train_views(scene, opts.k)
    if opts.misalign > 0:
        scene, _ = synth.inject_misalignment(scene, opts.misalign, seed=opts.seed)
    if opts.pose_noise > 0:
        scene = perturb_poses(scene, opts.pose_noise, seed=opts.seed)
    return scene


def run_pipeline(scene, out_dir, opts=None):
    """Full run; returns (metric rows, refined atlas, step records)."""
    opts = opts or PipelineOptions()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    scene = prepare_scene(scene, opts)
    atlas = build_atlas(scene.mesh, [scene.frames[i] for i in scene.train_indices],
                        side=opts.tex_side, w_u=opts.plane_weights[0],
                        w_p=opts.plane_weights[1])

    cues = texinit.compute_cues(scene, atlas, weights=opts.cue_weights)
    if opts.pairwise:
        assignment = texinit.solve_pairwise(cues, triangle_adjacency(scene.mesh),
                                            omega4=opts.omega4)
    else:
        assignment = texinit.solve_unary(cues)
    t_init, covered = texinit.bake(scene, atlas, assignment)

    refined, records = refine.run_texsmooth(scene, t_init, cfg=opts.optim,
                                            alignment_mode=opts.align,
                                            disc_seed=opts.seed)
    rows = metrics.evaluate(scene, refined)

    save_atlas(t_init, out / "atlas_init.png", out / "atlas_init.json")
    save_atlas(refined, out / "atlas.png", out / "atlas.json")
    texinit.save_assignment(assignment, out / "assignment.json")
    texinit.save_cue_table(cues, out / "cues.csv")
    refine.write_log(records, out / "train_log.csv")
    metrics.write_report(rows, out / "metrics.csv")
    write_run_config(out / "run.json", opts)
    return rows, refined, records


def write_run_config(path, opts):
    cfg = asdict(opts)
    with open(path, "w") as f:
        json.dump(cfg, f, indent=1, default=str)


def mean_row(rows):
    return next(r for r in rows if r["view_index"] == "MEAN")
