"""Command-line interface.

Subcommands:
    synth        generate a synthetic dataset directory
    pipeline     full reconstruction run on a dataset
    eval         evaluate an existing atlas against a dataset's eval split
    ablate       sparsity | pairwise | align | pose-noise sweeps

Exit codes: 0 ok, 2 usage, 3 validation failure, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, synth
from .atlas import load_atlas
from .pipeline import PipelineOptions, mean_row, run_pipeline
from .refine import OptimConfig
from .scene import ValidationError, load_scene, save_scene, split_views
from .synth import SynthSpec

EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


def _add_common_pipeline_args(p):
    # flag defaults are None so that "flag given" is distinguishable from
    # "fall back to the config file, then the built-in default"
    p.add_argument("--data", required=True, help="dataset directory (with manifest.json)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--gan-weight", type=float, default=None)
    p.add_argument("--tex-side", type=int, default=None,
                   help="chart side override (default: resolution policy)")
    p.add_argument("--config", default=None,
                   help="JSON config file; flags take precedence over it")
    p.add_argument("--dump-buffers", action="store_true",
                   help="write per-view debug renders of the final atlas")


OPTIM_FLAGS = ("iterations", "crop", "gan_weight", "seed")
OPTION_FLAGS = ("k", "align", "pairwise", "omega4", "misalign", "pose_noise",
                "tex_side")


def _pipeline_options(args, **overrides):
    """Resolve options with precedence flags > config file > defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            file_cfg = json.load(f)
    optim_cfg = dict(file_cfg.get("optim", {}))
    for name in OPTIM_FLAGS:
        val = getattr(args, name, None)
        if val is not None:
            optim_cfg[name] = val
    opts = PipelineOptions(optim=OptimConfig(**optim_cfg),
                           seed=optim_cfg.get("seed", 0))
    for key, val in file_cfg.items():
        if key != "optim" and hasattr(opts, key):
            opts = replace(opts, **{key: val})
    flags = {name: getattr(args, name, None) for name in OPTION_FLAGS}
    opts = replace(opts, **{k: v for k, v in flags.items() if v is not None})
    return replace(opts, **overrides)


def _load(args):
    return load_scene(Path(args.data) / "manifest.json")


def _dump_buffers(scene, out_dir):
    from . import raster
    from .scene import write_rgb
    atlas = load_atlas(Path(out_dir) / "atlas.png", Path(out_dir) / "atlas.json")
    dbg = Path(out_dir) / "renders"
    dbg.mkdir(exist_ok=True)
    for fi in scene.eval_indices:
        fr = scene.frames[fi]
        buf = raster.rasterize(scene.mesh, atlas.tri_uv, atlas.texels, fr.pose, fr.intrinsics)
        write_rgb(buf.rgb, dbg / f"eval_{fi:04d}.png")
        write_rgb(fr.rgb, dbg / f"eval_{fi:04d}_gt.png")


def cmd_synth(args):
    spec = SynthSpec(n_views=args.views, seed=args.seed, texture=args.texture,
                     tex_side=args.tex_side)
    scene, _ = synth.make_scene(spec)
    # corruption applies to the frames the standard split will call train,
    # so evaluation views stay clean downstream
    scene = split_views(scene, 0.1)
    if args.misalign > 0:
        scene, _ = synth.inject_misalignment(scene, args.misalign, seed=args.seed)
    if args.pose_noise > 0:
        from .scene import perturb_poses
        scene = perturb_poses(scene, args.pose_noise, seed=args.seed)
    save_scene(scene, args.out)
    print(f"wrote {len(scene.frames)} frames to {args.out}")
    return 0


def cmd_pipeline(args):
    scene = _load(args)
    opts = _pipeline_options(args)
    rows, _, _ = run_pipeline(scene, args.out, opts)
    m = mean_row(rows)
    print(f"eval ssim={m['ssim']:.4f} grad={m['grad']:.3f} psnr={m['psnr']:.2f}")
    if args.dump_buffers:
        from .pipeline import prepare_scene
        _dump_buffers(prepare_scene(scene, opts), args.out)
    return 0


def cmd_eval(args):
    scene = split_views(_load(args), 0.1)
    atlas_path = Path(args.atlas)
    atlas = load_atlas(atlas_path, atlas_path.with_suffix(".json"))
    rows = metrics.evaluate(scene, atlas)
    out = Path(args.out) if args.out else atlas_path.parent
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report(rows, out / "metrics.csv")
    m = mean_row(rows)
    print(f"eval ssim={m['ssim']:.4f} grad={m['grad']:.3f} psnr={m['psnr']:.2f}")
    return 0


def _write_sweep(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        wr.writeheader()
        wr.writerows(rows)


def cmd_ablate(args):
    scene = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = []
    if args.mode == "sparsity":
        ks = [int(x) for x in args.k_list.split(",")]
        for k in ks:
            rows, _, _ = run_pipeline(scene, out / f"k{k}",
                                      _pipeline_options(args, k=k, misalign=0))
            sweep.append({"variant": f"k={k}", **mean_row(rows)})
    elif args.mode == "pairwise":
        for name, overrides in (("unary", {"pairwise": False, "misalign": 0}),
                                ("pairwise", {"pairwise": True, "misalign": 0,
                                              "omega4": args.omega4})):
            rows, _, _ = run_pipeline(scene, out / name, _pipeline_options(args, **overrides))
            sweep.append({"variant": name, **mean_row(rows)})
    elif args.mode == "align":
        for mode in ("off", "global", "patchwise"):
            rows, _, _ = run_pipeline(
                scene, out / mode,
                _pipeline_options(args, align=mode, misalign=args.misalign))
            sweep.append({"variant": mode, **mean_row(rows)})
    elif args.mode == "pose-noise":
        rows, _, _ = run_pipeline(scene, out / "noisy",
                                  _pipeline_options(args, pose_noise=args.fraction,
                                                    misalign=0))
        sweep.append({"variant": f"pose-noise={args.fraction}", **mean_row(rows)})
    _write_sweep(out / "ablation.csv", sweep)
    for row in sweep:
        print(f"{row['variant']}: ssim={row['ssim']:.4f} grad={row['grad']:.3f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="texrecon",
                                     description="texture reconstruction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texture", choices=("checker", "noise"), default="checker")
    p.add_argument("--tex-side", type=int, default=256)
    p.add_argument("--misalign", type=int, default=0)
    p.add_argument("--pose-noise", type=float, default=0.0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pipeline", help="run the full pipeline")
    _add_common_pipeline_args(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--align", choices=("off", "global", "patchwise"), default=None)
    p.add_argument("--pairwise", action="store_true", default=None)
    p.add_argument("--omega4", type=float, default=None)
    p.add_argument("--misalign", type=int, default=None)
    p.add_argument("--pose-noise", type=float, default=None)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("eval", help="evaluate an atlas")
    p.add_argument("--data", required=True)
    p.add_argument("--atlas", required=True, help="atlas PNG (JSON sidecar alongside)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    p.add_argument("mode", choices=("sparsity", "pairwise", "align", "pose-noise"))
    _add_common_pipeline_args(p)
    p.add_argument("--k", dest="k_list", default="1,2,3,4,5")
    p.add_argument("--omega4", type=float, default=1.0)
    p.add_argument("--misalign", type=int, default=3)
    p.add_argument("--fraction", type=float, default=0.05)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError,) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
