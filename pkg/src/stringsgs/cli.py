"""Command-line entry point: ingest, segment, synth, train, render, eval.

Exit status is 0 on success, 2 on usage or configuration errors and 1 on
runtime failures. ``STRINGSGS_THREADS`` caps the kernel thread count; the
results do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import shutil
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .colmap_io import assemble_bundle, load_bundle, read_colmap_model, read_ply_gaussians, write_model_binary, write_ply_gaussians
from .config import MODES, RunConfig
from .evaluation import builtin_recognizer, evaluate_scene, load_ground_truth, make_recognizer, save_png, write_reports
from .render import render
from .seg3d import DEFAULT_DILATION, classify_points, export_partition, init_gaussians
from .train import prepare_masks, run_pipeline

log = logging.getLogger("stringsgs")

THREADS_ENV = "STRINGSGS_THREADS"
METRICS_COLUMNS = ("iteration", "phase", "loss", "psnr", "ssim", "cer", "gaussian_count", "wall_clock_s")
RUN_FILE = "run.json"
CONFIG_FILE = "config.txt"
PRESETS = ("desk", "reference")

# flag name -> config key for the explicit training overrides
TRAIN_FLAGS = {
    "seed": "seed", "t1": "t1", "t2": "t2", "alpha": "alpha", "beta": "beta", "gamma": "gamma",
    "n_max": "n_max", "tau": "tau", "dilation": "dilation", "eval_interval": "eval_interval",
    "checkpoint_interval": "checkpoint_interval",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _write_csv_row(path: Path, row) -> None:
    with open(path, "a", newline="", encoding="utf-8") as f:
        csv.writer(f).writerow(row)


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def _run_info(run_dir: Path) -> dict:
    f = run_dir / RUN_FILE
    return json.loads(f.read_text(encoding="utf-8")) if f.exists() else {}


def _bundle_for(path: Path, explicit):
    """The bundle named on the command line, else the one recorded in the run directory."""
    if explicit:
        return load_bundle(explicit)
    for d in (path, path.parent, path.parent.parent):
        info = _run_info(d) if d.is_dir() else {}
        if info.get("bundle"):
            return load_bundle(info["bundle"])
    raise UsageError(f"no --bundle given and no {RUN_FILE} found next to {path}")


def _select_views(bundle, views: str):
    if views == "eval":
        return bundle.eval_poses
    if views == "train":
        return bundle.train_poses
    if views == "all":
        return list(bundle.poses)
    wanted = [v.strip() for v in views.split(",") if v.strip()]
    by_name = {p.name: p for p in bundle.poses}
    by_stem = {Path(p.name).stem: p for p in bundle.poses}
    out = []
    for v in wanted:
        p = by_name.get(v) or by_stem.get(v)
        if p is None:
            raise UsageError(f"unknown view {v!r}")
        out.append(p)
    return out


_ITER_RE = re.compile(r"(\d+)")


def _checkpoint_key(path: Path):
    m = _ITER_RE.search(path.stem)
    return (path.stem == "final", int(m.group(1)) if m else -1, path.name)


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    model = read_colmap_model(args.colmap_dir)
    bundle = assemble_bundle(model, args.images, args.masks)
    out = Path(args.output)
    write_model_binary(model, out / "sparse" / "0")
    for sub, src_dir in (("images", Path(args.images)), ("masks", Path(args.masks))):
        (out / sub).mkdir(parents=True, exist_ok=True)
        for p in bundle.poses:
            for cand in (src_dir / p.name, src_dir / (Path(p.name).stem + ".png")):
                if cand.exists():
                    shutil.copyfile(cand, out / sub / cand.name)
                    break
    n_eval = len(bundle.eval_poses)
    print(f"bundle {out}: {len(bundle.poses)} images ({n_eval} eval), {len(bundle.points)} points")
    return 0


def cmd_segment(args) -> int:
    bundle = load_bundle(args.bundle)
    masks = prepare_masks(bundle, args.dilate)
    part = classify_points(bundle.points, bundle.intrinsics, bundle.poses, masks, args.tau)
    scene = init_gaussians(bundle.points, part, bundle.scene_extent())
    out = Path(args.output)
    write_ply_gaussians(scene, out)
    text_path = out.with_name(out.stem + "_text.ply")
    nontext_path = out.with_name(out.stem + "_nontext.ply")
    export_partition(bundle.points, part, text_path, nontext_path)
    print(f"{len(part.text_ids)} text / {len(part.nontext_ids)} non-text points -> {out}, {text_path.name}, {nontext_path.name}")
    return 0


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate_scene

    if args.spec == "default":
        spec = SynthSpec()
    else:
        try:
            spec = SynthSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
        except (TypeError, ValueError, KeyError) as e:
            raise UsageError(f"invalid synth spec {args.spec}: {e}") from e
    scene = generate_scene(spec, args.output)
    print(f"dataset {args.output}: {len(scene.poses)} views, {len(scene.model.points)} points")
    return 0


def build_config(args) -> tuple[RunConfig, set[str]]:
    """Preset, then config file, then flags; returns the config and the explicitly set keys."""
    try:
        explicit: dict = {}
        if args.config:
            explicit.update(RunConfig.parse_text(Path(args.config).read_text(encoding="utf-8")))
        for kv in args.set or []:
            if "=" not in kv:
                raise UsageError(f"--set expects key=value, got {kv!r}")
            k, v = (s.strip() for s in kv.split("=", 1))
            explicit[k] = RunConfig.parse_value(k, v)
        for flag, key in TRAIN_FLAGS.items():
            v = getattr(args, flag)
            if v is not None:
                explicit[key] = v
        if args.mode is not None:
            explicit["mode"] = args.mode
        if args.no_wall_clock:
            explicit["wall_clock"] = False
        if args.preset == "desk":
            # an explicit t2 sets the desk budget so the schedule is rescaled with it
            base = RunConfig.desk(total=explicit.get("t2", args.iterations), t1=explicit.get("t1", 300))
        else:
            base = RunConfig()
        return base.with_overrides(**explicit), set(explicit)
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"invalid configuration: {e}") from e
    except OSError as e:
        raise UsageError(f"cannot read config: {e}") from e


def cmd_train(args) -> int:
    cfg, explicit = build_config(args)
    ignored = cfg.mode_warnings(explicit)
    if ignored:
        print(f"stringsgs.cli: warning: mode {cfg.mode} ignores {', '.join(ignored)}", file=sys.stderr)
    bundle = load_bundle(args.bundle)
    gt = load_ground_truth(bundle)
    run_dir = Path(args.output)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / CONFIG_FILE)
    info = {
        "version": __version__,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "bundle": str(Path(args.bundle).resolve()),
        "config": CONFIG_FILE,
        "reproduce": f"stringsgs train {Path(args.bundle).resolve()} --preset reference --config {CONFIG_FILE} -o <run_dir>",
    }
    (run_dir / RUN_FILE).write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    metrics = run_dir / "metrics.csv"
    metrics.write_text("", encoding="utf-8")
    _write_csv_row(metrics, METRICS_COLUMNS)
    t0 = time.perf_counter()

    def hook(t, phase, scene, loss):
        eval_due = t == cfg.t2 or (cfg.two_phase and t == cfg.t1) or t in cfg.eval_iterations or (cfg.eval_interval and t % cfg.eval_interval == 0)
        if cfg.checkpoint_interval and t % cfg.checkpoint_interval == 0 and len(scene):
            write_ply_gaussians(scene, ckpt_dir / f"iter_{t:06d}.ply")
        if phase == "phase1" and t == cfg.t1 and len(scene):
            write_ply_gaussians(scene, ckpt_dir / f"phase1_{t:06d}.ply")
        if not eval_due:
            return
        res = evaluate_scene(scene, bundle, gt, builtin_recognizer, cfg.background)
        wall = time.perf_counter() - t0 if cfg.wall_clock else 0.0
        _write_csv_row(metrics, [t, phase, _num(loss), _num(res.psnr), _num(res.ssim), _num(res.cer), len(scene), _num(wall)])
        log.info("t=%d %s loss=%.5f psnr=%.3f cer=%s n=%d", t, phase, loss, res.psnr, res.cer, len(scene))

    final, _ = run_pipeline(bundle, cfg, hook)
    write_ply_gaussians(final, run_dir / "final.ply")
    print(f"run {run_dir}: {len(final)} Gaussians after {cfg.t2} iterations ({cfg.mode})")
    return 0


def cmd_render(args) -> int:
    ckpt = Path(args.checkpoint)
    scene = read_ply_gaussians(ckpt)
    bundle = _bundle_for(ckpt, args.bundle)
    background = RunConfig().background
    info_dir = ckpt.parent if (ckpt.parent / CONFIG_FILE).exists() else ckpt.parent.parent
    if (info_dir / CONFIG_FILE).exists():
        background = RunConfig.load(info_dir / CONFIG_FILE).background
    out = Path(args.output)
    poses = _select_views(bundle, args.views)
    for p in poses:
        save_png(render(scene, bundle.intr(p), p, background), out / (Path(p.name).stem + ".png"))
    print(f"rendered {len(poses)} view(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise UsageError(f"{run_dir} is not a directory")
    bundle = _bundle_for(run_dir, args.bundle)
    cfg = RunConfig.load(run_dir / CONFIG_FILE) if (run_dir / CONFIG_FILE).exists() else RunConfig()
    try:
        recognizer = make_recognizer(args.recognizer, run_dir / "ocr_inputs")
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.recognizer != "builtin":
        (run_dir / "ocr_inputs").mkdir(exist_ok=True)
    gt = load_ground_truth(bundle, args.gt_dir)
    ckpts = sorted((run_dir / "checkpoints").glob("*.ply"), key=_checkpoint_key)
    if (run_dir / "final.ply").exists():
        ckpts.append(run_dir / "final.ply")
    if not ckpts:
        raise UsageError(f"no checkpoints in {run_dir}")
    results = []
    for c in ckpts:
        scene = read_ply_gaussians(c)
        results.append((c.stem, len(scene), evaluate_scene(scene, bundle, gt, recognizer, cfg.background)))
    table = write_reports(results, run_dir / "cer_report.csv", run_dir / "eval_summary.csv")
    (run_dir / "eval_summary.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stringsgs", description="Text-aware Gaussian splatting at desk scale.")
    ap.add_argument("--version", action="version", version=f"stringsgs {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a COLMAP model with images and masks into a bundle")
    p.add_argument("colmap_dir")
    p.add_argument("images")
    p.add_argument("masks")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("segment", help="split the sparse cloud into text and non-text points")
    p.add_argument("bundle")
    p.add_argument("--tau", type=int, default=1, help="views in which a point must hit a text mask")
    p.add_argument("--dilate", type=float, default=DEFAULT_DILATION, help="mask dilation as a fraction of image width")
    p.add_argument("-o", "--output", required=True, help="tagged Gaussian PLY; point clouds are written alongside")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("synth", help="generate a synthetic text scene")
    p.add_argument("spec", help="JSON spec file or 'default'")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="optimize a scene and write checkpoints and metrics.csv")
    p.add_argument("bundle")
    p.add_argument("-o", "--output", required=True, help="run directory")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--config", help="key = value file, applied over the preset")
    p.add_argument("--preset", choices=PRESETS, default="desk", help="desk: compressed schedule (default); reference: 30K iterations")
    p.add_argument("--iterations", type=int, default=2000, help="total iterations of the desk preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--t1", type=int)
    p.add_argument("--t2", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--dilation", type=float)
    p.add_argument("--eval-interval", dest="eval_interval", type=int)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any other config key; repeatable")
    p.add_argument("--no-wall-clock", action="store_true", help="write 0 for wall_clock_s so reruns are byte-identical")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a checkpoint to PNG")
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--views", default="eval", help="eval, train, all, or comma-separated view names")
    p.add_argument("--bundle", help="bundle directory (default: the one recorded in the run directory)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score every checkpoint of a run")
    p.add_argument("run_dir")
    p.add_argument("--recognizer", default="builtin", help="builtin or cmd:<template with {image}>")
    p.add_argument("--bundle", help="bundle directory (default: the one recorded in the run directory)")
    p.add_argument("--gt-dir", help="ground-truth word sidecars (default: <bundle>/gt_text)")
    p.set_defaults(func=cmd_eval)
    return ap


def _origin(exc: BaseException) -> str:
    """Module of the innermost package frame that raised ``exc``."""
    pkg = Path(__file__).resolve().parent
    name = "stringsgs.cli"
    for fr in traceback.extract_tb(exc.__traceback__):
        f = Path(fr.filename).resolve()
        if f.parent == pkg:
            name = f"stringsgs.{f.stem}"
    return name


def _set_threads() -> None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    import numba

    if not 1 <= n <= numba.config.NUMBA_NUM_THREADS:
        raise UsageError(f"{THREADS_ENV} must lie in [1, {numba.config.NUMBA_NUM_THREADS}], got {n}")
    numba.set_num_threads(n)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        _set_threads()
        return args.func(args)
    except UsageError as e:
        print(f"stringsgs.cli: usage error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("stringsgs.cli: interrupted", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - report every runtime failure with its origin
        print(f"{_origin(e)}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
