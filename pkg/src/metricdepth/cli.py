"""Command-line driver: one subcommand per pipeline stage.

Every run writes its outputs plus ``manifest.json`` (config, config hash,
input and output hashes, library versions; no timestamps) under ``--out``.
Exit status: 0 success, 1 invalid input or configuration, 2 a pipeline stage
failed (the stage is named on stderr).
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path


from . import __version__, io
from .config import PipelineConfig, load
from .dataset import DiskBundle, frame_dir, write_bundle
from .errors import MetricDepthError, StageError
from .geometry import compose

log = logging.getLogger("metricdepth")

MANIFEST_SCHEMA = 1
_VERSIONED = ("numpy", "scipy", "numba", "Pillow", "PyYAML")


class UsageError(Exception):
    """Bad command-line input (exit status 1)."""


# -- manifests -----------------------------------------------------------------------


def _versions():
    out = {"metricdepth": __version__, "python": platform.python_version()}
    for dist in _VERSIONED:
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _hash_tree(root, prefix):
    root = Path(root)
    if root.is_file():
        return {prefix: io.sha256_file(root)}
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")
    return {f"{prefix}/{p.relative_to(root).as_posix()}": io.sha256_file(p) for p in files}


def write_manifest(out, command, cfg, arguments, inputs):
    """``inputs`` maps a role name to a file or directory path."""
    hashed = {}
    for role, path in sorted(inputs.items()):
        if path is not None:
            hashed.update(_hash_tree(path, role))
    doc = {
        "schema_version": MANIFEST_SCHEMA,
        "command": command,
        "arguments": arguments,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "inputs": hashed,
        "outputs": _hash_tree(out, "out"),
        "versions": _versions(),
    }
    io.write_json(Path(out) / "manifest.json", doc)
    return doc


# -- shared helpers ------------------------------------------------------------------


def _config(args):
    cfg = load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _run_frames(fn, tasks, jobs):
    """Map ``fn`` over ``tasks`` in order, optionally in worker processes."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


_BUNDLES = {}


def _bundle(root, depth_range):
    key = (str(root), tuple(depth_range))
    if key not in _BUNDLES:
        _BUNDLES[key] = DiskBundle(root, depth_range)
    return _BUNDLES[key]


def _frames_arg(spec, n):
    if spec is None:
        return list(range(n))
    frames = sorted(set(spec))
    bad = [t for t in frames if not 0 <= t < n]
    if bad:
        raise UsageError(f"frames {bad} outside the bundle's range [0, {n})")
    return frames


def _dense_views(bundle, depths_root, t, names=None):
    """Dense views ``(Camera, rgb, DepthFrame)`` at frame ``t``."""
    views = []
    for name in names or bundle.camera_names:
        if depths_root is None:
            depth = bundle.depth(t, name)
        else:
            depth = io.read_depth(frame_dir(depths_root, t) / name / "depth.pfm", bundle.depth_range)
        views.append((bundle.camera(t, name), bundle.rgb(t, name), depth))
    return views


def _densifier_args(p, choices):
    p.add_argument("--densifier", choices=choices, default=choices[0], help="densifier implementation")
    p.add_argument("--densifier-cmd", help="command template for --densifier cmd")


# -- synth-scene ---------------------------------------------------------------------


def cmd_synth_scene(args, cfg):
    from dataclasses import replace

    from .fixtures import PRESETS, street_bundle
    from .synth import SynthScene, sample_cloud

    spec = PRESETS[args.preset]
    changes = {"seed": cfg.seed}
    if args.frames is not None:
        if args.frames < 1:
            raise UsageError("--frames must be >= 1")
        changes["n_frames"] = args.frames
    spec = replace(spec, **changes)
    scene = SynthScene.from_dict(io.read_json(args.scene)) if args.scene else None
    bundle = street_bundle(spec, with_depth=not args.no_depth, scene=scene)
    write_bundle(args.out, bundle)
    if args.cloud_density:
        io.write_ply(Path(args.out) / "cloud.ply", sample_cloud(bundle.scene, args.cloud_density, seed=cfg.seed))
    return {"preset": args.preset, "frames": spec.n_frames, "no_depth": args.no_depth, "cloud_density": args.cloud_density}, {
        "scene": args.scene
    }


# -- curate-depth --------------------------------------------------------------------


def _make_backend(kind, command, bundle, cfg):
    from .curation import ExternalBackend, NearestMedianBackend, OracleBackend

    if kind == "nn":
        return NearestMedianBackend(cfg.curation.median_size)
    if kind == "oracle":
        if bundle.scene is None:
            raise UsageError("--densifier oracle needs a synthetic bundle with scene.json")
        return OracleBackend(bundle.scene)
    if not command:
        raise UsageError("--densifier cmd needs --densifier-cmd")
    return ExternalBackend(command)


def _curate_task(task):
    from .curation import curate_frame

    root, t, cfg_dict, kind, command = task
    cfg = PipelineConfig.from_dict(cfg_dict)
    bundle = _bundle(root, cfg.depth_range)
    backend = _make_backend(kind, command, bundle, cfg)
    return t, curate_frame(bundle, t, cfg, backend)


def cmd_curate_depth(args, cfg):
    bundle = _bundle(args.bundle, cfg.depth_range)
    backend_kind = args.densifier
    _make_backend(backend_kind, args.densifier_cmd, bundle, cfg)  # validate before fanning out
    frames = _frames_arg(args.frames, bundle.n_frames)
    tasks = [(str(Path(args.bundle).resolve()), t, cfg.to_dict(), backend_kind, args.densifier_cmd) for t in frames]
    for t, views in _run_frames(_curate_task, tasks, args.jobs):
        for name in bundle.camera_names:
            d = frame_dir(args.out, t) / name
            io.write_depth(d / "depth.pfm", views[name].depth)
            if args.save_prompts:
                io.write_depth(d / "prompt.pfm", views[name].prompt.depth)
                io.write_labels(d / "source.png", views[name].prompt.source)
    return {"frames": frames, "densifier": backend_kind, "densifier_cmd": args.densifier_cmd, "save_prompts": args.save_prompts}, {
        "bundle": args.bundle
    }


# -- render-condition ----------------------------------------------------------------


def _condition_task(task):
    from .nvs import condition_at_offset, condition_at_view, lateral_shift, surround_cloud

    root, depths, t, offsets, shifts, voxel, cfg_dict = task
    cfg = PipelineConfig.from_dict(cfg_dict)
    bundle = _bundle(root, cfg.depth_range)
    n_frames = bundle.n_frames
    frames = {}

    def views(s):
        if s not in frames:
            frames[s] = _dense_views(bundle, depths, s)
        return frames[s]

    out = []
    for n in offsets:
        if not 0 <= t + n < n_frames:
            continue
        seq = [None] * n_frames
        seq[t], seq[t + n] = views(t), views(t + n)
        for name, cond in condition_at_offset(seq, t, n, cfg.depth_range, voxel).items():
            out.append((name, f"offset{n:+d}", cond))
    if shifts:
        cloud = surround_cloud(views(t), voxel)
        ego_y = bundle.script[t].ego.rotation[:, 1]
        for tau in shifts:
            for cam, _, _ in views(t):
                target = lateral_shift(cam.pose, tau, ego_y)
                cond = condition_at_view(None, target, cam.intrinsics, cfg.depth_range, cloud=cloud)
                out.append((cam.name, f"shift{tau:+.2f}m", cond))
    return t, out


def cmd_render_condition(args, cfg):
    bundle = _bundle(args.bundle, cfg.depth_range)
    frames = _frames_arg(args.frames, bundle.n_frames)
    offsets = list(args.offsets) if args.offsets is not None else []
    shifts = list(args.shifts) if args.shifts is not None else []
    if not offsets and not shifts:
        offsets = list(cfg.nvs.offsets)
    if args.frames is not None:
        for t in frames:
            for n in offsets:
                if not 0 <= t + n < bundle.n_frames:
                    from .errors import OffsetOutOfRange

                    raise OffsetOutOfRange(f"frame {t} with offset {n:+d} outside [0, {bundle.n_frames})")
    root = str(Path(args.bundle).resolve())
    depths = str(Path(args.depths).resolve()) if args.depths else None
    tasks = [(root, depths, t, offsets, shifts, args.voxel, cfg.to_dict()) for t in frames]
    for t, conds in _run_frames(_condition_task, tasks, args.jobs):
        for name, tag, cond in conds:
            d = Path(args.out) / f"{t:04d}" / name / tag
            io.write_rgb(d / "cond_rgb.png", cond.rgb)
            io.write_depth(d / "cond_depth.pfm", cond.depth)
            io.write_mask(d / "cond_mask.png", cond.valid)
    arguments = {"frames": frames, "offsets": offsets, "shifts": shifts, "voxel": args.voxel}
    return arguments, {"bundle": args.bundle, "depths": args.depths}


# -- gen-trajectory ------------------------------------------------------------------


def _nvs_overrides(args, cfg):
    changes = {}
    if args.tau_min is not None or args.tau_max is not None:
        lo = cfg.nvs.tau_range[0] if args.tau_min is None else args.tau_min
        hi = cfg.nvs.tau_range[1] if args.tau_max is None else args.tau_max
        changes["nvs.tau_range"] = [lo, hi]
    if getattr(args, "tau_mode", None):
        changes["nvs.tau_mode"] = args.tau_mode
    return cfg.replace(**changes) if changes else cfg


def cmd_gen_trajectory(args, cfg):
    from .nvs import Trajectory, perturb_trajectory

    if bool(args.trajectory) == bool(args.bundle):
        raise UsageError("give exactly one of --trajectory or --bundle")
    if args.trajectory:
        traj = Trajectory.from_dict(io.read_json(args.trajectory))
    else:
        traj = Trajectory(tuple(_bundle(args.bundle, cfg.depth_range).script.egos))
    novel, taus = perturb_trajectory(traj, cfg.seed, cfg.nvs.tau_range, cfg.nvs.tau_mode)
    io.write_json(Path(args.out) / "trajectory.json", novel.to_dict())
    io.write_json(Path(args.out) / "taus.json", {"taus": [float(t) for t in taus]})
    return {}, {"trajectory": args.trajectory, "bundle": args.bundle}


# -- scc-roundtrip -------------------------------------------------------------------


def _make_view_densifier(kind, command, bundle):
    from .nvs import ExternalViewDensifier, NearestFillDensifier, OracleViewDensifier

    if kind == "nn":
        return NearestFillDensifier()
    if kind == "oracle":
        if bundle.scene is None:
            raise UsageError("--densifier oracle needs a synthetic bundle with scene.json")
        return OracleViewDensifier(bundle.scene)
    if not command:
        raise UsageError("--densifier cmd needs --densifier-cmd")
    return ExternalViewDensifier(command)


def _scc_task(task):
    from .nvs import scc_roundtrip, surround_cloud

    root, depths, t, novel_ego, cameras, kind, command, cfg_dict = task
    cfg = PipelineConfig.from_dict(cfg_dict)
    bundle = _bundle(root, cfg.depth_range)
    densifier = _make_view_densifier(kind, command, bundle)
    views = _dense_views(bundle, depths, t)
    cloud = surround_cloud(views)
    ego = bundle.script[t].ego
    tau = float((novel_ego.translation - ego.translation) @ ego.rotation[:, 1])
    out = []
    for name in cameras:
        novel = compose(novel_ego, bundle.rig[name].pose)
        with _stage_scope("scc_roundtrip"):
            res = scc_roundtrip(views, name, novel, densifier, cfg.depth_range, cloud=cloud)
        meta = {
            "frame": t,
            "camera": name,
            "n": 0,
            "tau": tau,
            "pose_original": bundle.camera(t, name).pose.matrix.tolist(),
            "pose_novel": novel.matrix.tolist(),
            "residuals": res.residuals,
        }
        out.append((name, res, meta))
    return t, out


def _stage_scope(name):
    from .curation import stage

    return stage(name)


def cmd_scc_roundtrip(args, cfg):
    from .nvs import Trajectory, perturb_trajectory

    bundle = _bundle(args.bundle, cfg.depth_range)
    _make_view_densifier(args.densifier, args.densifier_cmd, bundle)
    frames = _frames_arg(args.frames, bundle.n_frames)
    cameras = args.cameras or list(bundle.camera_names)
    unknown = [c for c in cameras if c not in bundle.camera_names]
    if unknown:
        raise UsageError(f"unknown cameras {unknown}")
    egos = Trajectory(tuple(bundle.script.egos))
    if args.trajectory and args.shift is not None:
        raise UsageError("give at most one of --trajectory and --shift")
    if args.trajectory:
        novel = Trajectory.from_dict(io.read_json(args.trajectory))
        if len(novel) != len(egos):
            raise UsageError(f"trajectory has {len(novel)} poses, bundle has {len(egos)} frames")
    elif args.shift is not None:
        novel, _ = perturb_trajectory(egos, cfg.seed, (args.shift, args.shift))
    else:
        novel, _ = perturb_trajectory(egos, cfg.seed, cfg.nvs.tau_range, cfg.nvs.tau_mode)
    root = str(Path(args.bundle).resolve())
    depths = str(Path(args.depths).resolve()) if args.depths else None
    tasks = [(root, depths, t, novel[t], cameras, args.densifier, args.densifier_cmd, cfg.to_dict()) for t in frames]
    from .nvs import write_training_pair

    summary = []
    for t, results in _run_frames(_scc_task, tasks, args.jobs):
        for name, res, meta in results:
            write_training_pair(args.out, t, name, res, meta)
            summary.append({"frame": t, "camera": name, "tau": meta["tau"], **res.residuals})
    io.write_json(Path(args.out) / "residuals.json", {"pairs": summary})
    arguments = {"frames": frames, "cameras": cameras, "shift": args.shift, "densifier": args.densifier, "densifier_cmd": args.densifier_cmd}
    return arguments, {"bundle": args.bundle, "depths": args.depths, "trajectory": args.trajectory}


# -- eval-depth ----------------------------------------------------------------------


def _pfm_pairs(pred, gt):
    pred, gt = Path(pred), Path(gt)
    if gt.is_file():
        if not pred.is_file():
            raise UsageError(f"prediction {pred} is not a file")
        return [(gt.name, pred, gt)]
    if not gt.is_dir():
        raise FileNotFoundError(gt)
    rel = sorted(p.relative_to(gt) for p in gt.rglob("*.pfm"))
    if not rel:
        raise UsageError(f"no .pfm files under {gt}")
    missing = [r.as_posix() for r in rel if not (pred / r).is_file()]
    if missing:
        raise UsageError(f"{len(missing)} ground-truth frames have no prediction, e.g. {missing[0]}")
    return [(r.as_posix(), pred / r, gt / r) for r in rel]


def cmd_eval_depth(args, cfg):
    from .metrics import eval_sequence, format_table

    pairs = _pfm_pairs(args.pred, args.gt)
    preds = [io.read_depth(p, cfg.depth_range) for _, p, _ in pairs]
    gts = [io.read_depth(g, cfg.depth_range) for _, _, g in pairs]
    report = {"frames": [name for name, _, _ in pairs], "range": list(cfg.eval.range), "average": cfg.eval.average}
    rows = {}
    for scaling in ("median", "none"):
        agg, per = eval_sequence(preds, gts, cfg.eval.range, scaling, cfg.eval.average)
        report[scaling] = agg.to_dict()
        report[f"{scaling}_per_frame"] = [None if r is None else r.to_dict() for r in per]
        rows.setdefault(args.name, [None, None])[0 if scaling == "median" else 1] = agg
    table = format_table({k: tuple(v) for k, v in rows.items()})
    io.write_json(Path(args.out) / "report.json", report)
    io.write_bytes(Path(args.out) / "table.txt", table.encode())
    sys.stdout.write(table)
    return {"name": args.name}, {"pred": args.pred, "gt": args.gt}


# -- argument parsing ----------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="YAML pipeline configuration")
    p.add_argument("--seed", type=int, help="override the configuration seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (outputs do not depend on this)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))


def build_parser():
    ap = argparse.ArgumentParser(prog="metricdepth", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"metricdepth {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-scene", help="write a synthetic sensor bundle (and dense ray-cast depth)")
    _common(p)
    p.add_argument("--preset", choices=("street", "street-small"), default="street-small")
    p.add_argument("--frames", type=int, help="number of frames (default: preset)")
    p.add_argument("--scene", help="scene JSON replacing the preset's geometry")
    p.add_argument("--no-depth", action="store_true", help="omit dense depth.pfm files")
    p.add_argument("--cloud-density", type=float, help="also write cloud.ply sampled at this density (pts/m^2)")
    p.set_defaults(func=cmd_synth_scene)

    p = sub.add_parser("curate-depth", help="pseudo ground-truth depth for every frame and camera")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--frames", type=int, nargs="+")
    p.add_argument("--save-prompts", action="store_true", help="also write fused prompts and source tags")
    _densifier_args(p, ("nn", "oracle", "cmd"))
    p.set_defaults(func=cmd_curate_depth)

    p = sub.add_parser("render-condition", help="splat surround clouds into offset frames or shifted views")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--depths", help="dense depth root (curate-depth output); default: the bundle's depth.pfm")
    p.add_argument("--frames", type=int, nargs="+")
    p.add_argument("--offsets", type=int, nargs="+", help="frame offsets n (default: config nvs.offsets)")
    p.add_argument("--shifts", type=float, nargs="+", help="lateral view shifts in meters")
    p.add_argument("--voxel", type=float, help="voxel-downsample the surround cloud first (m)")
    p.set_defaults(func=cmd_render_condition)

    p = sub.add_parser("gen-trajectory", help="laterally perturb an ego trajectory")
    _common(p)
    p.add_argument("--trajectory", help="trajectory JSON")
    p.add_argument("--bundle", help="use the bundle's ego poses")
    p.add_argument("--tau-min", type=float)
    p.add_argument("--tau-max", type=float)
    p.add_argument("--tau-mode", choices=("per_frame", "per_trajectory"))
    p.set_defaults(func=cmd_gen_trajectory, nvs_overrides=True)

    p = sub.add_parser("scc-roundtrip", help="cycle-consistency training pairs")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--depths", help="dense depth root; default: the bundle's depth.pfm")
    p.add_argument("--frames", type=int, nargs="+")
    p.add_argument("--cameras", nargs="+")
    p.add_argument("--trajectory", help="novel ego trajectory JSON (default: perturb with the config seed)")
    p.add_argument("--shift", type=float, help="fixed lateral shift in meters instead of a random one")
    p.add_argument("--tau-min", type=float)
    p.add_argument("--tau-max", type=float)
    p.add_argument("--tau-mode", choices=("per_frame", "per_trajectory"))
    _densifier_args(p, ("nn", "oracle", "cmd"))
    p.set_defaults(func=cmd_scc_roundtrip, nvs_overrides=True)

    p = sub.add_parser("eval-depth", help="Abs.Rel / RMSE / delta accuracies with and without median scaling")
    _common(p)
    p.add_argument("--pred", required=True, help="PFM file or directory")
    p.add_argument("--gt", required=True, help="PFM file or directory")
    p.add_argument("--name", default="pred", help="row label in the table")
    p.set_defaults(func=cmd_eval_depth)
    return ap


def _setup_logging(level):
    logging.basicConfig(
        level=getattr(logging, level),
        format="level=%(levelname)s logger=%(name)s msg=%(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = _config(args)
        if getattr(args, "nvs_overrides", False):
            cfg = _nvs_overrides(args, cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        arguments, inputs = args.func(args, cfg)
        write_manifest(out, args.command, cfg, arguments, inputs)
    except StageError as e:
        print(f"error: stage {e.stage}: {type(e.cause).__name__}: {e.cause}", file=sys.stderr)
        return 2
    except (UsageError, MetricDepthError, ValueError, KeyError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    log.info("wrote %s", args.out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
