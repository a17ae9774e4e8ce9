"""Command-line interface: render, reconstruct, dataset, train, eval, predict.

Exit codes: 0 success, 1 runtime failure (bad file, render error, ...),
2 configuration failure (bad flags or config JSON; argparse uses 2 as well).
All outputs go under the explicit --out / --out-dir paths.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import metrics as mt
from . import report as rp
from . import surrogate as sg
from .mesh import MeshError, load_mesh, normalize_length, remap_axes
from .pngio import PngError
from .rasterize import CameraError
from .represent import (VIEW_ORDER, RepresentationError, read_integrated_png,
                        reconstruct, render_single_view, render_six_views,
                        render_six_views_pair, save_ply, write_integrated_png)

logger = logging.getLogger(__name__)

TARGET_LENGTH_M = 3.5


class ConfigError(ValueError):
    pass


RUNTIME_ERRORS = (MeshError, PngError, CameraError, RepresentationError,
                  ds.DatasetError, mt.MetricsError, sg.SurrogateError, OSError)


# ---------------------------------------------------------------------------
# render / reconstruct

def _prepare_mesh(args):
    mesh = load_mesh(args.mesh)
    if args.axis_frame != "x,y,z":
        mesh = remap_axes(mesh, args.axis_frame)
    if not args.no_normalize:
        mesh = normalize_length(mesh, TARGET_LENGTH_M)
    return mesh


def _render_out_paths(args, modes):
    out = Path(args.out)
    stem = Path(args.mesh).stem
    if len(modes) == 1 and out.suffix.lower() == ".png":
        out.parent.mkdir(parents=True, exist_ok=True)
        return {modes[0]: out}
    out.mkdir(parents=True, exist_ok=True)
    return {m: out / f"{stem}_{m}.png" for m in modes}


def cmd_render(args) -> int:
    mesh = _prepare_mesh(args)
    bit_depth = 16 if args.deep else 8
    modes = ["normal", "depth"] if args.mode == "both" else [args.mode]
    paths = _render_out_paths(args, modes)
    if args.view is not None:
        images = {m: render_single_view(mesh, args.view, args.resolution, m,
                                        bit_depth, args.projection)
                  for m in modes}
    elif args.mode == "both":
        normal_img, depth_img = render_six_views_pair(
            mesh, args.resolution, bit_depth, args.projection)
        images = {"normal": normal_img, "depth": depth_img}
    else:
        images = {args.mode: render_six_views(mesh, args.resolution, args.mode,
                                              bit_depth, args.projection)}
    for mode in modes:
        write_integrated_png(images[mode], paths[mode])
        print(f"wrote {paths[mode]}")
    return 0


def cmd_reconstruct(args) -> int:
    normal_img = read_integrated_png(args.normal)
    depth_img = read_integrated_png(args.depth)
    cloud = reconstruct(normal_img, depth_img)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ply(cloud, out)
    print(f"wrote {out} ({len(cloud)} oriented points)")
    return 0


# ---------------------------------------------------------------------------
# dataset

def cmd_dataset_build(args) -> int:
    manifest = ds.build_manifest(args.mesh_dir, args.labels)
    manifest.save(args.out)
    unlabeled = sum(1 for e in manifest if e.drag_coefficient is None)
    print(f"wrote {args.out}: {len(manifest)} entries "
          f"({unlabeled} unlabeled)")
    return 0


def cmd_dataset_augment(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    seed = args.seed if args.seed is not None else 0
    augmented = ds.augment_manifest(manifest, resize_seed=seed)
    if args.resized_labels:
        augmented = ds.join_labels(augmented, args.resized_labels)
    augmented.save(args.out)
    print(f"wrote {args.out}: {len(manifest)} -> {len(augmented)} entries")
    return 0


def _parse_ratios(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--ratios needs three comma-separated fractions, "
                          f"got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad --ratios value: {exc}") from exc


def cmd_dataset_split(args) -> int:
    ratios = _parse_ratios(args.ratios)
    seed = args.seed if args.seed is not None else 0
    try:
        spec = ds.SplitSpec(ratios, seed=seed)
    except ds.DatasetError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = ds.DatasetManifest.load(args.manifest)
    manifest = ds.assign_splits(manifest, spec)
    manifest.save(args.out)
    counts = {s: len({e.group_id for e in manifest.by_split(s)})
              for s in ("train", "val", "test")}
    print(f"wrote {args.out}: groups train={counts['train']} "
          f"val={counts['val']} test={counts['test']}")
    return 0


def cmd_dataset_render(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    rendered = ds.batch_render(manifest, args.out_dir,
                               resolution=args.resolution,
                               bit_depth=16 if args.deep else 8,
                               workers=args.threads)
    rendered.save(args.out)
    failures = sum(1 for e in rendered if ds.FLAG_RENDER_FAILED in e.flags)
    print(f"wrote {args.out}: {len(rendered)} entries rendered to "
          f"{args.out_dir} ({failures} failed)")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# model commands

def _dataclass_from_dict(cls, data: dict, what: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown {what} config keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except (sg.SurrogateError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what} config: {exc}") from exc


def _load_configs(args):
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
        unknown = set(raw) - {"model", "train"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: "
                              f"{sorted(unknown)}")
    model_dict = dict(raw.get("model", {}))
    if args.streams:
        model_dict["streams"] = args.streams
    model_cfg = _dataclass_from_dict(sg.ModelConfig, model_dict, "model")
    train_cfg = _dataclass_from_dict(sg.TrainConfig, dict(raw.get("train", {})),
                                     "train")
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    return model_cfg, train_cfg


def _entry_inputs(entry, config):
    paths = {"normal": entry.normal_img_path, "depth": entry.depth_img_path}
    images = []
    for stream in config.stream_names:
        path = paths[stream]
        if not path:
            raise ds.DatasetError(
                f"entry {entry.id}: no {stream} image path; run "
                f"`orthorep dataset render` first")
        images.append(read_integrated_png(path))
    return tuple(images) if config.streams == "fused" else images[0]


def _examples_from_manifest(manifest, config, split, require_label=True):
    """Load rendered images for a split into surrogate Examples (plus ids)."""
    examples, ids = [], []
    skipped = 0
    for entry in manifest:
        if split is not None and entry.split != split:
            continue
        if ds.FLAG_RENDER_FAILED in entry.flags:
            skipped += 1
            continue
        if require_label and entry.drag_coefficient is None:
            skipped += 1
            continue
        label = (entry.drag_coefficient
                 if entry.drag_coefficient is not None else np.nan)
        examples.append(sg.Example(_entry_inputs(entry, config), label,
                                   entry.group_id))
        ids.append(entry.id)
    if skipped:
        logger.info("split %s: skipped %d entries (unlabeled or failed)",
                    split, skipped)
    return examples, ids


def cmd_train(args) -> int:
    model_cfg, train_cfg = _load_configs(args)
    if bool(args.init_from_normal) != bool(args.init_from_depth):
        raise ConfigError("transfer init needs both --init-from-normal and "
                          "--init-from-depth")
    manifest = ds.DatasetManifest.load(args.manifest)
    train_set, _ = _examples_from_manifest(manifest, model_cfg,
                                           args.train_split)
    val_set, _ = _examples_from_manifest(manifest, model_cfg, args.val_split)
    if args.init_from_normal:
        normal_state, _ = sg.load_weights(args.init_from_normal)
        depth_state, _ = sg.load_weights(args.init_from_depth)
        state = sg.init_fused_from_streams(normal_state, depth_state,
                                           model_cfg)
    else:
        state = sg.init_state(model_cfg)
    best, log = sg.train(state, model_cfg, train_cfg, train_set, val_set)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights_path = out_dir / "weights.bin"
    sg.save_weights(weights_path, best, model_cfg)
    sg.save_training_log(log, out_dir / "training_log.csv")
    rp.training_curves_plot(log, out_dir / "training_curves.png")
    best_row = min(log, key=lambda r: r.val_mse)
    print(f"wrote {weights_path}: {len(log)} epochs, best val MSE "
          f"{best_row.val_mse:.6g} at epoch {best_row.epoch}")
    return 0


def _read_predictions_csv(path) -> dict:
    preds = {}
    with open(path) as fh:
        header = fh.readline().strip().lower()
        if header != "id,prediction":
            raise ds.DatasetError(f"{path}: expected header 'id,prediction', "
                                  f"got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            ident, _, value = line.partition(",")
            try:
                preds[ident] = float(value)
            except ValueError as exc:
                raise ds.DatasetError(f"{path}: line {lineno}: bad "
                                      f"prediction {value!r}") from exc
    return preds


def cmd_eval(args) -> int:
    if bool(args.weights) == bool(args.predictions):
        raise ConfigError("eval needs exactly one of --weights or "
                          "--predictions")
    manifest = ds.DatasetManifest.load(args.manifest)
    split = None if args.split in (None, "all") else args.split
    entries = [e for e in manifest
               if (split is None or e.split == split)
               and e.drag_coefficient is not None
               and ds.FLAG_RENDER_FAILED not in e.flags]
    if not entries:
        raise ds.DatasetError(f"no labeled entries in split {args.split!r}")
    labels = np.array([e.drag_coefficient for e in entries])
    if args.predictions:
        table = _read_predictions_csv(args.predictions)
        missing = [e.id for e in entries if e.id not in table]
        if missing:
            raise ds.DatasetError(f"predictions file lacks {len(missing)} "
                                  f"ids (e.g. {missing[0]!r})")
        preds = np.array([table[e.id] for e in entries])
    else:
        state, model_cfg = sg.load_weights(args.weights)
        inputs = [_entry_inputs(e, model_cfg) for e in entries]
        preds, timing = sg.predict(state, model_cfg, inputs)
        logger.info("predicted %d entries at %.0f images/s", len(preds),
                    timing["images_per_second"])
    eval_report = mt.evaluate(preds, labels)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(mt.report_to_json(eval_report) + "\n")
    (out_dir / "report.txt").write_text(mt.report_to_text(eval_report) + "\n")
    mt.write_scatter_csv(preds, labels, out_dir / "scatter.csv")
    rp.scatter_plot(preds, labels, out_dir / "scatter.png")
    rp.binned_mae_plot(eval_report, out_dir / "binned_mae.png")
    print(mt.report_to_text(eval_report))
    print(f"\nwrote report to {out_dir}")
    return 0


def cmd_predict(args) -> int:
    state, model_cfg = sg.load_weights(args.weights)
    manifest = ds.DatasetManifest.load(args.manifest)
    examples, ids = _examples_from_manifest(manifest, model_cfg, args.split,
                                            require_label=False)
    if not examples:
        raise ds.DatasetError("no renderable entries to predict")
    preds, timing = sg.predict(state, model_cfg,
                               [ex.inputs for ex in examples])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("id,prediction\n")
        for ident, pred in zip(ids, preds):
            fh.write(f"{ident},{pred:.9g}\n")
    print(f"wrote {out}: {len(preds)} predictions "
          f"({timing['images_per_second']:.0f} images/s)")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for the subcommand's randomness")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for batch rendering (training "
                             "is always single-threaded)")
    common.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])

    parser = argparse.ArgumentParser(
        prog="orthorep",
        description="Six-view orthographic shape representation and "
                    "drag-coefficient surrogate tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[common],
                       help="render a mesh to integrated PNG(s)")
    p.add_argument("mesh", help="OBJ or STL file")
    p.add_argument("--mode", choices=["normal", "depth", "both"],
                   default="both")
    p.add_argument("--resolution", type=int, default=384)
    p.add_argument("--deep", action="store_true", help="16-bit output")
    p.add_argument("--view", choices=list(VIEW_ORDER), default=None,
                   help="render a single view instead of the 2x3 grid")
    p.add_argument("--projection", choices=["ortho", "perspective"],
                   default="ortho",
                   help="perspective is for ablation; not reconstructable")
    p.add_argument("--axis-frame", default="x,y,z",
                   help="remap input axes to the canonical frame, e.g. "
                        "'-y,x,z'")
    p.add_argument("--no-normalize", action="store_true",
                   help=f"skip scaling to {TARGET_LENGTH_M} m length")
    p.add_argument("--out", required=True,
                   help="output directory (or .png path for single modes)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("reconstruct", parents=[common],
                       help="invert a rendering pair to an oriented "
                            "point cloud")
    p.add_argument("normal", help="normal-mode integrated PNG")
    p.add_argument("depth", help="depth-mode integrated PNG")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(func=cmd_reconstruct)

    pd = sub.add_parser("dataset", help="manifest pipeline")
    dsub = pd.add_subparsers(dest="dataset_command", required=True)

    p = dsub.add_parser("build", parents=[common],
                        help="scan meshes and join labels")
    p.add_argument("--mesh-dir", required=True)
    p.add_argument("--labels", default=None,
                   help="CSV with header id,drag_coefficient")
    p.add_argument("--out", required=True, help="manifest JSONL path")
    p.set_defaults(func=cmd_dataset_build)

    p = dsub.add_parser("augment", parents=[common],
                        help="add width-resize and bilateral-flip variants")
    p.add_argument("--manifest", required=True)
    p.add_argument("--resized-labels", default=None,
                   help="optional CSV labeling the width-resized variants")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_augment)

    p = dsub.add_parser("split", parents=[common],
                        help="assign leakage-safe train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_split)

    p = dsub.add_parser("render", parents=[common],
                        help="batch-render every manifest entry")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True, help="PNG output directory")
    p.add_argument("--resolution", type=int, default=384)
    p.add_argument("--deep", action="store_true")
    p.add_argument("--out", required=True, help="updated manifest path")
    p.set_defaults(func=cmd_dataset_render)

    p = sub.add_parser("train", parents=[common], help="train the surrogate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None,
                   help='JSON with "model" and "train" sections')
    p.add_argument("--streams",
                   choices=["normal_only", "depth_only", "fused"],
                   default=None, help="override the configured streams")
    p.add_argument("--init-from-normal", default=None,
                   help="donor weights for transfer init (normal stream)")
    p.add_argument("--init-from-depth", default=None,
                   help="donor weights for transfer init (depth stream)")
    p.add_argument("--train-split", default="train")
    p.add_argument("--val-split", default="val")
    p.add_argument("--out-dir", required=True,
                   help="gets weights.bin, training_log.csv, "
                        "training_curves.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate predictions against labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--predictions", default=None,
                   help="CSV (id,prediction) to score instead of running "
                        "the model")
    p.add_argument("--split", default="test",
                   help="split to score, or 'all' for every labeled entry")
    p.add_argument("--out-dir", required=True,
                   help="gets report.json/.txt, scatter.csv/.png, "
                        "binned_mae.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common],
                       help="write drag predictions for manifest entries")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--split", default=None,
                   help="restrict to one split (default: all entries)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
