"""Command-line pipeline driver.

One executable, one JSON config shared across stages. Every subcommand
validates its inputs, writes only under its --out location, and is
reproducible: same inputs and seed give identical output bytes. Exit
codes: 0 success, 1 usage, 2 input validation, 3 runtime failure; the
last stderr line on failure is a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import CystsegError, InputError, MissingPredictionError, RuntimeFailure, SchemaError
from .evaluation import (RULE_NAMES, VolumeEval, aggregate, evaluate_volumes,
                         load_baselines, read_metrics_csv, render_report,
                         write_metrics_csv)
from .frames import Split
from .imgio import read_mask, write_image, write_mask
from .inference import export_overlay, predict_frame, prob_to_u8
from .manifest import load_manifest, save_manifest
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .patches import FrameSample, build_balanced_set, fuse_graders, load_patches, patch_histogram, save_patches
from .preprocess import preprocess_frame
from .selfcheck import run_selfcheck
from .synthetic import generate, load_synth_spec
from .training import train_model, write_training_log


def _error_line(kind: str, message: str, exit_code: int) -> None:
    print(json.dumps({"error": kind, "message": message, "exit_code": exit_code}),
          file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        _error_line("UsageError", message, 1)
        raise SystemExit(1)


def _threads(args) -> int:
    n = getattr(args, "threads", None)
    return n if n and n > 0 else (os.cpu_count() or 1)


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    manifest_path = generate(spec, args.out)
    print(f"wrote {spec.n_volumes} volumes x {spec.frames_per_volume} frames; "
          f"manifest at {manifest_path}")
    return 0


def cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    config = load_config(args.config)
    out_dir = Path(args.out)

    def job(vi: int, fi: int) -> dict:
        vol = manifest.volumes[vi]
        frame, masks = manifest.load_frame(vol, fi)
        pframe, pmasks = preprocess_frame(frame, masks, config.preprocess)
        rel_image = f"images/{vol.volume_id}/frame_{fi:03d}.png"
        write_image(pframe.pixels, out_dir / rel_image)
        mask_doc = {}
        if pmasks is not None:
            for grader in sorted(pmasks.graders):
                rel = f"masks/{vol.volume_id}/frame_{fi:03d}_{grader}.png"
                write_mask(pmasks.graders[grader], out_dir / rel)
                mask_doc[grader] = rel
        doc = {
            "image": rel_image,
            "band_top": 0,
            "band_bottom": pframe.height,
            "masks": mask_doc,
        }
        if pframe.pixel_size_x is not None:
            doc["pixel_size_x"] = pframe.pixel_size_x
        if pframe.pixel_size_y is not None:
            doc["pixel_size_y"] = pframe.pixel_size_y
        return doc

    jobs = [(vi, fi) for vi, vol in enumerate(manifest.volumes)
            for fi in range(len(vol.frames))]
    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        frame_docs = list(pool.map(lambda p: job(*p), jobs))

    docs_by_volume: dict[int, list[dict]] = {}
    for (vi, _fi), doc in zip(jobs, frame_docs):
        docs_by_volume.setdefault(vi, []).append(doc)
    volumes_doc = []
    for vi, vol in enumerate(manifest.volumes):
        volumes_doc.append({
            "volume_id": vol.volume_id,
            "vendor": vol.vendor.value,
            "split": vol.split.value,
            "pixel_size_x": vol.pixel_size_x,
            "pixel_size_y": vol.pixel_size_y,
            "slice_spacing": vol.slice_spacing,
            "frames": docs_by_volume[vi],
        })
    manifest_path = out_dir / "manifest.json"
    save_manifest({"volumes": volumes_doc}, manifest_path)
    print(f"preprocessed {len(jobs)} frames; manifest at {manifest_path}")
    return 0


def cmd_patches(args) -> int:
    manifest = load_manifest(args.manifest)
    config = load_config(args.config)
    samples = []
    vendor_of = {}
    for vi, vol in enumerate(manifest.volumes):
        vendor_of[vol.volume_id] = vol.vendor.value
        if vol.split is not Split.TRAINING:
            continue
        for fi in range(len(vol.frames)):
            frame, masks = manifest.load_frame(vol, fi)
            fused = fuse_graders(masks, config.patches.fusion_rule)
            samples.append(FrameSample(
                volume_id=vol.volume_id, volume_index=vi, frame_index=fi,
                pixels=frame.pixels, fused=fused,
            ))
    if not samples:
        raise SchemaError("manifest has no Training volumes to draw patches from")
    records = build_balanced_set(samples, config.patches, seed=args.seed)
    save_patches(records, args.out, patch_size=config.patches.patch_size)
    hist = patch_histogram(records, vendor_of=vendor_of)
    print(json.dumps(hist, indent=2, sort_keys=True))
    print(f"cached {len(records)} patches at {args.out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    train_config = replace(config.train, seed=args.seed)
    records = load_patches(args.patches, patch_size=config.patches.patch_size)
    result = train_model(records, config.model, train_config)
    out = Path(args.out)
    save_checkpoint(result.model, out, extra={
        "best_epoch": result.best_epoch,
        "best_val_accuracy": result.best_val_accuracy,
    })
    log_path = out.parent / "training_log.csv"
    write_training_log(result.log, log_path)
    last = result.log[-1]
    print(f"trained {len(result.log)} epochs on {len(records)} patches; "
          f"best epoch {result.best_epoch} "
          f"(val accuracy {result.best_val_accuracy:.4f}); "
          f"final loss {last.loss:.6f}")
    print(f"checkpoint at {out}; log at {log_path}")
    return 0


def cmd_predict(args) -> int:
    model, _extra = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)

    def job(vi: int, fi: int) -> None:
        vol = manifest.volumes[vi]
        frame, _masks = manifest.load_frame(vol, fi)
        pred = predict_frame(model, frame.pixels, stride=args.stride,
                             frame_index=fi)
        base = out_dir / vol.volume_id
        write_mask(pred.mask.astype("uint8"), base / f"frame_{fi:03d}_mask.png")
        write_image(prob_to_u8(pred.prob), base / f"frame_{fi:03d}_prob.png")
        export_overlay(frame.pixels, pred.mask, base / f"frame_{fi:03d}_overlay.png")

    jobs = [(vi, fi) for vi, vol in enumerate(manifest.volumes)
            for fi in range(len(vol.frames))]
    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        list(pool.map(lambda p: job(*p), jobs))
    print(f"predicted {len(jobs)} frames under {out_dir}")
    return 0


def _parse_rules(text: str) -> tuple[str, ...]:
    rules = tuple(r.strip() for r in text.split(",") if r.strip())
    if not rules:
        raise SchemaError("--rules is empty")
    unknown = [r for r in rules if r not in RULE_NAMES]
    if unknown:
        raise SchemaError(f"unknown rules {unknown}; valid: {list(RULE_NAMES)}")
    return rules


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    rules = _parse_rules(args.rules)
    pred_dir = Path(args.pred)
    volumes = []
    for vol in manifest.volumes:
        preds, gts = [], []
        for fi in range(len(vol.frames)):
            mask_path = pred_dir / vol.volume_id / f"frame_{fi:03d}_mask.png"
            if not mask_path.is_file():
                raise MissingPredictionError(
                    f"volume {vol.volume_id!r}: no prediction at {mask_path}")
            _frame, masks = manifest.load_frame(vol, fi)
            preds.append(read_mask(mask_path))
            gts.append(masks)
        px, py = vol.frame_pixel_size(0)
        volumes.append(VolumeEval(
            volume_id=vol.volume_id, vendor=vol.vendor.value,
            pred=preds, gt=gts,
            pixel_size_x=px, pixel_size_y=py, slice_spacing=vol.slice_spacing,
        ))
    rows = evaluate_volumes(volumes, rules)
    write_metrics_csv(rows, args.out)
    for agg in aggregate(rows):
        if agg.group == "Overall":
            print(f"{agg.grader_rule}: mean dice {agg.dice_mean:.4f} "
                  f"(std {agg.dice_std:.4f}, n={agg.count})")
    print(f"metrics at {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = read_metrics_csv(args.metrics)
    baselines = load_baselines(args.baselines)
    paths = render_report(rows, baselines, args.out)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def cmd_selfcheck(args) -> int:
    return 0 if run_selfcheck() else 3


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cystseg",
                     description="Retinal cyst segmentation pipeline.")
    parser.add_argument("--version", action="version", version=f"cystseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="synth spec JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="denoise, equalize, and resize frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: available cores)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("patches", help="build a balanced training patch cache")
    p.add_argument("--manifest", required=True, help="preprocessed manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="patch cache file")
    p.set_defaults(func=cmd_patches)

    p = sub.add_parser("train", help="train the patch classifier")
    p.add_argument("--patches", required=True, help="patch cache file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment every frame in a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True, help="preprocessed manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stride", type=int, default=1,
                   help="prediction grid stride (default 1, dense)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: available cores)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against grader masks")
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--manifest", required=True, help="preprocessed manifest")
    p.add_argument("--rules", default="grader1,grader2,intersection",
                   help="comma-separated subset of: " + ",".join(RULE_NAMES))
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render comparison tables from metrics")
    p.add_argument("--metrics", required=True, help="metrics CSV")
    p.add_argument("--baselines", default=None,
                   help="baselines CSV (default: bundled literature table)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selfcheck", help="run the built-in verification battery")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _error_line(type(exc).__name__, str(exc), 2)
        return 2
    except RuntimeFailure as exc:
        _error_line(type(exc).__name__, str(exc), 3)
        return 3
    except CystsegError as exc:
        _error_line(type(exc).__name__, str(exc), 3)
        return 3
    except Exception as exc:  # anything unplanned is a runtime failure
        traceback.print_exc()
        _error_line(type(exc).__name__, str(exc), 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())
