"""Segmentation evaluation: confusion counts, Dice/precision/recall,
per-volume rows, per-vendor aggregation, and comparison reports.

Pixels are pooled over all frames of a volume before metrics are taken,
so each row reflects volume-level confusion counts. Aggregation uses the
sample standard deviation (divisor n-1). Degenerate conventions: a metric
whose denominator is zero is 1.0 when both positive sets are empty and
0.0 otherwise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (EmptyGroupError, IoError, MissingPredictionError,
                     NotEnoughGradersError, SchemaError, ShapeMismatchError)
from .frames import FusionRule, MaskSet
from .patches import fuse_graders

RULE_NAMES = ("grader1", "grader2", "union", "intersection")
DEFAULT_RULES = ("grader1", "grader2", "intersection")


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, other: "ConfusionMatrix") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.tn += other.tn
        self.fn += other.fn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsRow:
    volume_id: str
    vendor: str
    grader_rule: str
    confusion: ConfusionMatrix
    dice: float
    precision: float
    recall: float
    cyst_volume_mm3: float | None = None


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} and gt {gt.shape} differ")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    return ConfusionMatrix(
        tp=int(np.count_nonzero(pred & gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
    )


def metrics_from_confusion(c: ConfusionMatrix) -> tuple[float, float, float]:
    """(dice, precision, recall) with the documented degenerate conventions."""
    if 2 * c.tp + c.fp + c.fn == 0:
        dice = 1.0
    else:
        dice = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn)
    if c.tp + c.fp == 0:
        precision = 1.0 if c.fn == 0 else 0.0
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall = 1.0 if c.fp == 0 else 0.0
    else:
        recall = c.tp / (c.tp + c.fn)
    return dice, precision, recall


def rule_mask(masks: MaskSet, rule: str) -> np.ndarray:
    """Ground-truth mask for one frame under a named grader rule."""
    rule = rule.lower()
    ordered = sorted(masks.graders)
    if rule == "grader1":
        masks.require_graders(1)
        return masks.graders[ordered[0]]
    if rule == "grader2":
        masks.require_graders(2)
        return masks.graders[ordered[1]]
    if rule == "union":
        return fuse_graders(masks, FusionRule.UNION)
    if rule == "intersection":
        return fuse_graders(masks, FusionRule.INTERSECTION)
    raise SchemaError(f"unknown grader rule {rule!r} (expected one of {RULE_NAMES})")


@dataclass
class VolumeEval:
    """One volume's predictions and ground truth, ready to score."""

    volume_id: str
    vendor: str
    pred: list[np.ndarray]
    gt: list[MaskSet]
    pixel_size_x: float | None = None
    pixel_size_y: float | None = None
    slice_spacing: float | None = None


def evaluate_volumes(volumes: list[VolumeEval],
                     rules: tuple[str, ...] = DEFAULT_RULES) -> list[MetricsRow]:
    """One MetricsRow per (volume, rule), pixels pooled across frames."""
    rows = []
    for vol in volumes:
        if len(vol.pred) != len(vol.gt):
            raise MissingPredictionError(
                f"volume {vol.volume_id!r}: {len(vol.pred)} predictions for "
                f"{len(vol.gt)} annotated frames"
            )
        if not vol.pred:
            raise MissingPredictionError(f"volume {vol.volume_id!r} has no predictions")
        cyst_volume = None
        if None not in (vol.pixel_size_x, vol.pixel_size_y, vol.slice_spacing):
            from .inference import quantify_volume
            cyst_volume, _ = quantify_volume(vol.pred, vol.pixel_size_x,
                                             vol.pixel_size_y, vol.slice_spacing)
        for rule in rules:
            pooled = ConfusionMatrix()
            for pred, masks in zip(vol.pred, vol.gt):
                try:
                    gt = rule_mask(masks, rule)
                except NotEnoughGradersError as exc:
                    raise NotEnoughGradersError(
                        f"volume {vol.volume_id!r}, rule {rule!r}: {exc}"
                    ) from exc
                pooled.add(confusion(pred, gt))
            dice, precision, recall = metrics_from_confusion(pooled)
            rows.append(MetricsRow(
                volume_id=vol.volume_id,
                vendor=vol.vendor,
                grader_rule=rule,
                confusion=pooled,
                dice=dice,
                precision=precision,
                recall=recall,
                cyst_volume_mm3=cyst_volume,
            ))
    return rows


@dataclass
class AggregateRow:
    group: str
    grader_rule: str
    count: int
    dice_mean: float
    dice_std: float
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    degenerate_std: bool


def mean_and_sample_std(values: list[float]) -> tuple[float, float, bool]:
    """Arithmetic mean and n-1 standard deviation; single element gives 0."""
    if not values:
        raise EmptyGroupError("cannot aggregate an empty group")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 1:
        return float(arr[0]), 0.0, True
    return float(arr.mean()), float(arr.std(ddof=1)), False


def aggregate(rows: list[MetricsRow]) -> list[AggregateRow]:
    """Per-vendor and overall mean/std per rule, in stable sorted order."""
    if not rows:
        raise EmptyGroupError("no metric rows to aggregate")
    groups: dict[tuple[str, str], list[MetricsRow]] = {}
    for row in rows:
        groups.setdefault((row.vendor, row.grader_rule), []).append(row)
        groups.setdefault(("Overall", row.grader_rule), []).append(row)
    out = []
    for (group, rule), members in sorted(groups.items()):
        d_mean, d_std, degen = mean_and_sample_std([m.dice for m in members])
        p_mean, p_std, _ = mean_and_sample_std([m.precision for m in members])
        r_mean, r_std, _ = mean_and_sample_std([m.recall for m in members])
        out.append(AggregateRow(
            group=group, grader_rule=rule, count=len(members),
            dice_mean=d_mean, dice_std=d_std,
            precision_mean=p_mean, precision_std=p_std,
            recall_mean=r_mean, recall_std=r_std,
            degenerate_std=degen,
        ))
    return out


# -- bundled reference data -------------------------------------------------

def load_published_rows() -> list[dict[str, str]]:
    """Per-volume precision/recall/Dice rows as published for grader 1."""
    text = resources.files("cystseg.data").joinpath("published_grader1.csv").read_text()
    return list(csv.DictReader(io.StringIO(text)))


def load_baselines(path: str | Path | None = None) -> list[dict[str, str]]:
    """Comparative mean-Dice baselines; values kept as verbatim strings."""
    if path is None:
        text = resources.files("cystseg.data").joinpath("baselines.csv").read_text()
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read baselines {path}: {exc}") from exc
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        if not {"team", "mean_dice", "std"} <= set(row):
            raise SchemaError("baselines file needs columns team, mean_dice, std")
    return rows


# -- report rendering --------------------------------------------------------

METRICS_COLUMNS = ["volume_id", "vendor", "grader_rule", "tp", "fp", "tn", "fn",
                   "dice", "precision", "recall", "cyst_volume_mm3"]


def write_metrics_csv(rows: list[MetricsRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_COLUMNS)
            for r in rows:
                c = r.confusion
                writer.writerow([
                    r.volume_id, r.vendor, r.grader_rule,
                    c.tp, c.fp, c.tn, c.fn,
                    f"{r.dice:.6f}", f"{r.precision:.6f}", f"{r.recall:.6f}",
                    "" if r.cyst_volume_mm3 is None else f"{r.cyst_volume_mm3:.6f}",
                ])
    except OSError as exc:
        raise IoError(f"cannot write metrics {path}: {exc}") from exc


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != METRICS_COLUMNS:
                raise SchemaError(
                    f"{path}: expected columns {METRICS_COLUMNS}, got {reader.fieldnames}"
                )
            rows = []
            for rec in reader:
                conf = ConfusionMatrix(tp=int(rec["tp"]), fp=int(rec["fp"]),
                                       tn=int(rec["tn"]), fn=int(rec["fn"]))
                rows.append(MetricsRow(
                    volume_id=rec["volume_id"],
                    vendor=rec["vendor"],
                    grader_rule=rec["grader_rule"],
                    confusion=conf,
                    dice=float(rec["dice"]),
                    precision=float(rec["precision"]),
                    recall=float(rec["recall"]),
                    cyst_volume_mm3=(float(rec["cyst_volume_mm3"])
                                     if rec["cyst_volume_mm3"] else None),
                ))
            return rows
    except OSError as exc:
        raise IoError(f"cannot read metrics {path}: {exc}") from exc


def render_report(rows: list[MetricsRow], baselines: list[dict[str, str]],
                  out_dir: str | Path) -> dict[str, Path]:
    """Write per-volume tables, aggregates, and the baseline comparison.

    Baseline numbers are echoed verbatim (they are published values, not
    measurements of this run); the comparison adds one "This run" row per
    evaluated rule.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    aggregates = aggregate(rows) if rows else []

    per_volume = out_dir / "per_volume.csv"
    write_metrics_csv(rows, per_volume)

    agg_path = out_dir / "aggregates.csv"
    try:
        with open(agg_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "grader_rule", "count",
                             "dice_mean", "dice_std", "precision_mean", "precision_std",
                             "recall_mean", "recall_std", "degenerate_std"])
            for a in aggregates:
                writer.writerow([
                    a.group, a.grader_rule, a.count,
                    f"{a.dice_mean:.6f}", f"{a.dice_std:.6f}",
                    f"{a.precision_mean:.6f}", f"{a.precision_std:.6f}",
                    f"{a.recall_mean:.6f}", f"{a.recall_std:.6f}",
                    "yes" if a.degenerate_std else "no",
                ])
    except OSError as exc:
        raise IoError(f"cannot write aggregates {agg_path}: {exc}") from exc

    text_path = out_dir / "report.txt"
    lines = ["Per-volume results (pixels pooled per volume)",
             "volume, vendor, rule, dice, precision, recall"]
    for r in rows:
        lines.append(f"{r.volume_id}, {r.vendor}, {r.grader_rule}, "
                     f"{r.dice:.4f}, {r.precision:.4f}, {r.recall:.4f}")
    lines.append("")
    lines.append("Aggregates (mean / sample std, divisor n-1)")
    lines.append("group, rule, n, dice mean, dice std")
    for a in aggregates:
        flag = " (single volume; std 0 by convention)" if a.degenerate_std else ""
        lines.append(f"{a.group}, {a.grader_rule}, {a.count}, "
                     f"{a.dice_mean:.4f}, {a.dice_std:.4f}{flag}")
    lines.append("")
    lines.append("Comparison against published mean Dice (published values echoed verbatim)")
    lines.append("team, mean dice, std")
    for b in baselines:
        lines.append(f"{b['team']}, {b['mean_dice']}, {b['std']}")
    for a in aggregates:
        if a.group == "Overall":
            lines.append(f"This run ({a.grader_rule}), {a.dice_mean:.4f}, {a.dice_std:.4f}")
    try:
        text_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report {text_path}: {exc}") from exc
    return {"per_volume": per_volume, "aggregates": agg_path, "report": text_path}
