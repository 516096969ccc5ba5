"""Patch dataset construction: grader fusion, grid extraction, labeling,
class balancing with central priority, augmentation, and a binary cache.

Frames are tiled with non-overlapping patch_size x patch_size patches from
the top-left corner; remainder rows/columns are dropped. A patch's label is
the fused mask value at its center pixel. The balanced set keeps every
cyst patch and samples an equal number of non-cyst patches, exhausting the
central grid block before touching peripheral positions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import AugmentPolicy, PatchConfig
from .errors import (CorruptCheckpointError, FrameTooSmallError, IoError,
                     NoPositivesError, NotEnoughGradersError, SchemaError)
from .frames import FusionRule, MaskSet

CACHE_MAGIC = b"CYSTPATCH1"


@dataclass(frozen=True)
class GridSpec:
    """Non-overlapping patch grid over one frame."""

    patch: int
    rows: int
    cols: int
    central_rows: int
    central_cols: int

    @classmethod
    def for_frame(cls, height: int, width: int, patch: int = 11,
                  central_rows: int = 5, central_cols: int = 10) -> "GridSpec":
        if height < patch or width < patch:
            raise FrameTooSmallError(
                f"frame {height}x{width} smaller than patch size {patch}"
            )
        rows = height // patch
        cols = width // patch
        return cls(
            patch=patch,
            rows=rows,
            cols=cols,
            central_rows=min(central_rows, rows),
            central_cols=min(central_cols, cols),
        )

    @property
    def central_row_start(self) -> int:
        return (self.rows - self.central_rows) // 2

    @property
    def central_col_start(self) -> int:
        return (self.cols - self.central_cols) // 2

    def is_central(self, row: int, col: int) -> bool:
        r0 = self.central_row_start
        c0 = self.central_col_start
        return r0 <= row < r0 + self.central_rows and c0 <= col < c0 + self.central_cols

    def center_pixel(self, row: int, col: int) -> tuple[int, int]:
        half = self.patch // 2
        return row * self.patch + half, col * self.patch + half

    def positions(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]


@dataclass
class PatchRecord:
    pixels: np.ndarray
    label: int
    volume_id: str
    volume_index: int
    frame_index: int
    grid_row: int
    grid_col: int
    is_central: bool


def fuse_graders(masks: MaskSet, rule: FusionRule) -> np.ndarray:
    """Combine grader masks pointwise: OR, AND, or a single grader.

    Single uses the lexicographically first grader id so the choice is
    deterministic regardless of dict construction order.
    """
    if rule in (FusionRule.UNION, FusionRule.INTERSECTION):
        masks.require_graders(2)
    else:
        masks.require_graders(1)
    ordered = [masks.graders[g] for g in sorted(masks.graders)]
    if rule == FusionRule.SINGLE:
        return ordered[0].astype(np.uint8)
    fused = ordered[0].astype(np.uint8)
    for mask in ordered[1:]:
        if rule == FusionRule.UNION:
            fused = fused | mask
        else:
            fused = fused & mask
    return fused.astype(np.uint8)


def extract_grid(height: int, width: int, config: PatchConfig) -> GridSpec:
    return GridSpec.for_frame(height, width, config.patch_size,
                              config.central_rows, config.central_cols)


def label_patch(grid: GridSpec, row: int, col: int, fused: np.ndarray) -> int:
    cy, cx = grid.center_pixel(row, col)
    return int(fused[cy, cx])


def patch_pixels(pixels: np.ndarray, grid: GridSpec, row: int, col: int) -> np.ndarray:
    p = grid.patch
    return pixels[row * p:(row + 1) * p, col * p:(col + 1) * p]


@dataclass
class FrameSample:
    """One preprocessed frame plus its fused mask, ready for tiling."""

    volume_id: str
    volume_index: int
    frame_index: int
    pixels: np.ndarray
    fused: np.ndarray


def build_balanced_set(samples: list[FrameSample], config: PatchConfig,
                       seed: int) -> list[PatchRecord]:
    """All cyst patches plus an equal number of sampled non-cyst patches.

    Non-cyst candidates are drawn without replacement, central block first,
    then peripheral; the assembled list is shuffled. Identical inputs and
    seed give an identical record list.
    """
    positives: list[PatchRecord] = []
    central_neg: list[PatchRecord] = []
    peripheral_neg: list[PatchRecord] = []
    for sample in samples:
        grid = extract_grid(sample.pixels.shape[0], sample.pixels.shape[1], config)
        if sample.fused.shape != sample.pixels.shape:
            raise SchemaError(
                f"fused mask shape {sample.fused.shape} != frame {sample.pixels.shape}"
            )
        for row, col in grid.positions():
            record = PatchRecord(
                pixels=np.ascontiguousarray(patch_pixels(sample.pixels, grid, row, col)),
                label=label_patch(grid, row, col, sample.fused),
                volume_id=sample.volume_id,
                volume_index=sample.volume_index,
                frame_index=sample.frame_index,
                grid_row=row,
                grid_col=col,
                is_central=grid.is_central(row, col),
            )
            if record.label == 1:
                positives.append(record)
            elif record.is_central:
                central_neg.append(record)
            else:
                peripheral_neg.append(record)

    if not positives:
        raise NoPositivesError("no cyst-labeled patches in this split")
    need = len(positives)
    if need > len(central_neg) + len(peripheral_neg):
        raise SchemaError(
            f"cannot balance: {need} cyst patches but only "
            f"{len(central_neg) + len(peripheral_neg)} non-cyst candidates"
        )
    rng = np.random.default_rng(seed)
    take_central = min(need, len(central_neg))
    order = rng.permutation(len(central_neg))[:take_central]
    negatives = [central_neg[i] for i in order]
    remaining = need - take_central
    if remaining:
        order = rng.permutation(len(peripheral_neg))[:remaining]
        negatives.extend(peripheral_neg[i] for i in order)

    records = positives + negatives
    shuffle = rng.permutation(len(records))
    return [records[i] for i in shuffle]


def patch_histogram(records: list[PatchRecord],
                    vendor_of: dict[str, str] | None = None) -> dict[str, dict[str, int]]:
    """Per-class and per-vendor record counts for reporting."""
    by_class = {"cyst": 0, "non_cyst": 0}
    by_vendor: dict[str, int] = {}
    for r in records:
        by_class["cyst" if r.label == 1 else "non_cyst"] += 1
        key = vendor_of.get(r.volume_id, "unknown") if vendor_of else r.volume_id
        by_vendor[key] = by_vendor.get(key, 0) + 1
    return {"by_class": by_class, "by_vendor": dict(sorted(by_vendor.items()))}


def _sample_bilinear_clamped(pixels: np.ndarray, src_y: np.ndarray,
                             src_x: np.ndarray) -> np.ndarray:
    height, width = pixels.shape
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    ty = src_y - y0
    tx = src_x - x0
    y0c = np.clip(y0, 0, height - 1)
    y1c = np.clip(y0 + 1, 0, height - 1)
    x0c = np.clip(x0, 0, width - 1)
    x1c = np.clip(x0 + 1, 0, width - 1)
    img = pixels.astype(np.float64)
    a = img[y0c, x0c]
    b = img[y0c, x1c]
    c = img[y1c, x0c]
    d = img[y1c, x1c]
    top = (1.0 - tx) * a + tx * b
    bot = (1.0 - tx) * c + tx * d
    return (1.0 - ty) * top + ty * bot


def augment(record: PatchRecord, policy: AugmentPolicy,
            rng: np.random.Generator) -> PatchRecord:
    """Random flip/rotation/shift/zoom with edge-clamped resampling.

    Draw order is fixed (flip, rotation, dy, dx, zoom) so a given RNG
    state always produces the same transform. The label never changes.
    """
    pixels = record.pixels
    height, width = pixels.shape
    flip = rng.random() < policy.flip_prob
    theta = np.deg2rad(rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg))
    dy = rng.uniform(-policy.max_shift_frac, policy.max_shift_frac) * height
    dx = rng.uniform(-policy.max_shift_frac, policy.max_shift_frac) * width
    zoom = 1.0 + rng.uniform(-policy.max_zoom_frac, policy.max_zoom_frac)

    cy = (height - 1) / 2.0
    cx = (width - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    ry = yy - cy - dy
    rx = xx - cx - dx
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    src_y = cy + (ry * cos_t + rx * sin_t) / zoom
    src_x = cx + (-ry * sin_t + rx * cos_t) / zoom
    if flip:
        src_x = (width - 1) - src_x
    sampled = _sample_bilinear_clamped(pixels, src_y, src_x)
    out = np.clip(np.floor(sampled + 0.5), 0.0, 255.0).astype(np.uint8)
    return PatchRecord(
        pixels=out,
        label=record.label,
        volume_id=record.volume_id,
        volume_index=record.volume_index,
        frame_index=record.frame_index,
        grid_row=record.grid_row,
        grid_col=record.grid_col,
        is_central=record.is_central,
    )


def save_patches(records: list[PatchRecord], path: str | Path,
                 patch_size: int = 11) -> None:
    """Binary cache: magic, u64 count, then fixed-size records.

    Each record is patch_size^2 raw pixel bytes, one label byte, and four
    little-endian u32 source indices (volume, frame, grid row, grid col).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<Q", len(records)))
            for r in records:
                if r.pixels.shape != (patch_size, patch_size):
                    raise SchemaError(
                        f"record patch shape {r.pixels.shape} != ({patch_size}, {patch_size})"
                    )
                fh.write(r.pixels.astype(np.uint8).tobytes())
                fh.write(struct.pack("<B", r.label))
                fh.write(struct.pack("<4I", r.volume_index, r.frame_index,
                                     r.grid_row, r.grid_col))
    except OSError as exc:
        raise IoError(f"cannot write patch cache {path}: {exc}") from exc


def load_patches(path: str | Path, volume_ids: list[str] | None = None,
                 patch_size: int = 11, grid_rows: int = 23, grid_cols: int = 46,
                 central_rows: int = 5, central_cols: int = 10) -> list[PatchRecord]:
    """Read a patch cache; is_central is recomputed from the grid geometry.

    The cache stores volume indices only; pass the manifest's volume id
    list to restore string ids (otherwise ids are "volume<index>").
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read patch cache {path}: {exc}") from exc
    if not blob.startswith(CACHE_MAGIC):
        raise CorruptCheckpointError(f"{path}: bad patch cache magic")
    offset = len(CACHE_MAGIC)
    (count,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    record_size = patch_size * patch_size + 1 + 16
    if len(blob) != offset + count * record_size:
        raise CorruptCheckpointError(
            f"{path}: expected {offset + count * record_size} bytes, have {len(blob)}"
        )
    grid = GridSpec(patch=patch_size, rows=grid_rows, cols=grid_cols,
                    central_rows=min(central_rows, grid_rows),
                    central_cols=min(central_cols, grid_cols))
    records = []
    for _ in range(count):
        pixels = np.frombuffer(
            blob, dtype=np.uint8, count=patch_size * patch_size, offset=offset
        ).reshape(patch_size, patch_size).copy()
        offset += patch_size * patch_size
        label = blob[offset]
        offset += 1
        vol_idx, frame_idx, grow, gcol = struct.unpack_from("<4I", blob, offset)
        offset += 16
        if label not in (0, 1):
            raise CorruptCheckpointError(f"{path}: label byte {label} not in {{0,1}}")
        if volume_ids is not None and vol_idx < len(volume_ids):
            vid = volume_ids[vol_idx]
        else:
            vid = f"volume{vol_idx}"
        records.append(PatchRecord(
            pixels=pixels,
            label=int(label),
            volume_id=vid,
            volume_index=int(vol_idx),
            frame_index=int(frame_idx),
            grid_row=int(grow),
            grid_col=int(gcol),
            is_central=grid.is_central(int(grow), int(gcol)),
        ))
    return records
