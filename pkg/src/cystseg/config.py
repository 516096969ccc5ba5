"""Run configuration: dataclasses with defaults plus JSON overrides.

A config file is a JSON object whose top-level keys name sections
("preprocess", "patches", "model", "train", "predict"). Unknown keys
anywhere are rejected so typos fail loudly instead of silently running
with defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import SchemaError
from .frames import FusionRule, Vendor


@dataclass(frozen=True)
class NlmParams:
    search_size: int = 21
    patch_size: int = 7
    h: float = 10.0


def _default_nlm() -> dict[Vendor, NlmParams]:
    # Spectralis/Cirrus scans are cleaner; Topcon/Nidek need stronger smoothing.
    return {
        Vendor.SPECTRALIS: NlmParams(h=10.0),
        Vendor.CIRRUS: NlmParams(h=10.0),
        Vendor.TOPCON: NlmParams(h=15.0),
        Vendor.NIDEK: NlmParams(h=15.0),
    }


@dataclass(frozen=True)
class PreprocessConfig:
    nlm: dict[Vendor, NlmParams] = field(default_factory=_default_nlm)
    clahe_grid: tuple[int, int] = (8, 8)
    clahe_clip_limit: float = 2.0
    target_height: int = 256
    target_width: int = 512

    def nlm_for(self, vendor: Vendor | None) -> NlmParams:
        if vendor is None:
            return NlmParams()
        return self.nlm[vendor]


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 11
    central_rows: int = 5
    central_cols: int = 10
    fusion_rule: FusionRule = FusionRule.UNION


@dataclass(frozen=True)
class ModelConfig:
    stem_channels: int = 16
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: int = 2
    num_classes: int = 2


@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    max_rotation_deg: float = 15.0
    max_shift_frac: float = 0.10
    max_zoom_frac: float = 0.10


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 40
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)


@dataclass(frozen=True)
class PredictConfig:
    stride: int = 1
    threshold: float = 0.5
    batch_size: int = 4096


@dataclass(frozen=True)
class Config:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    patches: PatchConfig = field(default_factory=PatchConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)


def _check_keys(doc: dict, allowed: set[str], ctx: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise SchemaError(f"{ctx}: unknown keys {sorted(unknown)}")


def _dataclass_from(doc: dict, default, ctx: str):
    """Apply overrides from doc onto a flat dataclass of scalars/tuples."""
    names = {f.name for f in fields(default)}
    _check_keys(doc, names, ctx)
    updates = {}
    for name, value in doc.items():
        current = getattr(default, name)
        if isinstance(current, tuple):
            if not isinstance(value, list):
                raise SchemaError(f"{ctx}.{name}: expected a list")
            value = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise SchemaError(f"{ctx}.{name}: expected a bool")
        elif isinstance(current, int) and not isinstance(value, int):
            raise SchemaError(f"{ctx}.{name}: expected an int")
        elif isinstance(current, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise SchemaError(f"{ctx}.{name}: expected a number")
            value = float(value)
        updates[name] = value
    return replace(default, **updates)


def _preprocess_from(doc: dict, ctx: str) -> PreprocessConfig:
    _check_keys(doc, {"nlm", "clahe_grid", "clahe_clip_limit", "target_height", "target_width"}, ctx)
    base = PreprocessConfig()
    nlm = dict(base.nlm)
    if "nlm" in doc:
        for vendor_name, params in doc["nlm"].items():
            try:
                vendor = Vendor(vendor_name)
            except ValueError:
                raise SchemaError(f"{ctx}.nlm: unknown vendor {vendor_name!r}") from None
            nlm[vendor] = _dataclass_from(params, nlm[vendor], f"{ctx}.nlm.{vendor_name}")
    grid = doc.get("clahe_grid", list(base.clahe_grid))
    if not (isinstance(grid, (list, tuple)) and len(grid) == 2):
        raise SchemaError(f"{ctx}.clahe_grid: expected [rows, cols]")
    cfg = PreprocessConfig(
        nlm=nlm,
        clahe_grid=(int(grid[0]), int(grid[1])),
        clahe_clip_limit=float(doc.get("clahe_clip_limit", base.clahe_clip_limit)),
        target_height=int(doc.get("target_height", base.target_height)),
        target_width=int(doc.get("target_width", base.target_width)),
    )
    for vendor, params in cfg.nlm.items():
        for label, win in (("search_size", params.search_size),
                           ("patch_size", params.patch_size)):
            if win < 1 or win % 2 == 0:
                raise SchemaError(
                    f"{ctx}.nlm.{vendor.value}.{label}: must be odd and >= 1, got {win}")
    if cfg.clahe_grid[0] < 1 or cfg.clahe_grid[1] < 1:
        raise SchemaError(f"{ctx}.clahe_grid: must be positive, got {list(cfg.clahe_grid)}")
    if cfg.clahe_clip_limit < 1.0:
        raise SchemaError(f"{ctx}.clahe_clip_limit: must be >= 1, got {cfg.clahe_clip_limit}")
    if cfg.target_height < 1 or cfg.target_width < 1:
        raise SchemaError(f"{ctx}: target dimensions must be positive")
    return cfg


def _patches_from(doc: dict, ctx: str) -> PatchConfig:
    doc = dict(doc)
    rule = doc.pop("fusion_rule", None)
    cfg = _dataclass_from(doc, PatchConfig(), ctx)
    if rule is not None:
        try:
            cfg = replace(cfg, fusion_rule=FusionRule(rule))
        except ValueError:
            raise SchemaError(f"{ctx}.fusion_rule: unknown rule {rule!r}") from None
    return cfg


def _train_from(doc: dict, ctx: str) -> TrainConfig:
    doc = dict(doc)
    aug_doc = doc.pop("augment", None)
    cfg = _dataclass_from(doc, TrainConfig(), ctx)
    if aug_doc is not None:
        cfg = replace(cfg, augment=_dataclass_from(aug_doc, AugmentPolicy(), f"{ctx}.augment"))
    return cfg


def load_config(path: str | Path | None) -> Config:
    """Defaults, overridden section by section from a JSON file if given."""
    if path is None:
        return Config()
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    _check_keys(doc, {"preprocess", "patches", "model", "train", "predict"}, str(path))
    return Config(
        preprocess=_preprocess_from(doc.get("preprocess", {}), "preprocess"),
        patches=_patches_from(doc.get("patches", {}), "patches"),
        model=_dataclass_from(doc.get("model", {}), ModelConfig(), "model"),
        train=_train_from(doc.get("train", {}), "train"),
        predict=_dataclass_from(doc.get("predict", {}), PredictConfig(), "predict"),
    )
