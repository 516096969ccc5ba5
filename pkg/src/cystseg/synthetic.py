"""Synthetic OCT-like volumes with exact ground truth.

Frames carry a bright horizontal-band texture inside a recorded retinal
band, darker elliptical "cysts", and multiplicative speckle noise. Two
simulated graders are the truth mask dilated and eroded by one pixel, so
union >= truth >= intersection holds by construction. Per-frame RNG
streams are spawned from one master seed: generation is reproducible and
parallelizable without changing a byte of output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .frames import Split, Vendor
from .imgio import write_image, write_mask
from .manifest import save_manifest

_VENDOR_CYCLE = (Vendor.CIRRUS, Vendor.NIDEK, Vendor.SPECTRALIS, Vendor.TOPCON)
_SPLIT_CYCLE = (Split.TRAINING, Split.TESTING1, Split.TESTING2)


def _default_vendor_noise() -> dict[str, float]:
    # Topcon/Nidek get the stronger speckle, mirroring their reputation.
    return {"Cirrus": 1.0, "Nidek": 1.3, "Spectralis": 0.8, "Topcon": 1.5}


@dataclass(frozen=True)
class SynthSpec:
    n_volumes: int = 4
    frames_per_volume: int = 8
    height: int = 496
    width: int = 512
    band_top: int = 120
    band_bottom: int = 376
    n_layers: int = 6
    layer_intensity_low: int = 140
    layer_intensity_high: int = 220
    background_intensity: int = 20
    speckle_strength: float = 0.12
    vendor_noise: dict[str, float] = field(default_factory=_default_vendor_noise)
    cysts_min: int = 4
    cysts_max: int = 10
    axis_min: int = 4
    axis_max: int = 14
    contrast: float = 90.0
    pixel_size_x: float = 0.0117
    pixel_size_y: float = 0.0039
    slice_spacing: float = 0.125
    seed: int = 0

    def __post_init__(self):
        if self.height < 11 or self.width < 11:
            raise SchemaError("synthetic frames must be at least 11x11")
        if not 0 <= self.band_top < self.band_bottom <= self.height:
            raise SchemaError(f"band [{self.band_top}, {self.band_bottom}) invalid")
        if self.layer_intensity_low < self.contrast:
            raise SchemaError(
                "layer_intensity_low must be >= contrast so cyst pixels never clip"
            )
        if self.cysts_min > self.cysts_max or self.axis_min > self.axis_max:
            raise SchemaError("cyst count/axis ranges must be non-decreasing")


def load_synth_spec(path: str | Path) -> SynthSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"synth spec not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: synth spec must be a JSON object")
    allowed = {f.name for f in fields(SynthSpec)}
    unknown = set(doc) - allowed
    if unknown:
        raise SchemaError(f"{path}: unknown synth spec keys {sorted(unknown)}")
    return replace(SynthSpec(), **doc)


def _frame_rng(spec: SynthSpec, volume_index: int, frame_index: int) -> np.random.Generator:
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_volumes)
    streams = children[volume_index].spawn(spec.frames_per_volume)
    return np.random.default_rng(streams[frame_index])


def _dilate1(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _erode1(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    out[0, :] = 0
    out[-1, :] = 0
    out[:, 0] = 0
    out[:, -1] = 0
    return out


def render_components(spec: SynthSpec, volume_index: int,
                      frame_index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(texture, pre_noise, truth) for one frame, before speckle.

    texture is the cyst-free band image; pre_noise has each cyst pixel
    exactly `contrast` below the texture it replaced. Both are float64.
    Re-deriving these from the same RNG stream lets tests assert the
    declared contrast without a private hook into generate().
    """
    return _render(_frame_rng(spec, volume_index, frame_index), spec)


def _render(rng: np.random.Generator,
            spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    texture = np.full((spec.height, spec.width), float(spec.background_intensity))
    band_rows = spec.band_bottom - spec.band_top
    edges = [spec.band_top + band_rows * i // spec.n_layers for i in range(spec.n_layers + 1)]
    for i in range(spec.n_layers):
        level = rng.uniform(spec.layer_intensity_low, spec.layer_intensity_high)
        texture[edges[i]:edges[i + 1], :] = level

    truth = np.zeros((spec.height, spec.width), dtype=np.uint8)
    count = int(rng.integers(spec.cysts_min, spec.cysts_max + 1))
    margin = spec.axis_max + 2
    yy, xx = np.mgrid[0:spec.height, 0:spec.width]
    for _ in range(count):
        cy = rng.uniform(spec.band_top + margin, spec.band_bottom - margin)
        cx = rng.uniform(margin, spec.width - margin)
        ay = rng.uniform(spec.axis_min, spec.axis_max)
        ax = rng.uniform(spec.axis_min, spec.axis_max)
        inside = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        truth |= inside.astype(np.uint8)

    pre_noise = texture.copy()
    pre_noise[truth == 1] -= spec.contrast
    return texture, pre_noise, truth


def _speckle(pre_noise: np.ndarray, rng: np.random.Generator,
             strength: float) -> np.ndarray:
    noise = 1.0 + strength * rng.standard_normal(pre_noise.shape)
    return np.clip(np.rint(pre_noise * noise), 0.0, 255.0).astype(np.uint8)


def generate(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Write images, grader masks, and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    volumes_doc = []
    for vi in range(spec.n_volumes):
        vendor = _VENDOR_CYCLE[vi % len(_VENDOR_CYCLE)]
        split = _SPLIT_CYCLE[vi % len(_SPLIT_CYCLE)]
        volume_id = f"{vendor.value}_{vi + 1}"
        frames_doc = []
        for fi in range(spec.frames_per_volume):
            rng = _frame_rng(spec, vi, fi)
            texture, pre_noise, truth = _render(rng, spec)
            noise_level = spec.speckle_strength * spec.vendor_noise.get(vendor.value, 1.0)
            pixels = _speckle(pre_noise, rng, noise_level)

            rel_image = f"images/{volume_id}/frame_{fi:03d}.png"
            if vendor is Vendor.SPECTRALIS:
                # 16-bit export; v*257 maps 255 -> 65535 so the 8-bit
                # conversion inverts it exactly.
                write_image((pixels.astype(np.uint16) * 257), out_dir / rel_image)
            else:
                write_image(pixels, out_dir / rel_image)
            grader1 = _dilate1(truth)
            grader2 = _erode1(truth)
            rel_g1 = f"masks/{volume_id}/frame_{fi:03d}_grader1.png"
            rel_g2 = f"masks/{volume_id}/frame_{fi:03d}_grader2.png"
            write_mask(grader1, out_dir / rel_g1)
            write_mask(grader2, out_dir / rel_g2)
            frames_doc.append({
                "image": rel_image,
                "band_top": spec.band_top,
                "band_bottom": spec.band_bottom,
                "masks": {"grader1": rel_g1, "grader2": rel_g2},
            })
        volumes_doc.append({
            "volume_id": volume_id,
            "vendor": vendor.value,
            "split": split.value,
            "pixel_size_x": spec.pixel_size_x,
            "pixel_size_y": spec.pixel_size_y,
            "slice_spacing": spec.slice_spacing,
            "frames": frames_doc,
        })
    manifest_path = out_dir / "manifest.json"
    save_manifest({"volumes": volumes_doc}, manifest_path)
    return manifest_path
