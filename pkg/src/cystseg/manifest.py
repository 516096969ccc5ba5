"""Dataset manifest: the single source of truth for what is on disk.

A manifest is one JSON document listing volumes, their split assignment,
physical spacings, and per-frame image/mask paths with band boundaries.
Paths are stored relative to the manifest file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingFileError, SchemaError, ShapeMismatchError
from .frames import Frame, MaskSet, Split, Vendor
from .imgio import read_frame, read_image, read_mask

_SPLITS = {s.value for s in Split}
_VENDORS = {v.value for v in Vendor}


@dataclass
class FrameRef:
    image: str
    band_top: int
    band_bottom: int
    masks: dict[str, str] = field(default_factory=dict)
    pixel_size_x: float | None = None
    pixel_size_y: float | None = None


@dataclass
class VolumeRef:
    volume_id: str
    vendor: Vendor
    split: Split
    pixel_size_x: float
    pixel_size_y: float
    slice_spacing: float
    frames: list[FrameRef] = field(default_factory=list)

    def frame_pixel_size(self, index: int) -> tuple[float, float]:
        ref = self.frames[index]
        px = ref.pixel_size_x if ref.pixel_size_x is not None else self.pixel_size_x
        py = ref.pixel_size_y if ref.pixel_size_y is not None else self.pixel_size_y
        return px, py


@dataclass
class Manifest:
    root: Path
    volumes: list[VolumeRef] = field(default_factory=list)

    def split_volumes(self, split: Split | str) -> list[VolumeRef]:
        split = Split(split)
        return [v for v in self.volumes if v.split == split]

    def split_counts(self) -> dict[str, int]:
        counts = {s.value: 0 for s in Split}
        for v in self.volumes:
            counts[v.split.value] += 1
        return counts

    def volume(self, volume_id: str) -> VolumeRef:
        for v in self.volumes:
            if v.volume_id == volume_id:
                return v
        raise SchemaError(f"volume {volume_id!r} not in manifest")

    def load_frame(self, vol: VolumeRef, index: int) -> tuple[Frame, MaskSet]:
        """Load one frame and its grader masks with metadata attached."""
        ref = vol.frames[index]
        frame = read_frame(self.root / ref.image)
        px, py = vol.frame_pixel_size(index)
        frame = Frame(
            pixels=frame.pixels,
            vendor=vol.vendor,
            band_top=ref.band_top,
            band_bottom=ref.band_bottom,
            pixel_size_x=px,
            pixel_size_y=py,
            slice_spacing=vol.slice_spacing,
        )
        masks = MaskSet(graders={g: read_mask(self.root / p) for g, p in sorted(ref.masks.items())})
        masks.validate_against(frame)
        return frame, masks


def _require(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise SchemaError(f"{ctx}: missing required key {key!r}")
    return obj[key]


def load_manifest(path: str | Path, check_images: bool = True) -> Manifest:
    """Load and fully validate a manifest.

    Every referenced image must exist; mask dimensions must match their
    frame; volume ids must be unique. With check_images=False only the
    JSON structure and file existence are verified (used by writers that
    just created the files themselves).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("volumes"), list):
        raise SchemaError(f"{path}: manifest must be an object with a 'volumes' list")

    root = path.parent
    volumes: list[VolumeRef] = []
    seen: set[str] = set()
    for vi, vdoc in enumerate(doc["volumes"]):
        ctx = f"{path}: volumes[{vi}]"
        vid = _require(vdoc, "volume_id", ctx)
        if vid in seen:
            raise SchemaError(f"{ctx}: duplicate volume_id {vid!r}")
        seen.add(vid)
        vendor = _require(vdoc, "vendor", ctx)
        if vendor not in _VENDORS:
            raise SchemaError(f"{ctx}: unknown vendor {vendor!r}")
        split = _require(vdoc, "split", ctx)
        if split not in _SPLITS:
            raise SchemaError(f"{ctx}: unknown split {split!r} (expected one of {sorted(_SPLITS)})")
        frames = []
        for fi, fdoc in enumerate(vdoc.get("frames", [])):
            fctx = f"{ctx}.frames[{fi}]"
            frames.append(FrameRef(
                image=_require(fdoc, "image", fctx),
                band_top=int(_require(fdoc, "band_top", fctx)),
                band_bottom=int(_require(fdoc, "band_bottom", fctx)),
                masks=dict(fdoc.get("masks", {})),
                pixel_size_x=fdoc.get("pixel_size_x"),
                pixel_size_y=fdoc.get("pixel_size_y"),
            ))
        volumes.append(VolumeRef(
            volume_id=vid,
            vendor=Vendor(vendor),
            split=Split(split),
            pixel_size_x=float(_require(vdoc, "pixel_size_x", ctx)),
            pixel_size_y=float(_require(vdoc, "pixel_size_y", ctx)),
            slice_spacing=float(_require(vdoc, "slice_spacing", ctx)),
            frames=frames,
        ))

    manifest = Manifest(root=root, volumes=volumes)
    _validate_files(manifest, check_images)
    return manifest


def _validate_files(manifest: Manifest, check_images: bool) -> None:
    for vol in manifest.volumes:
        for fi, ref in enumerate(vol.frames):
            img_path = manifest.root / ref.image
            if not img_path.is_file():
                raise MissingFileError(f"volume {vol.volume_id!r} frame {fi}: missing {img_path}")
            for gid, mpath in ref.masks.items():
                mp = manifest.root / mpath
                if not mp.is_file():
                    raise MissingFileError(
                        f"volume {vol.volume_id!r} frame {fi} grader {gid!r}: missing {mp}"
                    )
            if not check_images:
                continue
            pixels = read_image(img_path)
            if not (0 <= ref.band_top < ref.band_bottom <= pixels.shape[0]):
                raise SchemaError(
                    f"volume {vol.volume_id!r} frame {fi}: band [{ref.band_top}, "
                    f"{ref.band_bottom}) outside height {pixels.shape[0]}"
                )
            for gid, mpath in ref.masks.items():
                mask = read_mask(manifest.root / mpath)
                if mask.shape != pixels.shape:
                    raise ShapeMismatchError(
                        f"volume {vol.volume_id!r} frame {fi} grader {gid!r}: mask "
                        f"{mask.shape} != frame {pixels.shape}"
                    )


def save_manifest(manifest_doc: dict, path: str | Path) -> None:
    """Write a manifest document as stable, diff-friendly JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_to_doc(manifest: Manifest) -> dict:
    """Inverse of load_manifest for round-tripping manifests we build."""
    vols = []
    for v in manifest.volumes:
        frames = []
        for f in v.frames:
            fdoc = {
                "image": f.image,
                "band_top": f.band_top,
                "band_bottom": f.band_bottom,
                "masks": dict(sorted(f.masks.items())),
            }
            if f.pixel_size_x is not None:
                fdoc["pixel_size_x"] = f.pixel_size_x
            if f.pixel_size_y is not None:
                fdoc["pixel_size_y"] = f.pixel_size_y
            frames.append(fdoc)
        vols.append({
            "volume_id": v.volume_id,
            "vendor": v.vendor.value,
            "split": v.split.value,
            "pixel_size_x": v.pixel_size_x,
            "pixel_size_y": v.pixel_size_y,
            "slice_spacing": v.slice_spacing,
            "frames": frames,
        })
    return {"volumes": vols}
