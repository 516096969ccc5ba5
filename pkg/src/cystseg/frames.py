"""Core value types: frames, volumes, and grader mask sets."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBandError, NotEnoughGradersError, ShapeMismatchError


class Vendor(str, enum.Enum):
    CIRRUS = "Cirrus"
    NIDEK = "Nidek"
    SPECTRALIS = "Spectralis"
    TOPCON = "Topcon"


VENDORS = tuple(Vendor)


class FusionRule(str, enum.Enum):
    UNION = "union"
    INTERSECTION = "intersection"
    SINGLE = "single"


class Split(str, enum.Enum):
    TRAINING = "Training"
    TESTING1 = "Testing1"
    TESTING2 = "Testing2"


@dataclass
class Frame:
    """One 2-D grayscale OCT slice plus acquisition metadata.

    pixels is a uint8 or uint16 array; the retinal band covers rows
    [band_top, band_bottom). Pixel sizes and slice spacing are in mm.
    """

    pixels: np.ndarray
    vendor: Vendor | None = None
    band_top: int = 0
    band_bottom: int | None = None
    pixel_size_x: float | None = None
    pixel_size_y: float | None = None
    slice_spacing: float | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ShapeMismatchError(f"frame must be 2-D, got shape {self.pixels.shape}")
        if self.pixels.dtype not in (np.uint8, np.uint16):
            raise ShapeMismatchError(f"frame dtype must be uint8 or uint16, got {self.pixels.dtype}")
        if self.band_bottom is None:
            self.band_bottom = self.height
        if not (0 <= self.band_top < self.band_bottom <= self.height):
            raise InvalidBandError(
                f"band [{self.band_top}, {self.band_bottom}) out of range for height {self.height}"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def bit_depth(self) -> int:
        return 8 if self.pixels.dtype == np.uint8 else 16

    def with_pixels(self, pixels: np.ndarray, band: tuple[int, int] | None = None,
                    pixel_size_x: float | None = None,
                    pixel_size_y: float | None = None) -> "Frame":
        """Copy of this frame with replaced pixel data (metadata carried over)."""
        top, bottom = band if band is not None else (self.band_top, self.band_bottom)
        return Frame(
            pixels=pixels,
            vendor=self.vendor,
            band_top=top,
            band_bottom=bottom,
            pixel_size_x=pixel_size_x if pixel_size_x is not None else self.pixel_size_x,
            pixel_size_y=pixel_size_y if pixel_size_y is not None else self.pixel_size_y,
            slice_spacing=self.slice_spacing,
        )


@dataclass
class MaskSet:
    """Binary cyst masks from one or more graders, plus an optional fusion."""

    graders: dict[str, np.ndarray] = field(default_factory=dict)
    fusion: np.ndarray | None = None
    fusion_rule: FusionRule | None = None

    def validate_against(self, frame: Frame) -> None:
        shape = frame.pixels.shape
        for gid, mask in self.graders.items():
            if mask.shape != shape:
                raise ShapeMismatchError(
                    f"mask for grader {gid!r} has shape {mask.shape}, frame is {shape}"
                )
            bad = np.setdiff1d(np.unique(mask), [0, 1])
            if bad.size:
                raise ShapeMismatchError(f"mask for grader {gid!r} has non-binary values {bad}")

    def require_graders(self, n: int) -> None:
        if len(self.graders) < n:
            raise NotEnoughGradersError(
                f"need at least {n} grader mask(s), have {len(self.graders)}"
            )


@dataclass
class Volume:
    """An ordered stack of frames from one scan."""

    volume_id: str
    vendor: Vendor
    frames: list[Frame]

    def __post_init__(self):
        if not self.frames:
            raise ShapeMismatchError(f"volume {self.volume_id!r} has no frames")
        shape = self.frames[0].pixels.shape
        for i, f in enumerate(self.frames):
            if f.pixels.shape != shape:
                raise ShapeMismatchError(
                    f"volume {self.volume_id!r}: frame {i} shape {f.pixels.shape} != {shape}"
                )
