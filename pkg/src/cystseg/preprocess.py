"""Frame preprocessing: bit-depth, band crop, denoise, contrast, resize.

The pipeline order is to_8bit -> crop_band -> nlm_denoise -> clahe ->
resize_bilinear. Masks only ever see the geometric steps (crop and
nearest-neighbor resize) so they stay strictly binary.

nlm_denoise is deliberately written as a plain offset loop rather than an
integral-image scheme: the scalar reference in reference.py must reproduce
it bit for bit, which pins the accumulation order of every float64 add.
"""

from __future__ import annotations

import numpy as np

from .config import NlmParams, PreprocessConfig
from .errors import InvalidBandError, SchemaError, TileTooSmallError
from .frames import Frame, MaskSet


def to_8bit_u(pixels: np.ndarray) -> np.ndarray:
    """Map uint16 to uint8 by v -> round(v*255/65535); uint8 passes through."""
    if pixels.dtype == np.uint8:
        return pixels
    return np.rint(pixels.astype(np.float64) * (255.0 / 65535.0)).astype(np.uint8)


def nlm_denoise_u8(pixels: np.ndarray, search_size: int = 21, patch_size: int = 7,
                   h: float = 10.0) -> np.ndarray:
    """Non-local means on a uint8 image.

    Each output pixel is the weighted average of search-window centers,
    weight exp(-max(d2 - 2*sigma^2, 0)/h^2) with d2 the mean squared
    patch difference and sigma fixed at 0. Borders are mirror-padded.
    Accumulation order (search offsets row-major, patch offsets row-major)
    matches reference.nlm_reference exactly; do not reorder.
    """
    if search_size < 1 or search_size % 2 == 0:
        raise SchemaError(f"search_size must be odd and >= 1, got {search_size}")
    if patch_size < 1 or patch_size % 2 == 0:
        raise SchemaError(f"patch_size must be odd and >= 1, got {patch_size}")
    height, width = pixels.shape
    sr = search_size // 2
    pr = patch_size // 2
    pad = sr + pr
    padded = np.pad(pixels.astype(np.float64), pad, mode="symmetric")
    h2 = float(h) * float(h)
    area = float(patch_size * patch_size)
    num = np.zeros((height, width))
    den = np.zeros((height, width))
    for dy in range(-sr, sr + 1):
        for dx in range(-sr, sr + 1):
            d2 = np.zeros((height, width))
            for oy in range(-pr, pr + 1):
                for ox in range(-pr, pr + 1):
                    a = padded[pad + oy:pad + oy + height, pad + ox:pad + ox + width]
                    b = padded[pad + dy + oy:pad + dy + oy + height,
                               pad + dx + ox:pad + dx + ox + width]
                    diff = a - b
                    d2 += diff * diff
            d2 /= area
            w = np.exp(-np.maximum(d2, 0.0) / h2)
            num += w * padded[pad + dy:pad + dy + height, pad + dx:pad + dx + width]
            den += w
    return np.clip(np.rint(num / den), 0.0, 255.0).astype(np.uint8)


def _tile_lut(values: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(values, minlength=256).astype(np.float64)
    # A tile with a single occupied bin has no contrast to redistribute;
    # the identity map keeps constant regions fixed under repeated passes.
    if np.count_nonzero(hist) <= 1:
        return np.arange(256, dtype=np.uint8)
    n = float(values.size)
    clip = clip_limit * n / 256.0
    excess = float(np.sum(np.maximum(hist - clip, 0.0)))
    hist = np.minimum(hist, clip)
    hist += excess / 256.0
    cdf = np.cumsum(hist)
    return np.clip(np.rint(cdf * (255.0 / n)), 0.0, 255.0).astype(np.uint8)


def _tile_edges(extent: int, tiles: int) -> list[int]:
    return [extent * i // tiles for i in range(tiles + 1)]


def _interp_axis(extent: int, edges: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-coordinate lower tile index, upper tile index, and blend weight."""
    centers = np.array([(edges[i] + edges[i + 1] - 1) / 2.0 for i in range(len(edges) - 1)])
    coords = np.arange(extent, dtype=np.float64)
    hi = np.searchsorted(centers, coords, side="right")
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    hi = np.clip(hi, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    t = np.where(span > 0.0, (coords - centers[lo]) / np.where(span > 0.0, span, 1.0), 0.0)
    return lo, hi, t


def clahe_u8(pixels: np.ndarray, grid: tuple[int, int] = (8, 8),
             clip_limit: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization on a uint8 image.

    Per-tile histograms are clipped at clip_limit times the mean bin count,
    the excess spread uniformly, and each pixel is mapped through the four
    surrounding tile equalization tables with bilinear blending between
    tile centers (clamped at the borders).
    """
    height, width = pixels.shape
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise SchemaError(f"tile grid must be positive, got {grid}")
    if clip_limit < 1.0:
        raise SchemaError(f"clip_limit must be >= 1, got {clip_limit}")
    if height < rows or width < cols:
        raise TileTooSmallError(
            f"grid {rows}x{cols} leaves empty tiles on a {height}x{width} frame"
        )
    row_edges = _tile_edges(height, rows)
    col_edges = _tile_edges(width, cols)
    luts = np.empty((rows, cols, 256), dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            tile = pixels[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]]
            luts[i, j] = _tile_lut(tile.ravel(), clip_limit)

    i0, i1, ty = _interp_axis(height, row_edges)
    j0, j1, tx = _interp_axis(width, col_edges)
    m00 = luts[i0[:, None], j0[None, :], pixels].astype(np.float64)
    m01 = luts[i0[:, None], j1[None, :], pixels].astype(np.float64)
    m10 = luts[i1[:, None], j0[None, :], pixels].astype(np.float64)
    m11 = luts[i1[:, None], j1[None, :], pixels].astype(np.float64)
    top = (1.0 - tx)[None, :] * m00 + tx[None, :] * m01
    bot = (1.0 - tx)[None, :] * m10 + tx[None, :] * m11
    out = (1.0 - ty)[:, None] * top + ty[:, None] * bot
    return np.clip(np.rint(out), 0.0, 255.0).astype(np.uint8)


def _sample_axis(src_extent: int, dst_extent: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = src_extent / dst_extent
    src = (np.arange(dst_extent, dtype=np.float64) + 0.5) * scale - 0.5
    lo = np.floor(src).astype(np.int64)
    t = src - lo
    return np.clip(lo, 0, src_extent - 1), np.clip(lo + 1, 0, src_extent - 1), t


def resize_bilinear_u8(pixels: np.ndarray, target_height: int, target_width: int) -> np.ndarray:
    """Bilinear resize, align-corners-false, edge-clamped, half-up rounding.

    The horizontal pair is blended before the vertical blend; the nesting
    matters because reference.bilinear_reference must agree exactly.
    """
    if target_height < 1 or target_width < 1:
        raise ValueError(f"target dims must be positive, got {target_height}x{target_width}")
    height, width = pixels.shape
    y0, y1, ty = _sample_axis(height, target_height)
    x0, x1, tx = _sample_axis(width, target_width)
    img = pixels.astype(np.float64)
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = (1.0 - tx)[None, :] * a + tx[None, :] * b
    bot = (1.0 - tx)[None, :] * c + tx[None, :] * d
    out = (1.0 - ty)[:, None] * top + ty[:, None] * bot
    return np.clip(np.floor(out + 0.5), 0.0, 255.0).astype(np.uint8)


def resize_mask_nearest(mask: np.ndarray, target_height: int, target_width: int) -> np.ndarray:
    """Nearest-neighbor resize for binary masks; pure gather, stays binary."""
    height, width = mask.shape
    sy = height / target_height
    sx = width / target_width
    yi = np.clip(np.floor((np.arange(target_height) + 0.5) * sy - 0.5 + 0.5), 0, height - 1)
    xi = np.clip(np.floor((np.arange(target_width) + 0.5) * sx - 0.5 + 0.5), 0, width - 1)
    return mask[np.ix_(yi.astype(np.int64), xi.astype(np.int64))]


def to_8bit(frame: Frame) -> Frame:
    if frame.bit_depth == 8:
        return frame
    return frame.with_pixels(to_8bit_u(frame.pixels))


def crop_band(frame: Frame) -> Frame:
    top, bottom = frame.band_top, frame.band_bottom
    if not 0 <= top < bottom <= frame.height:
        raise InvalidBandError(f"band [{top}, {bottom}) invalid for height {frame.height}")
    cropped = frame.pixels[top:bottom, :].copy()
    return frame.with_pixels(cropped, band=(0, bottom - top))


def nlm_denoise(frame: Frame, params: NlmParams) -> Frame:
    return frame.with_pixels(
        nlm_denoise_u8(frame.pixels, params.search_size, params.patch_size, params.h)
    )


def clahe(frame: Frame, grid: tuple[int, int] = (8, 8), clip_limit: float = 2.0) -> Frame:
    return frame.with_pixels(clahe_u8(frame.pixels, grid, clip_limit))


def resize_bilinear(frame: Frame, target_height: int, target_width: int) -> Frame:
    resized = resize_bilinear_u8(frame.pixels, target_height, target_width)
    px = frame.pixel_size_x * frame.width / target_width if frame.pixel_size_x else None
    py = frame.pixel_size_y * frame.height / target_height if frame.pixel_size_y else None
    return frame.with_pixels(resized, band=(0, target_height),
                             pixel_size_x=px, pixel_size_y=py)


def preprocess_frame(frame: Frame, masks: MaskSet | None,
                     config: PreprocessConfig) -> tuple[Frame, MaskSet | None]:
    """Run the full intensity pipeline on a frame; geometry only on masks."""
    out = to_8bit(frame)
    top, bottom = out.band_top, out.band_bottom
    out = crop_band(out)
    params = config.nlm_for(frame.vendor)
    out = nlm_denoise(out, params)
    out = clahe(out, config.clahe_grid, config.clahe_clip_limit)
    out = resize_bilinear(out, config.target_height, config.target_width)

    if masks is None:
        return out, None
    resized = {}
    for grader, mask in masks.graders.items():
        cropped = mask[top:bottom, :]
        resized[grader] = resize_mask_nearest(cropped, config.target_height, config.target_width)
    out_masks = MaskSet(graders=resized, fusion_rule=masks.fusion_rule)
    out_masks.validate_against(out)
    return out, out_masks
