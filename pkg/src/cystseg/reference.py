"""Slow, transparent reference implementations used to cross-check the
vectorized production code.

Everything here is written as per-pixel / per-element Python loops so a
reader can audit the arithmetic directly. nlm_reference and
bilinear_reference follow the exact operation order of their production
counterparts and must agree bit for bit; conv2d_reference and
hist_eq_reference are independent formulations checked within tolerances.
"""

from __future__ import annotations

import math

import numpy as np


def nlm_reference(pixels: np.ndarray, search_size: int, patch_size: int,
                  h: float) -> np.ndarray:
    """Per-pixel non-local means, O(n^2 * search^2 * patch^2).

    Loop order (search row-major, patch row-major) and every float64
    operation mirror preprocess.nlm_denoise_u8 one-to-one.
    """
    height, width = pixels.shape
    sr = search_size // 2
    pr = patch_size // 2
    pad = sr + pr
    padded = np.pad(pixels.astype(np.float64), pad, mode="symmetric")
    h2 = float(h) * float(h)
    area = float(patch_size * patch_size)
    out = np.empty((height, width), dtype=np.uint8)
    for y in range(height):
        for x in range(width):
            cy, cx = y + pad, x + pad
            num = np.float64(0.0)
            den = np.float64(0.0)
            for dy in range(-sr, sr + 1):
                for dx in range(-sr, sr + 1):
                    d2 = np.float64(0.0)
                    for oy in range(-pr, pr + 1):
                        for ox in range(-pr, pr + 1):
                            diff = padded[cy + oy, cx + ox] - padded[cy + dy + oy, cx + dx + ox]
                            d2 += diff * diff
                    d2 /= area
                    w = np.exp(-np.maximum(d2, np.float64(0.0)) / h2)
                    num += w * padded[cy + dy, cx + dx]
                    den += w
            out[y, x] = np.uint8(np.clip(np.rint(num / den), 0.0, 255.0))
    return out


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None,
                     stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct-summation 2-D convolution (cross-correlation), float64."""
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    assert cin == cin_w, "channel mismatch"
    xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + w] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0 if bias is None else float(bias[co])
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += float(xp[ni, ci, oy * stride + ky, ox * stride + kx]) \
                                    * float(weight[co, ci, ky, kx])
                    out[ni, co, oy, ox] = acc
    return out


def hist_eq_reference(pixels: np.ndarray) -> np.ndarray:
    """Plain global histogram equalization with an inclusive CDF."""
    counts = [0] * 256
    for v in pixels.ravel():
        counts[int(v)] += 1
    n = pixels.size
    lut = []
    running = 0
    for v in range(256):
        running += counts[v]
        lut.append(min(255, int(math.floor(255.0 * running / n + 0.5))))
    out = np.empty_like(pixels)
    for y in range(pixels.shape[0]):
        for x in range(pixels.shape[1]):
            out[y, x] = lut[int(pixels[y, x])]
    return out


def _clahe_tile_lut_reference(tile: np.ndarray, clip_limit: float) -> list[int]:
    counts = [0.0] * 256
    for v in tile.ravel():
        counts[int(v)] += 1.0
    if sum(1 for c in counts if c > 0) <= 1:
        return list(range(256))
    n = float(tile.size)
    clip = clip_limit * n / 256.0
    excess = 0.0
    for v in range(256):
        if counts[v] > clip:
            excess += counts[v] - clip
            counts[v] = clip
    share = excess / 256.0
    for v in range(256):
        counts[v] += share
    lut = []
    running = np.float64(0.0)
    for v in range(256):
        running += counts[v]
        lut.append(int(np.clip(np.rint(running * (255.0 / n)), 0.0, 255.0)))
    return lut


def clahe_reference(pixels: np.ndarray, grid: tuple[int, int],
                    clip_limit: float) -> np.ndarray:
    """Brute-force tile-mapping CLAHE: scalar interpolation per pixel."""
    height, width = pixels.shape
    rows, cols = grid
    row_edges = [height * i // rows for i in range(rows + 1)]
    col_edges = [width * j // cols for j in range(cols + 1)]
    luts = [[_clahe_tile_lut_reference(
        pixels[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]], clip_limit)
        for j in range(cols)] for i in range(rows)]
    row_centers = [(row_edges[i] + row_edges[i + 1] - 1) / 2.0 for i in range(rows)]
    col_centers = [(col_edges[j] + col_edges[j + 1] - 1) / 2.0 for j in range(cols)]

    def axis_pos(coord: float, centers: list[float]) -> tuple[int, int, float]:
        if coord <= centers[0]:
            return 0, 0, 0.0
        if coord >= centers[-1]:
            return len(centers) - 1, len(centers) - 1, 0.0
        lo = 0
        while centers[lo + 1] <= coord:
            lo += 1
        t = (coord - centers[lo]) / (centers[lo + 1] - centers[lo])
        return lo, lo + 1, t

    out = np.empty_like(pixels)
    for y in range(height):
        i0, i1, ty = axis_pos(float(y), row_centers)
        for x in range(width):
            j0, j1, tx = axis_pos(float(x), col_centers)
            v = int(pixels[y, x])
            top = (1.0 - tx) * luts[i0][j0][v] + tx * luts[i0][j1][v]
            bot = (1.0 - tx) * luts[i1][j0][v] + tx * luts[i1][j1][v]
            blend = (1.0 - ty) * top + ty * bot
            out[y, x] = int(np.clip(np.rint(blend), 0.0, 255.0))
    return out


def bilinear_reference(pixels: np.ndarray, target_height: int,
                       target_width: int) -> np.ndarray:
    """Closed-form per-pixel bilinear resize, mirroring the production
    conventions (align-corners-false, edge clamp, half-up rounding)."""
    height, width = pixels.shape
    sy = height / target_height
    sx = width / target_width
    out = np.empty((target_height, target_width), dtype=np.uint8)
    for oy in range(target_height):
        src_y = (oy + 0.5) * sy - 0.5
        y0 = math.floor(src_y)
        ty = src_y - y0
        y0c = min(max(y0, 0), height - 1)
        y1c = min(max(y0 + 1, 0), height - 1)
        for ox in range(target_width):
            src_x = (ox + 0.5) * sx - 0.5
            x0 = math.floor(src_x)
            tx = src_x - x0
            x0c = min(max(x0, 0), width - 1)
            x1c = min(max(x0 + 1, 0), width - 1)
            a = float(pixels[y0c, x0c])
            b = float(pixels[y0c, x1c])
            c = float(pixels[y1c, x0c])
            d = float(pixels[y1c, x1c])
            top = (1.0 - tx) * a + tx * b
            bot = (1.0 - tx) * c + tx * d
            value = (1.0 - ty) * top + ty * bot
            out[oy, ox] = int(min(max(math.floor(value + 0.5), 0.0), 255.0))
    return out


def numeric_gradient(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
