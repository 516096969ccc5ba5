"""Grayscale image I/O: 8/16-bit single-channel PNG plus binary PGM (P5).

The single place where pixel files are read or written. Masks are 8-bit
PNGs holding exactly {0, 255}; in memory they are {0, 1} uint8 arrays.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptImageError, IoError, MissingFileError, UnsupportedFormatError
from .frames import Frame

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_PGM_MAGIC = b"P5"


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # header: "P5" <ws> width <ws> height <ws> maxval <single ws> pixel bytes
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise CorruptImageError(f"{path}: malformed PGM header")
    width, height, maxval = (int(g) for g in m.groups())
    if not (0 < maxval < 65536):
        raise CorruptImageError(f"{path}: PGM maxval {maxval} out of range")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = width * height
    raw = data[m.end():]
    expected = count * dtype.itemsize
    if len(raw) < expected:
        raise CorruptImageError(f"{path}: PGM pixel data truncated")
    arr = np.frombuffer(raw[:expected], dtype=dtype).reshape(height, width)
    if maxval >= 256:
        arr = arr.astype(np.uint16)
    return np.ascontiguousarray(arr)


def _write_pgm(arr: np.ndarray, path: Path) -> None:
    maxval = 255 if arr.dtype == np.uint8 else 65535
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    body = arr.astype(">u2").tobytes() if maxval == 65535 else arr.tobytes()
    path.write_bytes(header + body)


def read_image(path: str | Path) -> np.ndarray:
    """Read a grayscale PNG or PGM into a uint8/uint16 array."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"image file not found: {path}")
    head = path.open("rb").read(8)
    if head.startswith(_PGM_MAGIC):
        return _read_pgm(path)
    if head.startswith(_PNG_MAGIC[: len(head)]) and head == _PNG_MAGIC:
        try:
            with Image.open(path) as im:
                im.load()
                if im.mode == "L":
                    return np.asarray(im, dtype=np.uint8)
                if im.mode in ("I;16", "I;16B", "I"):
                    arr = np.asarray(im)
                    if arr.dtype != np.uint16:
                        arr = arr.astype(np.uint16)
                    return arr
                raise UnsupportedFormatError(f"{path}: unsupported PNG mode {im.mode!r}")
        except (OSError, UnidentifiedImageError, SyntaxError) as exc:
            raise CorruptImageError(f"{path}: {exc}") from exc
    raise UnsupportedFormatError(f"{path}: not a grayscale PNG or binary PGM file")


def write_image(arr: np.ndarray, path: str | Path) -> None:
    """Write a uint8/uint16 array as PNG (or PGM when the suffix is .pgm)."""
    path = Path(path)
    arr = np.ascontiguousarray(arr)
    if arr.ndim != 2 or arr.dtype not in (np.uint8, np.uint16):
        raise UnsupportedFormatError(f"cannot write array dtype={arr.dtype} shape={arr.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if path.suffix.lower() == ".pgm":
            _write_pgm(arr, path)
        else:
            Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"failed writing {path}: {exc}") from exc


def write_rgb(arr: np.ndarray, path: str | Path) -> None:
    """Write an (H, W, 3) uint8 array as an RGB PNG."""
    path = Path(path)
    arr = np.ascontiguousarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise UnsupportedFormatError(f"cannot write RGB array dtype={arr.dtype} shape={arr.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"failed writing {path}: {exc}") from exc


def read_frame(path: str | Path) -> Frame:
    """Load an image file as a Frame; bit depth comes from the file header."""
    return Frame(pixels=read_image(path))


def read_mask(path: str | Path) -> np.ndarray:
    """Load a binary mask stored as {0, 255}; returns a {0, 1} uint8 array."""
    arr = read_image(path)
    if arr.dtype != np.uint8:
        raise CorruptImageError(f"{path}: masks must be 8-bit, got 16-bit data")
    bad = np.setdiff1d(np.unique(arr), [0, 255])
    if bad.size:
        raise CorruptImageError(f"{path}: mask contains values other than 0/255: {bad[:8]}")
    return (arr == 255).astype(np.uint8)


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    """Write a {0, 1} mask as an 8-bit {0, 255} PNG; round-trips bit-exactly."""
    mask = np.asarray(mask)
    bad = np.setdiff1d(np.unique(mask), [0, 1])
    if bad.size:
        raise UnsupportedFormatError(f"mask values must be 0/1, found {bad[:8]}")
    write_image((mask * np.uint8(255)).astype(np.uint8), path)
