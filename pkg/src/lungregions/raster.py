"""Raster types and grayscale image/mask file I/O.

Images are kept in their stored units (8- or 16-bit integers). Masks are
plain 2D numpy arrays: ``bool`` for binary lung masks and ``uint8`` for the
four-region label map (0 background, 1 RUR, 2 RLR, 3 LUR, 4 LLR).

Supported formats are binary PGM (P5) and grayscale PNG, 8 or 16 bit.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

DEFAULT_SPACING_MM = 0.2

BACKGROUND, RUR, RLR, LUR, LLR = 0, 1, 2, 3, 4
REGION_NAMES = {RUR: "RUR", RLR: "RLR", LUR: "LUR", LLR: "LLR"}
REGION_CODES = {name: code for code, name in REGION_NAMES.items()}


class RasterError(ValueError):
    """Raised for unreadable, unsupported or inconsistent raster data."""


class Point(NamedTuple):
    x: int  # column
    y: int  # row


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise RasterError(f"degenerate box {self.as_list()}")

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """A radiograph: 2D intensities (row-major, shape ``(height, width)``)
    plus isotropic pixel spacing in millimeters."""

    pixels: np.ndarray
    spacing_mm: float = DEFAULT_SPACING_MM

    def __post_init__(self):
        px = np.array(self.pixels, copy=True)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise RasterError(f"image must be a non-empty 2D array, got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.number) or np.issubdtype(px.dtype, np.complexfloating):
            raise RasterError(f"unsupported pixel dtype {px.dtype}")
        if not np.all(np.isfinite(px)) or np.any(px < 0):
            raise RasterError("intensities must be finite and non-negative")
        if not (self.spacing_mm > 0 and np.isfinite(self.spacing_mm)):
            raise RasterError(f"spacing_mm must be positive, got {self.spacing_mm}")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "spacing_mm", float(self.spacing_mm))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def shifted(self, c: float) -> GrayImage:
        """Return a copy with ``c`` added to every pixel (float64)."""
        return GrayImage(self.pixels.astype(np.float64) + c, self.spacing_mm)


def as_binary_mask(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise RasterError(f"{name} must be 2D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def as_region_mask(labels, name: str = "region mask") -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise RasterError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > LLR):
        raise RasterError(f"{name} has labels outside 0..4")
    return arr.astype(np.uint8, copy=False)


def check_same_shape(*arrays, names=None):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        label = ", ".join(names) if names else "inputs"
        raise RasterError(f"dimension mismatch between {label}: {sorted(shapes)}")


# --- PGM ------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:2] != b"P5":
        if data[:2] in (b"P6", b"P3"):
            raise RasterError(f"{path}: color PNM images are not supported")
        raise RasterError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise RasterError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise RasterError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1:
        raise RasterError(f"{path}: zero image dimensions")
    if not 0 < maxval < 65536:
        raise RasterError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - pos < count * dtype.itemsize:
        raise RasterError(f"{path}: truncated PGM pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    out = raw.reshape(height, width)
    return out.astype(np.uint16) if maxval > 255 else out.copy()


def _write_pgm(arr: np.ndarray, path: Path) -> None:
    maxval = 255 if arr.dtype == np.uint8 else 65535
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    body = arr.astype(">u2").tobytes() if maxval > 255 else arr.tobytes()
    path.write_bytes(header + body)


# --- generic --------------------------------------------------------------

def read_raster(path) -> np.ndarray:
    """Read an 8/16-bit grayscale PGM or PNG into a uint8/uint16 array."""
    path = Path(path)
    if not path.is_file():
        raise RasterError(f"{path}: no such file")
    if path.suffix.lower() in (".pgm", ".pnm"):
        return _read_pgm(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "1":
                arr = np.asarray(im.convert("L"))
            elif mode == "L":
                arr = np.asarray(im)
            elif mode.startswith("I;16"):
                arr = np.asarray(im).astype(np.uint16)
            elif mode == "I":
                arr = np.asarray(im)
                if arr.size and (arr.min() < 0 or arr.max() > 65535):
                    raise RasterError(f"{path}: intensities exceed 16 bits")
                arr = arr.astype(np.uint16)
            elif mode in ("RGB", "RGBA", "P", "LA", "PA", "CMYK", "YCbCr", "HSV", "LAB"):
                raise RasterError(f"{path}: color image (mode {mode}) is not supported")
            else:
                raise RasterError(f"{path}: unsupported image mode {mode}")
    except RasterError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise RasterError(f"{path}: unreadable image ({exc})") from exc
    if arr.ndim != 2 or 0 in arr.shape:
        raise RasterError(f"{path}: zero image dimensions")
    return np.array(arr, copy=True)


def write_raster(arr, path) -> None:
    """Write a uint8/uint16 array as PGM (``.pgm``) or PNG (anything else).

    Integer-valued arrays of other dtypes are narrowed to the smallest of
    uint8/uint16 that holds them.
    """
    path = Path(path)
    arr = np.asarray(arr)
    if arr.ndim != 2 or 0 in arr.shape:
        raise RasterError(f"cannot write array of shape {arr.shape}")
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if arr.dtype not in (np.uint8, np.uint16):
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)) or arr.min() < 0 or arr.max() > 65535:
            raise RasterError("only integer intensities in 0..65535 can be written")
        arr = arr.astype(np.uint8 if arr.max() <= 255 else np.uint16)
    arr = np.ascontiguousarray(arr)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() in (".pgm", ".pnm"):
            _write_pgm(arr, path)
        else:
            Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise RasterError(f"{path}: cannot write ({exc})") from exc


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def read_sidecar_spacing(path) -> float | None:
    meta = sidecar_path(path)
    if not meta.is_file():
        return None
    for line in meta.read_text().splitlines():
        key, _, value = line.partition("=")
        if key.strip() == "spacing_mm":
            try:
                return float(value)
            except ValueError as exc:
                raise RasterError(f"{meta}: bad spacing_mm value {value!r}") from exc
    return None


def write_sidecar(path, spacing_mm: float) -> None:
    sidecar_path(path).write_text(f"spacing_mm={spacing_mm!r}\n")


def load_image(path, spacing_mm: float | None = None) -> GrayImage:
    """Load a grayscale radiograph.

    Spacing comes from ``spacing_mm`` if given, otherwise from the
    ``<image>.meta`` sidecar, otherwise it defaults to 0.2 mm/pixel with a
    warning.
    """
    pixels = read_raster(path)
    if spacing_mm is None:
        spacing_mm = read_sidecar_spacing(path)
    if spacing_mm is None:
        logger.warning("%s: no pixel spacing given, assuming %.2f mm/pixel", path, DEFAULT_SPACING_MM)
        spacing_mm = DEFAULT_SPACING_MM
    if not spacing_mm > 0:
        raise RasterError(f"{path}: spacing_mm must be positive, got {spacing_mm}")
    return GrayImage(pixels, spacing_mm)


def save_image(image: GrayImage, path, sidecar: bool = True) -> None:
    write_raster(image.pixels, path)
    if sidecar:
        write_sidecar(path, image.spacing_mm)


def load_mask(path) -> np.ndarray:
    """Load a binary mask; any pixel > 0 is foreground."""
    return read_raster(path) > 0


def save_mask(mask, path) -> None:
    write_raster(as_binary_mask(mask).astype(np.uint8) * 255, path)


def load_region_mask(path) -> np.ndarray:
    return as_region_mask(read_raster(path))


def save_region_mask(labels, path) -> None:
    """Write raw label codes 0..4 as an 8-bit grayscale file."""
    write_raster(as_region_mask(labels), path)
