"""Raster images, file I/O and small resampling helpers.

Images are held as float64 arrays in channel-planar ``(C, H, W)`` layout with
every sample in ``[0, 1]``. Quantization only happens at file boundaries.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import png


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or degenerate image files."""


@dataclass(frozen=True)
class PixelIndex:
    row: int
    col: int

    def linear(self, width: int) -> int:
        return self.row * width + self.col


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Immutable H x W x C image of unit-interval samples, stored planar."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3 or data.shape[0] not in (1, 3):
            raise ValueError(f"expected (C, H, W) with C in (1, 3), got shape {data.shape}")
        if data.shape[1] < 1 or data.shape[2] < 1:
            raise ValueError(f"zero-dimension image {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("samples must be finite and lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_hwc(cls, array) -> "RasterImage":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 2:
            return cls(array[np.newaxis])
        return cls(np.moveaxis(array, -1, 0))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height)."""
        return self.width, self.height

    def hwc(self) -> np.ndarray:
        return np.moveaxis(self.data, 0, -1)

    def __getitem__(self, index: PixelIndex) -> np.ndarray:
        return self.data[:, index.row, index.col]

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


def _read_netpbm(raw: bytes, path) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: only binary PGM (P5) and PPM (P6) are supported")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: malformed netpbm header")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width == 0 or height == 0:
        raise ImageFormatError(f"{path}: zero-dimension image")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(raw) - pos < count * dtype.itemsize:
        raise ImageFormatError(f"{path}: truncated pixel data")
    body = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    samples = body.astype(np.float64).reshape(height, width, channels) / maxval
    return np.clip(samples, 0.0, 1.0)


def _read_png(path) -> np.ndarray:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        if width == 0 or height == 0:
            raise ImageFormatError(f"{path}: zero-dimension image")
        planes = info["planes"]
        maxval = 2 ** info["bitdepth"] - 1
        pixels = np.vstack([np.asarray(row, dtype=np.float64) for row in rows])
    except png.Error as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    pixels = pixels.reshape(height, width, planes) / maxval
    if info["alpha"]:
        pixels = pixels[..., :-1]
    return pixels


def load_image(path) -> RasterImage:
    """Read a PNG or binary PGM/PPM file, normalizing samples by the format maximum."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    raw = path.read_bytes()
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        pixels = _read_png(path)
    elif raw[:2] in (b"P5", b"P6"):
        pixels = _read_netpbm(raw, path)
    else:
        raise ImageFormatError(f"{path}: unsupported format (PNG, PGM or PPM expected)")
    return RasterImage.from_hwc(pixels)


def quantize(values) -> np.ndarray:
    """Clamp to [0, 1] and map to bytes with round-half-up."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: RasterImage, path) -> None:
    """Write an 8-bit image. ``.pgm``/``.ppm`` suffixes give netpbm, anything else PNG."""
    path = Path(path)
    pixels = quantize(img.hwc())
    height, width, channels = pixels.shape
    suffix = path.suffix.lower()
    with open(path, "wb") as fh:
        if suffix in (".pgm", ".ppm"):
            magic = b"P5" if channels == 1 else b"P6"
            fh.write(magic + b"\n%d %d\n255\n" % (width, height))
            fh.write(pixels.tobytes())
        else:
            writer = png.Writer(width, height, greyscale=channels == 1, bitdepth=8)
            writer.write(fh, pixels.reshape(height, width * channels))


def rgb_to_hsv_v(img: RasterImage) -> RasterImage:
    """HSV value component: the per-pixel channel maximum."""
    if img.channels != 3:
        raise ValueError(f"rgb_to_hsv_v needs 3 channels, got {img.channels}")
    return RasterImage(img.data.max(axis=0, keepdims=True))


def nearest_indices(src: int, dst: int) -> np.ndarray:
    # sample at destination pixel centres
    return ((2 * np.arange(dst) + 1) * src) // (2 * dst)


def resize_field(values: np.ndarray, new_width: int, new_height: int) -> np.ndarray:
    """Nearest-neighbour resampling of the last two axes of an array."""
    if new_width < 1 or new_height < 1:
        raise ValueError(f"target size must be at least 1x1, got {new_width}x{new_height}")
    rows = nearest_indices(values.shape[-2], new_height)
    cols = nearest_indices(values.shape[-1], new_width)
    return values[..., rows[:, None], cols[None, :]]


def resize_nearest(img: RasterImage, new_width: int, new_height: int) -> RasterImage:
    return RasterImage(resize_field(img.data, new_width, new_height))


def thread_cap(default: int | None = None) -> int:
    """Worker-thread cap from ``BCP_THREADS`` (defaults to the CPU count)."""
    value = os.environ.get("BCP_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return default or os.cpu_count() or 1
