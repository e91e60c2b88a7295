"""Thermal attention maps and their per-layer resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import RasterImage, resize_field

DEFAULT_GAMMA = 2.0


@dataclass(frozen=True, eq=False)
class AttentionMap:
    values: np.ndarray
    gamma: float

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"attention map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("attention values must lie in [0, 1]")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def uniform(cls, width: int, height: int, value: float = 1.0, gamma: float = 1.0) -> "AttentionMap":
        return cls(np.full((height, width), value), gamma)


def build_attention(thermal: RasterImage, gamma: float = DEFAULT_GAMMA) -> AttentionMap:
    """``V(thermal) ** gamma``; single-channel thermal frames are taken as V already."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    v = thermal.data.max(axis=0)
    # 0 ** gamma is 0 for gamma > 0; the clip absorbs rounding above 1
    return AttentionMap(np.clip(np.power(v, gamma), 0.0, 1.0), gamma)


def resample_field(values: np.ndarray, width: int, height: int) -> np.ndarray:
    """Block mean for exact integer reduction factors, nearest neighbour otherwise."""
    if width < 1 or height < 1:
        raise ValueError(f"cannot resample to {width}x{height}")
    h, w = values.shape
    if (h, w) == (height, width):
        return values.copy()
    if h % height == 0 and w % width == 0:
        fy, fx = h // height, w // width
        return values.reshape(height, fy, width, fx).mean(axis=(1, 3))
    return resize_field(values, width, height)


def attention_pyramid(att: AttentionMap, sizes) -> list[AttentionMap]:
    """Resample ``att`` to each ``(width, height)`` in ``sizes``."""
    sizes = list(sizes)
    if not sizes:
        raise ValueError("sizes must be nonempty")
    return [AttentionMap(resample_field(att.values, w, h), att.gamma) for w, h in sizes]
