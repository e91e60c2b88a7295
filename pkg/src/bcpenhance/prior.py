"""Bright channel, ambient light and the initial illumination map."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import RasterImage

AMBIENT_EPS = 1e-3
DEFAULT_T_MIN = 0.05
DEFAULT_RADIUS = 7
DEFAULT_AMBIENT_FRACTION = 0.001


@dataclass(frozen=True)
class PatchSpec:
    """Square patch of side ``2 * radius + 1``, clipped at the image border."""

    radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"patch radius must be >= 0, got {self.radius}")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1


@dataclass(frozen=True, eq=False)
class AmbientLight:
    value: np.ndarray

    def __post_init__(self):
        value = np.array(self.value, dtype=np.float64).reshape(-1)
        if value.shape != (3,):
            raise ValueError("ambient light needs exactly three components")
        if np.any(value < 0.0) or np.any(value >= 1.0):
            raise ValueError(f"ambient components must lie in [0, 1), got {value}")
        value.setflags(write=False)
        object.__setattr__(self, "value", value)

    def as_tuple(self) -> tuple[float, float, float]:
        return tuple(float(v) for v in self.value)


@dataclass(frozen=True, eq=False)
class IlluminationMap:
    """Scalar field in ``[t_min, 1]``; ``t_min`` records the floor that was applied."""

    values: np.ndarray
    t_min: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"illumination map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("illumination map has non-finite values")
        if values.min() < self.t_min or values.max() > 1.0:
            raise ValueError(f"illumination values must lie in [{self.t_min}, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _require_rgb(img: RasterImage, what: str):
    if img.channels != 3:
        raise ValueError(f"{what} needs a 3-channel image, got {img.channels}")


def patch_max(field: np.ndarray, radius: int) -> np.ndarray:
    # edge replication never introduces values from outside the clipped patch
    if radius == 0:
        return field.copy()
    return ndimage.maximum_filter(field, size=2 * radius + 1, mode="nearest")


def patch_min(field: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return field.copy()
    return ndimage.minimum_filter(field, size=2 * radius + 1, mode="nearest")


def bright_channel(img: RasterImage, patch: PatchSpec = PatchSpec()) -> RasterImage:
    """Max over the patch and over the colour channels."""
    _require_rgb(img, "bright_channel")
    return RasterImage(patch_max(img.data.max(axis=0), patch.radius))


def ambient_count(fraction: float, n_pixels: int) -> int:
    # rounding guards against 0.001 * 3000 == 3.0000000000000004
    return max(1, math.ceil(round(fraction * n_pixels, 9)))


def estimate_ambient(img: RasterImage, fraction: float = DEFAULT_AMBIENT_FRACTION, eps: float = AMBIENT_EPS) -> AmbientLight:
    """Mean colour of the ``ceil(fraction * N)`` pixels with the darkest channel maximum.

    Ties are resolved in row-major order. Each component is capped at ``1 - eps``
    so the prior's denominator stays away from zero.
    """
    _require_rgb(img, "estimate_ambient")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = img.width * img.height
    k = ambient_count(fraction, n)
    brightness = img.data.max(axis=0).reshape(-1)
    darkest = np.argsort(brightness, kind="stable")[:k]
    mean = img.data.reshape(3, -1)[:, darkest].mean(axis=1)
    return AmbientLight(np.minimum(mean, 1.0 - eps))


def raw_illumination(img: RasterImage, ambient: AmbientLight, patch: PatchSpec = PatchSpec()) -> np.ndarray:
    """Unclamped initial illumination.

    Normalizing the image-formation model by ``1 - A`` gives
    ``(1 - I) / (1 - A) = t (1 - J) / (1 - A) + (1 - t)``; when some channel of
    the scene reaches 1 inside the patch the smallest ratio equals ``1 - t``.
    """
    _require_rgb(img, "initial_illumination")
    a = ambient.value[:, None, None]
    ratio = (1.0 - img.data) / (1.0 - a)
    return 1.0 - patch_min(ratio.min(axis=0), patch.radius)


def initial_illumination(
    img: RasterImage,
    ambient: AmbientLight,
    patch: PatchSpec = PatchSpec(),
    t_min: float = DEFAULT_T_MIN,
) -> IlluminationMap:
    if not 0.0 < t_min < 1.0:
        raise ValueError(f"t_min must lie in (0, 1), got {t_min}")
    raw = raw_illumination(img, ambient, patch)
    return IlluminationMap(np.clip(raw, t_min, 1.0), t_min=t_min)
