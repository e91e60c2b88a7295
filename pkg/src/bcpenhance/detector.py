"""Detector-loss coupling: total loss combination and a contrast-based stand-in detector.

A real detector plugs in by implementing :class:`DetectorLossProvider`: it
receives the enhanced image and the thermal frame (the two halves of the
detector's concatenated input) and returns a scalar loss plus, optionally,
the gradient of that loss with respect to the enhanced image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy import ndimage

from .attention import DEFAULT_GAMMA, build_attention
from .image import RasterImage
from .laplacian import LossBreakdown

DEFAULT_BETA = 0.1
CONTRAST_EPS = 1e-12


class DetectorLossProvider(Protocol):
    def __call__(self, enhanced: RasterImage, thermal: RasterImage) -> tuple[float, Optional[np.ndarray]]: ...


@dataclass(frozen=True)
class TotalLoss:
    bcp: LossBreakdown
    detector: float
    beta: float
    total: float

    def as_dict(self) -> dict:
        return {"bcp": self.bcp.as_dict(), "detector": self.detector, "beta": self.beta, "total": self.total}


def total_loss(bcp: LossBreakdown, detector_loss: float, beta: float = DEFAULT_BETA) -> TotalLoss:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if detector_loss < 0:
        raise ValueError(f"detector loss must be >= 0, got {detector_loss}")
    return TotalLoss(bcp, float(detector_loss), float(beta), bcp.total + beta * detector_loss)


def _box_sum(x: np.ndarray) -> np.ndarray:
    # 3x3 sum over the part of the window inside the image; self-adjoint
    return ndimage.correlate(x, np.ones((3, 3)), mode="constant", cval=0.0)


def local_contrast(v: np.ndarray):
    """Normalized 3x3 standard deviation (``2 * std``, so a 0/1 checkerboard reaches ~1).

    Windows are clipped at the border. Returns ``(contrast, mean, root, count)``
    where ``root = sqrt(var + eps)``; the eps keeps the gradient finite on flat
    regions and is subtracted back out so flat regions score exactly 0.
    """
    count = _box_sum(np.ones_like(v))
    mean = _box_sum(v) / count
    var = np.maximum(_box_sum(v * v) / count - mean * mean, 0.0)
    root = np.sqrt(var + CONTRAST_EPS)
    return 2.0 * (root - np.sqrt(CONTRAST_EPS)), mean, root, count


def stub_detector(enhanced: RasterImage, thermal: RasterImage, target_mask=None, gamma: float = DEFAULT_GAMMA):
    """Stand-in detector loss rewarding local contrast where targets are expected.

    ``loss = mean over mask pixels of (1 - contrast)^2`` on the V channel of the
    enhanced image. Without a mask, thermal attention above 0.5 is used.
    Returns ``(loss, grad)`` with ``grad`` shaped like ``enhanced.data``.
    """
    if (enhanced.width, enhanced.height) != (thermal.width, thermal.height):
        raise ValueError("enhanced and thermal images must have the same size")
    if target_mask is None:
        mask = build_attention(thermal, gamma).values > 0.5
    else:
        mask = np.asarray(getattr(target_mask, "data", target_mask)).reshape(enhanced.height, enhanced.width) > 0.5
    grad = np.zeros_like(enhanced.data)
    m = int(mask.sum())
    if m == 0:
        return 0.0, grad

    channel = enhanced.data.argmax(axis=0)
    v = np.take_along_axis(enhanced.data, channel[None], axis=0)[0]
    contrast, mean, root, count = local_contrast(v)
    residual = 1.0 - contrast
    loss = float(np.sum(residual[mask] ** 2) / m)

    # d loss / d var at each window centre, then through the clipped box sums
    g_var = np.where(mask, -2.0 * residual / m, 0.0) / root
    g_v = 2.0 * v * _box_sum(g_var / count) - 2.0 * _box_sum(g_var * mean / count)
    np.put_along_axis(grad, channel[None], g_v[None], axis=0)
    return loss, grad


@dataclass
class StubDetector:
    """Callable :class:`DetectorLossProvider` wrapping :func:`stub_detector`."""

    target_mask: Optional[np.ndarray] = None
    gamma: float = DEFAULT_GAMMA

    def __call__(self, enhanced: RasterImage, thermal: RasterImage):
        return stub_detector(enhanced, thermal, self.target_mask, self.gamma)


def detector_term(visible: RasterImage, thermal: RasterImage, ambient, detector: DetectorLossProvider, beta: float, t_min: float):
    """``t -> (beta * L_det(J(t)), d/dt)`` through the recovery ``J = (I - A) / t + A``.

    Pixels where ``t`` is below the floor or ``J`` saturates carry no gradient.
    """
    a = np.asarray(ambient.value)[:, None, None]
    diff = visible.data - a

    def term(t):
        t_eff = np.maximum(t, t_min)
        raw = diff / t_eff + a
        enhanced = RasterImage(np.clip(raw, 0.0, 1.0))
        loss, grad = detector(enhanced, thermal)
        if grad is None or beta == 0.0:
            return beta * loss, np.zeros_like(t)
        live = (raw > 0.0) & (raw < 1.0) & (t >= t_min)[None]
        g_t = np.sum(np.where(live, grad * (-diff / t_eff**2), 0.0), axis=0)
        return beta * loss, beta * g_t

    return term
