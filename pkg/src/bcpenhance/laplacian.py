"""Closed-form matting Laplacian over 3x3 windows and the unsupervised BCP loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .image import RasterImage

DEFAULT_EPSILON = 1e-4
DEFAULT_LAMBDA = 1e-2
WINDOW = 3
OFFSETS = [(dy, dx) for dy in range(-2, 3) for dx in range(-2, 3)]


def as_field(x) -> np.ndarray:
    """Accept an IlluminationMap/AttentionMap or a bare array."""
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class SparseAffinity:
    """Symmetric matting Laplacian for an ``height x width`` pixel grid (row-major indices)."""

    matrix: sp.csr_matrix
    height: int
    width: int

    @property
    def dimension(self) -> int:
        return self.height * self.width

    def entries(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


@dataclass(frozen=True)
class LossBreakdown:
    data_term: float
    smoothness_term: float
    total: float
    lam: float
    n: int

    def as_dict(self) -> dict:
        return {
            "data_term": self.data_term,
            "smoothness_term": self.smoothness_term,
            "total": self.total,
            "lambda": self.lam,
            "n": self.n,
        }


def window_statistics(img: np.ndarray, epsilon: float):
    """Centred window colours and regularized inverse covariances.

    ``img`` is ``(3, H, W)``. Returns ``d`` with shape ``(9, H-2, W-2, 3)`` and
    ``inv`` with shape ``(H-2, W-2, 3, 3)``; windows are indexed by their top-left pixel.
    """
    _, h, w = img.shape
    hw, ww = h - WINDOW + 1, w - WINDOW + 1
    hwc = np.moveaxis(img, 0, -1)
    colours = np.stack(
        [hwc[dy : dy + hw, dx : dx + ww] for dy in range(WINDOW) for dx in range(WINDOW)]
    )
    mu = colours.mean(axis=0)
    d = colours - mu
    cov = np.einsum("mabi,mabj->abij", d, d) / 9.0
    inv = np.linalg.inv(cov + (epsilon / 9.0) * np.eye(3))
    return d, inv


def build_matting_laplacian(img: RasterImage, epsilon: float = DEFAULT_EPSILON) -> SparseAffinity:
    """Levin-style matting Laplacian restricted to fully interior 3x3 windows.

    Entries are accumulated per neighbour offset, so the result has at most 25
    nonzeros per row. Only the upper triangle of each window block is
    evaluated and then mirrored, which makes the matrix exactly symmetric.
    """
    if img.channels != 3:
        raise ValueError(f"matting Laplacian needs a 3-channel image, got {img.channels}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    h, w = img.height, img.width
    if h < WINDOW or w < WINDOW:
        raise ValueError(f"image must be at least 3x3, got {w}x{h}")
    d, inv = window_statistics(img.data, epsilon)
    hw, ww = h - 2, w - 2

    bands = {off: np.zeros((h, w)) for off in OFFSETS}
    for m in range(9):
        my, mx = divmod(m, 3)
        dm_inv = np.einsum("abi,abij->abj", d[m], inv)
        for n in range(m, 9):
            ny, nx = divmod(n, 3)
            value = -(1.0 + np.einsum("abj,abj->ab", dm_inv, d[n])) / 9.0
            if m == n:
                value += 1.0
            bands[(ny - my, nx - mx)][my : my + hw, mx : mx + ww] += value
            if m != n:
                bands[(my - ny, mx - nx)][ny : ny + hw, nx : nx + ww] += value

    rows, cols, vals = [], [], []
    index = np.arange(h * w).reshape(h, w)
    for (oy, ox), band in bands.items():
        ys = slice(max(0, -oy), min(h, h - oy))
        xs = slice(max(0, -ox), min(w, w - ox))
        src = index[ys, xs]
        rows.append(src.ravel())
        cols.append((src + oy * w + ox).ravel())
        vals.append(band[ys, xs].ravel())
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(h * w, h * w),
    )
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return SparseAffinity(matrix, h, w)


def _check(lap: SparseAffinity, *fields):
    for f in fields:
        if f is not None and f.size != lap.dimension:
            raise ValueError(f"field has {f.size} pixels, Laplacian expects {lap.dimension}")


def smoothness_energy(lap: SparseAffinity, t) -> float:
    """Quadratic form ``t^T L t``."""
    t = as_field(t).reshape(-1)
    _check(lap, t)
    return float(t @ lap.matvec(t))


def _weights(attention, n):
    if attention is None:
        return np.ones(n)
    return as_field(attention).reshape(-1)


def bcp_loss(t, t_tilde, lap: SparseAffinity, lam: float = DEFAULT_LAMBDA, attention=None) -> LossBreakdown:
    """``(sum_p a_p (t_p - t~_p)^2 + lam * t^T L t) / N`` with ``a = 1`` unless attention is given."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    t = as_field(t).reshape(-1)
    t_tilde = as_field(t_tilde).reshape(-1)
    a = _weights(attention, t.size)
    _check(lap, t, t_tilde, a)
    data = float(np.sum(a * (t - t_tilde) ** 2))
    smooth = smoothness_energy(lap, t)
    n = t.size
    return LossBreakdown(data, smooth, (data + lam * smooth) / n, lam, n)


def bcp_loss_grad(t, t_tilde, lap: SparseAffinity, lam: float = DEFAULT_LAMBDA, attention=None) -> np.ndarray:
    """Gradient of :func:`bcp_loss` with respect to ``t``, shaped like ``t``."""
    shape = as_field(t).shape
    t = as_field(t).reshape(-1)
    t_tilde = as_field(t_tilde).reshape(-1)
    a = _weights(attention, t.size)
    _check(lap, t, t_tilde, a)
    grad = 2.0 / t.size * (a * (t - t_tilde) + lam * lap.matvec(t))
    return grad.reshape(shape)
