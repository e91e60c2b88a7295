"""Conjugate-gradient refinement of the initial illumination map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .laplacian import DEFAULT_LAMBDA, SparseAffinity, as_field
from .prior import DEFAULT_T_MIN, IlluminationMap

ATTENTION_FLOOR = 1e-3


class ConvergenceError(RuntimeError):
    """CG stopped without reaching the requested residual."""

    def __init__(self, message, residual: float, iterations: int, x=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.x = x


@dataclass(frozen=True)
class SolverConfig:
    lam: float = DEFAULT_LAMBDA
    max_iterations: int = 2000
    tolerance: float = 1e-6
    t_min: float = DEFAULT_T_MIN

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class CGInfo:
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


def cg_solve(matvec, rhs, tolerance=1e-6, max_iterations=1000, x0=None, info: CGInfo | None = None):
    """Solve ``A x = rhs`` for symmetric positive definite ``A`` given as a callable.

    Stops once ``||A x - rhs|| / ||rhs|| <= tolerance``. Raises
    :class:`ConvergenceError` on NaN or when the iteration budget runs out.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    info = info if info is not None else CGInfo()
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        info.iterations, info.residual = 0, 0.0
        return np.zeros_like(rhs)

    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)
    r = rhs - matvec(x) if x0 is not None else rhs.copy()
    p = r.copy()
    rr = r @ r
    rel = np.sqrt(rr) / norm_b
    info.history.append(float(rel))
    k = 0
    while rel > tolerance:
        if k >= max_iterations:
            info.iterations, info.residual = k, float(rel)
            raise ConvergenceError(
                f"CG did not converge in {k} iterations (relative residual {rel:.3e})", float(rel), k, x
            )
        ap = matvec(p)
        curvature = p @ ap
        if not np.isfinite(curvature) or curvature <= 0.0:
            info.iterations, info.residual = k, float(rel)
            raise ConvergenceError(
                f"CG broke down at iteration {k}: operator not positive definite or non-finite",
                float("nan"), k, x,
            )
        alpha = rr / curvature
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        k += 1
        rel = np.sqrt(rr) / norm_b
        info.history.append(float(rel))
        if not np.isfinite(rel):
            raise ConvergenceError(f"NaN encountered at iteration {k}", float("nan"), k, x)
    info.iterations, info.residual = k, float(rel)
    return x


def data_weights(attention, n: int, floor: float = ATTENTION_FLOOR) -> np.ndarray:
    if attention is None:
        return np.ones(n)
    return np.maximum(as_field(attention).reshape(-1), floor)


def solve_illumination(t_tilde, lap: SparseAffinity, attention=None, cfg: SolverConfig = SolverConfig(), info=None):
    """Unclamped minimizer of the attention-weighted BCP objective.

    Solves ``(diag(a) + lam L) t = a * t~``. CG starts from ``t~`` so every
    iterate lowers the objective relative to the initial map.
    """
    t0 = as_field(t_tilde)
    shape = t0.shape
    if t0.size != lap.dimension:
        raise ValueError(f"t~ has {t0.size} pixels, Laplacian expects {lap.dimension}")
    t0 = t0.reshape(-1)
    a = data_weights(attention, t0.size)
    if a.size != t0.size:
        raise ValueError("attention size does not match the illumination map")
    lam = cfg.lam

    def matvec(v):
        return a * v + lam * lap.matvec(v)

    x = cg_solve(matvec, a * t0, cfg.tolerance, cfg.max_iterations, x0=t0, info=info)
    return x.reshape(shape)


def refine_illumination(t_tilde, lap: SparseAffinity, attention=None, cfg: SolverConfig = SolverConfig(), info=None) -> IlluminationMap:
    raw = solve_illumination(t_tilde, lap, attention, cfg, info)
    return IlluminationMap(np.clip(raw, cfg.t_min, 1.0), t_min=cfg.t_min)
