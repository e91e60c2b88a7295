"""Enhanced-image recovery and the end-to-end pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import DEFAULT_GAMMA, AttentionMap, build_attention
from .detector import DEFAULT_BETA, TotalLoss, stub_detector, total_loss
from .image import RasterImage
from .laplacian import DEFAULT_EPSILON, DEFAULT_LAMBDA, LossBreakdown, as_field, bcp_loss, build_matting_laplacian
from .network import NetworkParams, TrainConfig, forward, train
from .prior import (
    DEFAULT_AMBIENT_FRACTION,
    DEFAULT_T_MIN,
    AmbientLight,
    IlluminationMap,
    PatchSpec,
    bright_channel,
    estimate_ambient,
    initial_illumination,
)
from .solver import CGInfo, SolverConfig, solve_illumination

SOLVERS = ("direct", "network")


@dataclass
class PipelineConfig:
    patch: PatchSpec = field(default_factory=PatchSpec)
    ambient_fraction: float = DEFAULT_AMBIENT_FRACTION
    lam: float = DEFAULT_LAMBDA
    gamma: float = DEFAULT_GAMMA
    t_min: float = DEFAULT_T_MIN
    epsilon: float = DEFAULT_EPSILON
    beta: float = DEFAULT_BETA
    solver: str = "direct"
    tolerance: float = 1e-6
    max_iterations: int = 2000
    learning_rate: float = 1.0
    steps: int = 500
    seed: int = 0
    ambient: Optional[tuple] = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if not 0.0 < self.t_min < 1.0:
            raise ValueError("t_min must lie in (0, 1)")
        if self.gamma <= 0 or self.lam < 0 or self.beta < 0:
            raise ValueError("gamma must be > 0; lambda and beta must be >= 0")
        if not 0.0 < self.ambient_fraction <= 1.0:
            raise ValueError("ambient_fraction must lie in (0, 1]")
        # surface invalid sub-configs early
        self.solver_config()
        self.train_config()

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.lam, self.max_iterations, self.tolerance, self.t_min)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            self.learning_rate, self.steps, self.lam, self.seed, self.gamma,
            self.patch, self.ambient_fraction, self.t_min,
        )

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "patch"}
        d["patch_radius"] = self.patch.radius
        d["ambient"] = list(self.ambient) if self.ambient is not None else None
        return d


def recover_raw(visible: RasterImage, t, ambient: AmbientLight, t_min: float = 0.0) -> np.ndarray:
    """``(I - A) / t + A`` per channel, without clamping."""
    floor = max(t_min, getattr(t, "t_min", 0.0))
    t = as_field(t)
    if t.shape != (visible.height, visible.width):
        raise ValueError(f"illumination is {t.shape[::-1]}, image is {visible.width}x{visible.height}")
    if np.any(t <= 0.0) or np.any(t < floor):
        raise ValueError("illumination map falls below its floor")
    a = ambient.value[:, None, None]
    return (visible.data - a) / t + a


def recover(visible: RasterImage, t, ambient: AmbientLight, t_min: float = 0.0) -> RasterImage:
    """Enhanced image, clamped to [0, 1]."""
    return RasterImage(np.clip(recover_raw(visible, t, ambient, t_min), 0.0, 1.0))


def resynthesize(enhanced: RasterImage, t, ambient: AmbientLight) -> RasterImage:
    """Image formation ``t J + (1 - t) A``."""
    t = as_field(t)
    if t.shape != (enhanced.height, enhanced.width):
        raise ValueError(f"illumination is {t.shape[::-1]}, image is {enhanced.width}x{enhanced.height}")
    a = ambient.value[:, None, None]
    return RasterImage(np.clip(t * enhanced.data + (1.0 - t) * a, 0.0, 1.0))


@dataclass
class EnhanceResult:
    enhanced: RasterImage
    t: IlluminationMap
    t_tilde: IlluminationMap
    ambient: AmbientLight
    attention: AttentionMap
    loss_initial: LossBreakdown
    loss_refined: LossBreakdown
    loss_final: LossBreakdown
    detector: TotalLoss
    bright_in: float
    bright_out: float
    clamped_low: int
    clamped_high: int
    t_clamped: int
    timings: dict
    solver_iterations: int = 0
    solver_residual: float = 0.0
    params: Optional[NetworkParams] = None
    train_history: list = field(default_factory=list)

    @property
    def objective_nonincreasing(self) -> bool:
        return self.loss_refined.total <= self.loss_initial.total + 1e-12


def enhance_pair(visible: RasterImage, thermal: RasterImage, cfg: PipelineConfig = PipelineConfig()) -> EnhanceResult:
    """Run prior, attention, refinement and recovery on an aligned visible/thermal pair.

    Raises :class:`~bcpenhance.solver.ConvergenceError` if the direct solve
    stalls and :class:`~bcpenhance.network.TrainingDiverged` if training does.
    """
    if (visible.width, visible.height) != (thermal.width, thermal.height):
        raise ValueError(
            f"visible is {visible.width}x{visible.height} but thermal is {thermal.width}x{thermal.height}"
        )
    if visible.channels != 3:
        raise ValueError("visible image must have 3 channels")
    timings = {}
    clock = time.perf_counter()

    def lap_time(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    if cfg.ambient is not None:
        ambient = AmbientLight(cfg.ambient)
    else:
        ambient = estimate_ambient(visible, cfg.ambient_fraction)
    lap_time("ambient")
    t_tilde = initial_illumination(visible, ambient, cfg.patch, cfg.t_min)
    lap_time("initial_illumination")
    lap = build_matting_laplacian(visible, cfg.epsilon)
    lap_time("laplacian")
    attention = build_attention(thermal, cfg.gamma)
    lap_time("attention")

    info = CGInfo()
    params, history = None, []
    if cfg.solver == "direct":
        raw = solve_illumination(t_tilde, lap, attention, cfg.solver_config(), info)
    else:
        result = train(visible, thermal, cfg.train_config(), lap=lap)
        params, history = result.params, result.history
        raw = forward(params, visible, attention)
    lap_time("refine")

    t = IlluminationMap(np.clip(raw, cfg.t_min, 1.0), t_min=cfg.t_min)
    t_clamped = int(np.sum((raw < cfg.t_min) | (raw > 1.0)))
    loss_initial = bcp_loss(t_tilde, t_tilde, lap, cfg.lam, attention)
    loss_refined = bcp_loss(raw, t_tilde, lap, cfg.lam, attention)
    loss_final = bcp_loss(t, t_tilde, lap, cfg.lam, attention)

    j_raw = recover_raw(visible, t, ambient)
    enhanced = RasterImage(np.clip(j_raw, 0.0, 1.0))
    lap_time("recover")

    det_loss, _ = stub_detector(enhanced, thermal, gamma=cfg.gamma)
    coupled = total_loss(loss_final, det_loss, cfg.beta)
    lap_time("detector")

    return EnhanceResult(
        enhanced=enhanced,
        t=t,
        t_tilde=t_tilde,
        ambient=ambient,
        attention=attention,
        loss_initial=loss_initial,
        loss_refined=loss_refined,
        loss_final=loss_final,
        detector=coupled,
        bright_in=float(bright_channel(visible, cfg.patch).data.mean()),
        bright_out=float(bright_channel(enhanced, cfg.patch).data.mean()),
        clamped_low=int(np.sum(j_raw < 0.0)),
        clamped_high=int(np.sum(j_raw > 1.0)),
        t_clamped=t_clamped,
        timings=timings,
        solver_iterations=info.iterations,
        solver_residual=info.residual,
        params=params,
        train_history=history,
    )
