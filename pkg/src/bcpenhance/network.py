"""Attention-gated convolutional encoder-decoder trained on the BCP loss.

Plain numpy, float64, hand-written reverse mode. The architecture is fixed::

    conv 3->8  stride 2, relu      (H/2)
    conv 8->16 stride 2, relu      (H/4)
    up x2, conv 16->8, relu        (H/2)
    up x2, conv 8->1, sigmoid      (H)

and every layer's activation is multiplied by the attention map resampled to
that layer's resolution.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import DEFAULT_GAMMA, AttentionMap, build_attention, resample_field
from .image import RasterImage
from .laplacian import DEFAULT_LAMBDA, LossBreakdown, SparseAffinity, bcp_loss, bcp_loss_grad, build_matting_laplacian
from .prior import (
    DEFAULT_AMBIENT_FRACTION,
    DEFAULT_T_MIN,
    AmbientLight,
    IlluminationMap,
    PatchSpec,
    estimate_ambient,
    initial_illumination,
)

CHECKPOINT_MAGIC = b"BCPN"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, message, step: int, history):
        super().__init__(message)
        self.step = step
        self.history = history


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    stride: int = 1
    activation: str = "relu"
    upsample_before: bool = False
    kernel: int = 3

    def __post_init__(self):
        if self.kernel != 3:
            raise ValueError("only 3x3 kernels are supported")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.activation not in ("relu", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")


ARCHITECTURE = (
    ConvLayerSpec(3, 8, stride=2),
    ConvLayerSpec(8, 16, stride=2),
    ConvLayerSpec(16, 8, upsample_before=True),
    ConvLayerSpec(8, 1, activation="sigmoid", upsample_before=True),
)


@dataclass
class NetworkParams:
    weights: list
    biases: list
    seed: int | None = None
    layers: tuple = ARCHITECTURE

    def __post_init__(self):
        if len(self.weights) != len(self.layers) or len(self.biases) != len(self.layers):
            raise ValueError("parameter count does not match the architecture")
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (spec.out_channels, spec.in_channels, 3, 3) or b.shape != (spec.out_channels,):
                raise ValueError(f"bad parameter shapes {w.shape}, {b.shape} for {spec}")

    @classmethod
    def initialize(cls, seed: int = 0, layers=ARCHITECTURE) -> "NetworkParams":
        """Fan-in uniform weights in ``[-s, s]``, ``s = sqrt(1 / (9 * in_channels))``; zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for spec in layers:
            s = math.sqrt(1.0 / (spec.in_channels * 9))
            weights.append(rng.uniform(-s, s, size=(spec.out_channels, spec.in_channels, 3, 3)))
            biases.append(np.zeros(spec.out_channels))
        return cls(weights, biases, seed, layers)

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "NetworkParams":
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.array(flat[pos : pos + a.size]).reshape(a.shape))
            pos += a.size
        return NetworkParams(out[0::2], out[1::2], self.seed, self.layers)

    def copy(self) -> "NetworkParams":
        return self.with_flat(self.flatten())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    steps: int = 500
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    gamma: float = DEFAULT_GAMMA
    patch: PatchSpec = field(default_factory=PatchSpec)
    ambient_fraction: float = DEFAULT_AMBIENT_FRACTION
    t_min: float = DEFAULT_T_MIN
    gate_output: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


# -- primitives ---------------------------------------------------------------


def _im2col(xp, stride, out_h, out_w):
    c = xp.shape[0]
    patches = [
        xp[:, ky : ky + stride * (out_h - 1) + 1 : stride, kx : kx + stride * (out_w - 1) + 1 : stride]
        for ky in range(3)
        for kx in range(3)
    ]
    return np.stack(patches, axis=1).reshape(c * 9, out_h * out_w)


def _col2im(cols, shape, stride, out_h, out_w):
    c, hp, wp = shape
    cols = cols.reshape(c, 9, out_h, out_w)
    xp = np.zeros(shape)
    for k in range(9):
        ky, kx = divmod(k, 3)
        xp[:, ky : ky + stride * (out_h - 1) + 1 : stride, kx : kx + stride * (out_w - 1) + 1 : stride] += cols[:, k]
    return xp


def _upsample(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_adjoint(g):
    c, h, w = g.shape
    return g.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def layer_sizes(height: int, width: int) -> list[tuple[int, int]]:
    """``(width, height)`` of every layer output for an input of the given size."""
    h1, w1 = -(-height // 2), -(-width // 2)
    h2, w2 = -(-h1 // 2), -(-w1 // 2)
    return [(w1, h1), (w2, h2), (w1, h1), (width, height)]


# -- forward / backward ------------------------------------------------------


def _forward(params: NetworkParams, x: np.ndarray, attention: np.ndarray, gate_output=True):
    if not params.is_finite():
        raise ValueError("non-finite network parameters")
    _, height, width = x.shape
    sizes = layer_sizes(height, width)
    encoder_sizes = [(height, width)]
    caches = []
    h = x
    for i, (spec, w, b) in enumerate(zip(params.layers, params.weights, params.biases)):
        in_shape = h.shape
        if spec.upsample_before:
            h = _upsample(h)
            target_h, target_w = encoder_sizes[-1]
            encoder_sizes.pop()
            h = h[:, :target_h, :target_w]
        unpadded_shape = h.shape
        if spec.stride == 2:
            encoder_sizes.append(h.shape[1:])
            ph, pw = h.shape[1] % 2, h.shape[2] % 2
            if ph or pw:
                h = np.pad(h, ((0, 0), (0, ph), (0, pw)))
        xp = np.pad(h, ((0, 0), (1, 1), (1, 1)))
        out_h = (xp.shape[1] - 3) // spec.stride + 1
        out_w = (xp.shape[2] - 3) // spec.stride + 1
        cols = _im2col(xp, spec.stride, out_h, out_w)
        z = (w.reshape(spec.out_channels, -1) @ cols + b[:, None]).reshape(spec.out_channels, out_h, out_w)
        act = _sigmoid(z) if spec.activation == "sigmoid" else np.maximum(z, 0.0)
        gw, gh = sizes[i]
        assert (out_h, out_w) == (gh, gw), (out_h, out_w, gh, gw)
        last = i == len(params.layers) - 1
        gate = resample_field(attention, gw, gh) if (gate_output or not last) else np.ones((gh, gw))
        caches.append(dict(in_shape=in_shape, unpadded_shape=unpadded_shape, xp_shape=xp.shape, cols=cols, z=z, act=act, gate=gate))
        h = act * gate
    return h[0], caches


def forward(params: NetworkParams, visible: RasterImage, attention: AttentionMap, gate_output=True) -> np.ndarray:
    """Network output ``t`` of shape ``(H, W)`` with values in ``[0, 1)``."""
    _check_inputs(visible, attention)
    t, _ = _forward(params, visible.data, attention.values, gate_output)
    return t


def _check_inputs(visible, attention):
    if visible.channels != 3:
        raise ValueError("network input must have 3 channels")
    if attention.values.shape != (visible.height, visible.width):
        raise ValueError(
            f"attention is {attention.width}x{attention.height}, image is {visible.width}x{visible.height}"
        )


def _backward(params: NetworkParams, caches, grad_out: np.ndarray):
    grads_w = [None] * len(params.layers)
    grads_b = [None] * len(params.layers)
    g = grad_out[np.newaxis]
    for i in reversed(range(len(params.layers))):
        spec, w, c = params.layers[i], params.weights[i], caches[i]
        g = g * c["gate"]
        if spec.activation == "sigmoid":
            dz = g * c["act"] * (1.0 - c["act"])
        else:
            dz = g * (c["z"] > 0.0)
        dz2 = dz.reshape(spec.out_channels, -1)
        grads_w[i] = (dz2 @ c["cols"].T).reshape(w.shape)
        grads_b[i] = dz2.sum(axis=1)
        if i == 0:
            break
        dcols = w.reshape(spec.out_channels, -1).T @ dz2
        dxp = _col2im(dcols, c["xp_shape"], spec.stride, *dz.shape[1:])
        # drop the conv zero border and any even-padding, then undo crop + upsample
        _, uh, uw = c["unpadded_shape"]
        g = dxp[:, 1 : 1 + uh, 1 : 1 + uw]
        if spec.upsample_before:
            _, hi, wi = c["in_shape"]
            full = np.zeros((g.shape[0], 2 * hi, 2 * wi))
            full[:, : g.shape[1], : g.shape[2]] = g
            g = _upsample_adjoint(full)
    return grads_w, grads_b


def loss_and_grad(
    params: NetworkParams,
    visible: RasterImage,
    attention: AttentionMap,
    t_tilde,
    lap: SparseAffinity,
    lam: float = DEFAULT_LAMBDA,
    gate_output=True,
    extra_grad=None,
):
    """BCP loss of the network output and its gradient for every parameter.

    ``extra_grad`` is an optional callable ``t -> (loss, dloss/dt)`` whose terms
    are added, used for detector coupling.
    """
    _check_inputs(visible, attention)
    t, caches = _forward(params, visible.data, attention.values, gate_output)
    breakdown = bcp_loss(t, t_tilde, lap, lam, attention)
    grad_t = bcp_loss_grad(t, t_tilde, lap, lam, attention)
    extra = 0.0
    if extra_grad is not None:
        extra, g_extra = extra_grad(t)
        grad_t = grad_t + g_extra
    if not np.all(np.isfinite(grad_t)):
        raise FloatingPointError("non-finite loss gradient")
    gw, gb = _backward(params, caches, grad_t)
    grads = NetworkParams(gw, gb, params.seed, params.layers)
    return breakdown, extra, grads, t


def backward(params, visible, attention, t_tilde, lap, lam=DEFAULT_LAMBDA, gate_output=True) -> NetworkParams:
    """Gradient of the BCP loss of ``forward(...)`` with respect to every parameter."""
    return loss_and_grad(params, visible, attention, t_tilde, lap, lam, gate_output)[2]


# -- training ------------------------------------------------------------------


@dataclass
class TrainResult:
    params: NetworkParams
    t: IlluminationMap
    history: list
    t_tilde: IlluminationMap
    ambient: AmbientLight
    attention: AttentionMap
    laplacian: SparseAffinity
    extra_history: list = field(default_factory=list)


def train(visible: RasterImage, thermal: RasterImage, cfg: TrainConfig = TrainConfig(), detector_term=None, lap=None) -> TrainResult:
    """Fit the network to the initial illumination of ``visible`` by plain gradient descent.

    ``history[k]`` is the loss of the parameters before update ``k``; the
    returned map is the forward pass after the final update, floored at
    ``cfg.t_min``.
    """
    if (visible.width, visible.height) != (thermal.width, thermal.height):
        raise ValueError(
            f"visible is {visible.width}x{visible.height} but thermal is {thermal.width}x{thermal.height}"
        )
    ambient = estimate_ambient(visible, cfg.ambient_fraction)
    t_tilde = initial_illumination(visible, ambient, cfg.patch, cfg.t_min)
    attention = build_attention(thermal, cfg.gamma)
    if lap is None:
        lap = build_matting_laplacian(visible)
    params = NetworkParams.initialize(cfg.seed)
    history, extra_history = [], []
    for step in range(cfg.steps):
        breakdown, extra, grads, _ = loss_and_grad(
            params, visible, attention, t_tilde, lap, cfg.lam, cfg.gate_output, detector_term
        )
        if not math.isfinite(breakdown.total) or not math.isfinite(extra):
            raise TrainingDiverged(f"loss became non-finite at step {step}", step, history)
        history.append(breakdown)
        extra_history.append(extra)
        params = params.with_flat(params.flatten() - cfg.learning_rate * grads.flatten())
        if not params.is_finite():
            raise TrainingDiverged(f"parameters became non-finite at step {step}", step, history)
    t = forward(params, visible, attention, cfg.gate_output)
    t_map = IlluminationMap(np.clip(t, cfg.t_min, 1.0), t_min=cfg.t_min)
    return TrainResult(params, t_map, history, t_tilde, ambient, attention, lap, extra_history)


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(params: NetworkParams, path) -> None:
    """Header ``magic, version, layer count, (out, in, kh, kw) per layer`` then LE float64s."""
    header = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params.weights))]
    for w in params.weights:
        header.append(struct.pack("<4I", *w.shape))
    body = [a.astype("<f8").tobytes() for a in params.arrays()]
    Path(path).write_bytes(b"".join(header + body))


def load_checkpoint(path) -> NetworkParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    shapes = []
    for _ in range(count):
        shapes.append(struct.unpack_from("<4I", raw, pos))
        pos += 16
    weights, biases = [], []
    for shape in shapes:
        n = int(np.prod(shape))
        weights.append(np.frombuffer(raw, "<f8", n, pos).reshape(shape).astype(np.float64))
        pos += 8 * n
        biases.append(np.frombuffer(raw, "<f8", shape[0], pos).astype(np.float64))
        pos += 8 * shape[0]
    if pos != len(raw):
        raise ValueError(f"{path}: trailing or missing checkpoint data")
    return NetworkParams(weights, biases)
