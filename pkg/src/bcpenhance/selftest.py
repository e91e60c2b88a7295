"""Embedded property suite run by ``bcpenhance selftest``.

Each property draws its own instances from a seeded generator and compares
the library against a brute-force or closed-form oracle kept in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionMap, build_attention
from .detector import stub_detector, total_loss
from .enhance import recover, resynthesize
from .image import RasterImage
from .laplacian import LossBreakdown, bcp_loss, bcp_loss_grad, build_matting_laplacian, smoothness_energy
from .network import NetworkParams, loss_and_grad
from .prior import AmbientLight, PatchSpec, estimate_ambient, raw_illumination
from .solver import SolverConfig, cg_solve, solve_illumination


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str


def dense_matting_laplacian(img: np.ndarray, eps: float) -> np.ndarray:
    """Straight-line evaluation of the matting Laplacian for a ``(3, H, W)`` array."""
    _, h, w = img.shape
    n = h * w
    lap = np.zeros((n, n))
    for y in range(h - 2):
        for x in range(w - 2):
            idx = [(y + dy) * w + (x + dx) for dy in range(3) for dx in range(3)]
            colours = np.array([img[:, (i // w), (i % w)] for i in idx])
            mu = colours.mean(axis=0)
            cov = (colours - mu).T @ (colours - mu) / 9.0
            inv = np.linalg.inv(cov + eps / 9.0 * np.eye(3))
            for a, i in enumerate(idx):
                for b, j in enumerate(idx):
                    lap[i, j] += (i == j) - (1.0 + (colours[a] - mu) @ inv @ (colours[b] - mu)) / 9.0
    return lap


def central_difference(f, x, step=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = f(x)
        flat[k] = orig - step
        lo = f(x)
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * step)
    return g


def relative_error(a, b, floor=1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def _rgb(rng, h, w, lo=0.0, hi=1.0):
    return RasterImage(rng.uniform(lo, hi, size=(3, h, w)))


def prop_laplacian_dense(rng, fault):
    img = _rgb(rng, 5, 6)
    lap = build_matting_laplacian(img, 1e-4)
    err = np.max(np.abs(lap.to_dense() - dense_matting_laplacian(img.data, 1e-4)))
    return err <= 1e-10, f"max |sparse - dense| = {err:.2e}"


def prop_laplacian_symmetric(rng, fault):
    dense = build_matting_laplacian(_rgb(rng, 7, 7)).to_dense()
    err = np.max(np.abs(dense - dense.T))
    return err == 0.0, f"max asymmetry {err:.2e}"


def prop_laplacian_row_sums(rng, fault):
    dense = build_matting_laplacian(_rgb(rng, 8, 6)).to_dense()
    err = np.max(np.abs(dense.sum(axis=1)))
    return err <= 1e-10, f"max |row sum| = {err:.2e}"


def prop_laplacian_psd(rng, fault):
    dense = build_matting_laplacian(_rgb(rng, 8, 8)).to_dense()
    low = np.linalg.eigvalsh(dense).min()
    return low >= -1e-8, f"smallest eigenvalue {low:.2e}"


def prop_smoothness_quadratic(rng, fault):
    lap = build_matting_laplacian(_rgb(rng, 6, 6))
    t = rng.uniform(size=(6, 6))
    rows, cols, vals = lap.entries()
    direct = float(np.sum(vals * t.ravel()[rows] * t.ravel()[cols]))
    err = abs(smoothness_energy(lap, t) - direct)
    return err <= 1e-10, f"|t'Lt - sum L_ij t_i t_j| = {err:.2e}"


def prop_loss_gradient(rng, fault):
    lap = build_matting_laplacian(_rgb(rng, 6, 6))
    t, tt, a = rng.uniform(0.1, 1, (3, 6, 6))
    g = bcp_loss_grad(t, tt, lap, 0.3, a)
    fd = central_difference(lambda x: bcp_loss(x, tt, lap, 0.3, a).total, t)
    err = relative_error(g, fd)
    return err < 1e-5, f"relative error {err:.2e}"


def prop_cg_dense(rng, fault):
    m = rng.normal(size=(20, 20))
    spd = m @ m.T + 20 * np.eye(20)
    b = rng.normal(size=20)
    x = cg_solve(lambda v: spd @ v, b, 1e-12, 100)
    err = np.max(np.abs(x - np.linalg.solve(spd, b)))
    return err <= 1e-8, f"max |cg - dense| = {err:.2e}"


def prop_refine_dense(rng, fault):
    img = _rgb(rng, 8, 8)
    lap = build_matting_laplacian(img)
    tt = rng.uniform(0.1, 1, (8, 8))
    lam = 0.1
    t = solve_illumination(tt, lap, None, SolverConfig(lam, 1000, 1e-13))
    dense = np.linalg.solve(np.eye(64) + lam * lap.to_dense(), tt.ravel())
    err = np.max(np.abs(t.ravel() - dense)) / np.max(np.abs(dense))
    better = bcp_loss(t, tt, lap, lam).total <= bcp_loss(tt, tt, lap, lam).total
    return err <= 1e-8 and better, f"relative error {err:.2e}, objective decreased: {better}"


def prop_inverse_pair(rng, fault):
    j = _rgb(rng, 16, 16)
    t = rng.uniform(0.1, 1.0, (16, 16))
    amb = AmbientLight(rng.uniform(0, 0.5, 3))
    i = resynthesize(j, t, amb)
    back_amb = AmbientLight(amb.value + 0.01) if fault else amb
    err = np.max(np.abs(resynthesize(recover(i, t, back_amb), t, amb).data - i.data))
    return err <= 1e-9, f"max round-trip error {err:.2e}"


def prop_prior_recovery(rng, fault):
    h = w = 12
    j = rng.uniform(0, 0.9, (3, h, w))
    j[rng.integers(0, 3, (h, w)), np.arange(h)[:, None], np.arange(w)[None, :]] = 1.0
    t_true, amb = 0.37, AmbientLight(rng.uniform(0, 0.3, 3))
    i = RasterImage(t_true * j + (1 - t_true) * amb.value[:, None, None])
    err = np.max(np.abs(raw_illumination(i, amb, PatchSpec(2)) - t_true))
    return err <= 1e-9, f"max |t~ - t| = {err:.2e}"


def prop_ambient_sort(rng, fault):
    img = _rgb(rng, 32, 32)
    n = 32 * 32
    k = math.ceil(0.001 * n)
    flat = img.data.reshape(3, -1)
    order = sorted(range(n), key=lambda p: (max(flat[:, p]), p))[:k]
    expected = np.minimum(flat[:, order].mean(axis=1), 1 - 1e-3)
    got = estimate_ambient(img, 0.001).value
    return bool(np.array_equal(got, expected)), f"estimate {got}, oracle {expected}"


def prop_attention(rng, fault):
    v = rng.uniform(0, 1, 1000)
    thermal = RasterImage(v.reshape(1, 10, 100))
    a1 = build_attention(thermal, 1.0).values.ravel()
    a2 = build_attention(thermal, 2.0).values.ravel()
    a3 = build_attention(thermal, 3.5).values.ravel()
    ok = np.array_equal(a1, v) and np.all(a3 <= a2) and np.all(a2 <= a1) and a3.min() >= 0 and a1.max() <= 1
    return bool(ok), "gamma=1 identity, monotone in gamma, range [0, 1]"


def prop_network_gradient(rng, fault):
    vis = _rgb(rng, 8, 8)
    att = AttentionMap(rng.uniform(0.3, 1.0, (8, 8)), 2.0)
    tt = rng.uniform(0.1, 1.0, (8, 8))
    lap = build_matting_laplacian(vis)
    params = NetworkParams.initialize(int(rng.integers(1 << 31)))
    flat = params.flatten() + rng.normal(0, 0.05, params.flatten().size)
    params = params.with_flat(flat)
    grads = loss_and_grad(params, vis, att, tt, lap, 0.1)[2].flatten()
    picks = rng.choice(flat.size, 40, replace=False)

    def loss_at(x):
        return loss_and_grad(params.with_flat(x), vis, att, tt, lap, 0.1)[0].total

    fd = []
    for k in picks:
        e = np.zeros_like(flat)
        e[k] = 1e-5
        fd.append((loss_at(flat + e) - loss_at(flat - e)) / 2e-5)
    err = relative_error(grads[picks], fd)
    return err < 1e-4, f"relative error {err:.2e} on {picks.size} parameters"


def prop_detector_gradient(rng, fault):
    enh = _rgb(rng, 8, 8, 0.05, 0.95)
    thermal = RasterImage(rng.uniform(0.5, 1.0, (1, 8, 8)))
    loss, grad = stub_detector(enh, thermal)
    fd = central_difference(lambda x: stub_detector(RasterImage(x), thermal)[0], enh.data)
    err = relative_error(grad, fd)
    return err < 1e-4, f"loss {loss:.4f}, relative error {err:.2e}"


def prop_total_loss(rng, fault):
    bcp = LossBreakdown(0.0, 0.0, float(rng.uniform()), 0.0, 1)
    d, beta = rng.uniform(size=2)
    t0 = total_loss(bcp, 0.0, beta).total
    t1 = total_loss(bcp, d, beta).total
    err = abs(t1 - t0 - beta * d)
    return err <= 4 * np.finfo(float).eps, f"slope error {err:.1e}"


PROPERTIES = [
    ("laplacian_matches_dense_oracle", prop_laplacian_dense),
    ("laplacian_symmetric", prop_laplacian_symmetric),
    ("laplacian_zero_row_sums", prop_laplacian_row_sums),
    ("laplacian_psd", prop_laplacian_psd),
    ("smoothness_quadratic_form", prop_smoothness_quadratic),
    ("bcp_loss_gradient", prop_loss_gradient),
    ("cg_matches_dense_solve", prop_cg_dense),
    ("refine_matches_dense_solve", prop_refine_dense),
    ("recover_resynthesize_inverse", prop_inverse_pair),
    ("prior_exact_recovery", prop_prior_recovery),
    ("ambient_matches_sort_oracle", prop_ambient_sort),
    ("attention_properties", prop_attention),
    ("network_gradient", prop_network_gradient),
    ("detector_gradient", prop_detector_gradient),
    ("total_loss_linear", prop_total_loss),
]


def run_selftest(seed: int = 0, inject_fault: bool = False) -> list[PropertyResult]:
    results = []
    for i, (name, check) in enumerate(PROPERTIES):
        rng = np.random.default_rng([seed, i])
        try:
            passed, detail = check(rng, inject_fault)
        except Exception as exc:  # a crash is a failed property
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(PropertyResult(name, bool(passed), detail))
    return results


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'property':<{width}}  result  detail", "-" * (width + 40)]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} properties passed")
    return "\n".join(lines)
