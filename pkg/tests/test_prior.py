import math

import numpy as np
import pytest
from conftest import brute_patch_max, random_rgb, synthetic_bright_scene

from bcpenhance.image import RasterImage
from bcpenhance.prior import (
    AmbientLight,
    IlluminationMap,
    PatchSpec,
    bright_channel,
    estimate_ambient,
    initial_illumination,
    raw_illumination,
)


def test_bright_channel_constant():
    img = RasterImage(np.full((3, 6, 5), 0.42))
    for r in (0, 1, 7):
        assert np.all(bright_channel(img, PatchSpec(r)).data == 0.42)


def test_bright_channel_radius_zero():
    img = RasterImage.from_hwc(np.array([[[0.2, 0.5, 0.3]]]))
    assert bright_channel(img, PatchSpec(0)).data[0, 0, 0] == 0.5


def test_bright_channel_single_spike():
    data = np.full((3, 3, 3), 0.1)
    data[:, 1, 1] = 0.9
    out = bright_channel(RasterImage(data), PatchSpec(1)).data[0]
    np.testing.assert_array_equal(out, brute_patch_max(data.max(axis=0), 1))
    assert np.all(out == 0.9)


@pytest.mark.parametrize("radius", [0, 1, 2, 4])
def test_bright_channel_matches_brute_force(rng, radius):
    img = random_rgb(rng, 9, 13)
    np.testing.assert_array_equal(bright_channel(img, PatchSpec(radius)).data[0], brute_patch_max(img.data.max(axis=0), radius))


def test_bright_channel_monotone(rng):
    base = rng.uniform(0, 0.7, (3, 10, 10))
    brighter = base + rng.uniform(0, 0.3, base.shape)
    lo = bright_channel(RasterImage(base), PatchSpec(2)).data
    hi = bright_channel(RasterImage(brighter), PatchSpec(2)).data
    assert np.all(hi >= lo)


def test_bright_channel_nondecreasing_in_radius(rng):
    img = random_rgb(rng, 12, 12)
    prev = bright_channel(img, PatchSpec(0)).data
    for r in range(1, 5):
        cur = bright_channel(img, PatchSpec(r)).data
        assert np.all(cur >= prev)
        prev = cur


def test_bright_channel_wrong_channels():
    with pytest.raises(ValueError):
        bright_channel(RasterImage(np.zeros((1, 3, 3))))
    with pytest.raises(ValueError):
        PatchSpec(-1)


def test_ambient_constant():
    img = RasterImage(np.full((3, 4, 4), 0.1))
    np.testing.assert_allclose(estimate_ambient(img).value, [0.1, 0.1, 0.1])


def test_ambient_fraction_one(rng):
    img = random_rgb(rng, 5, 7, 0, 0.9)
    np.testing.assert_allclose(estimate_ambient(img, 1.0).value, img.data.reshape(3, -1).mean(axis=1))


def test_ambient_selects_single_darkest():
    data = np.full((3, 20, 50), 0.5)
    data[:, 13, 7] = 0.0
    assert np.array_equal(estimate_ambient(RasterImage(data), 0.001).value, [0.0, 0.0, 0.0])


def test_ambient_clamped_below_one():
    a = estimate_ambient(RasterImage(np.ones((3, 3, 3))))
    np.testing.assert_allclose(a.value, [1 - 1e-3] * 3)
    assert np.all(a.value < 1.0)


def test_ambient_ties_break_row_major():
    data = np.full((3, 2, 3), 0.2)
    data[:, 0, 1] = (0.1, 0.05, 0.0)
    data[:, 1, 2] = (0.0, 0.1, 0.05)
    # both have channel max 0.1; the earlier pixel in row-major order wins
    np.testing.assert_array_equal(estimate_ambient(RasterImage(data), 1 / 6).value, [0.1, 0.05, 0.0])


def test_ambient_count_is_ceiling(rng):
    img = random_rgb(rng, 50, 60)  # 3000 pixels, 0.1% is exactly 3
    flat = img.data.reshape(3, -1)
    order = sorted(range(3000), key=lambda p: (flat[:, p].max(), p))
    np.testing.assert_array_equal(estimate_ambient(img, 0.001).value, flat[:, order[:3]].mean(axis=1))
    order = sorted(range(3000), key=lambda p: (flat[:, p].max(), p))[: math.ceil(0.0011 * 3000)]
    np.testing.assert_array_equal(estimate_ambient(img, 0.0011).value, flat[:, order].mean(axis=1))


def test_ambient_errors(rng):
    img = random_rgb(rng, 3, 3)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            estimate_ambient(img, bad)
    with pytest.raises(ValueError):
        AmbientLight((0.2, 1.0, 0.1))


def test_initial_illumination_constant_half():
    img = RasterImage(np.full((3, 5, 5), 0.5))
    for r in (0, 2, 7):
        t = initial_illumination(img, AmbientLight((0, 0, 0)), PatchSpec(r))
        np.testing.assert_allclose(t.values, 0.5)


def test_initial_illumination_at_ambient_clamps_to_floor():
    amb = AmbientLight((0.3, 0.2, 0.1))
    img = RasterImage(np.broadcast_to(amb.value[:, None, None], (3, 4, 4)))
    assert np.all(raw_illumination(img, amb, PatchSpec(1)) == 0.0)
    t = initial_illumination(img, amb, PatchSpec(1), t_min=0.05)
    assert np.all(t.values == 0.05)
    assert t.t_min == 0.05


@pytest.mark.parametrize("radius", [0, 1, 3])
def test_initial_illumination_inverts_formation(rng, dark_ambient, radius):
    t_true = 0.2 + 0.6 * rng.uniform()
    img, _ = synthetic_bright_scene(rng, 15, 17, t_true, dark_ambient, radius)
    np.testing.assert_allclose(raw_illumination(img, dark_ambient, PatchSpec(radius)), t_true, atol=1e-9, rtol=0)


def test_initial_illumination_exact_pointwise_radius_zero(rng, dark_ambient):
    t_true = rng.uniform(0.1, 1.0, (8, 8))
    img, _ = synthetic_bright_scene(rng, 8, 8, t_true, dark_ambient, 0)
    np.testing.assert_allclose(raw_illumination(img, dark_ambient, PatchSpec(0)), t_true, atol=1e-12, rtol=0)


def test_initial_illumination_directional(rng):
    amb = AmbientLight((0.05, 0.05, 0.05))
    dim = rng.uniform(0.1, 0.4, (3, 10, 10))
    bright = dim + 0.3
    t_dim = raw_illumination(RasterImage(dim), amb, PatchSpec(1))
    t_bright = raw_illumination(RasterImage(bright), amb, PatchSpec(1))
    assert np.all(t_bright >= t_dim)


def test_initial_illumination_range_and_errors(rng):
    img = random_rgb(rng, 6, 6)
    t = initial_illumination(img, estimate_ambient(img), PatchSpec(1), 0.1)
    assert t.values.min() >= 0.1 and t.values.max() <= 1.0
    with pytest.raises(ValueError):
        initial_illumination(img, estimate_ambient(img), PatchSpec(1), 0.0)
    with pytest.raises(ValueError):
        IlluminationMap(np.full((2, 2), 0.01), t_min=0.05)
