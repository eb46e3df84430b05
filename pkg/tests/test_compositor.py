"""compositor: alpha matte correctness against a dense convolution oracle."""

from __future__ import annotations

import numpy as np
import pytest

from outline_forge.compositor import BlendParams, blend_alpha, compose
from outline_forge.errors import DimensionMismatch
from outline_forge.image import Image
from outline_forge.mask import BinaryMask

from conftest import gradient_image


def square_mask(size: int, x: int, y: int, side: int) -> BinaryMask:
    bits = np.zeros((size, size), dtype=bool)
    bits[y : y + side, x : x + side] = True
    return BinaryMask(bits)


# ---------------------------------------------------------------------------
# dense 2-D oracle: full kernel outer product, direct windowed sums,
# edge-replicate boundary like the implementation contract


def dense_alpha_oracle(mask: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    g /= g.sum()
    kernel2d = np.outer(g, g)
    h, w = mask.shape
    padded = np.pad(mask.astype(np.float64), radius, mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            window = padded[y : y + 2 * radius + 1, x : x + 2 * radius + 1]
            out[y, x] = float((window * kernel2d).sum())
    return np.clip(out, 0.0, 1.0)


def chebyshev_distance_field(mask: np.ndarray) -> np.ndarray:
    """Distance of each pixel to the nearest set pixel (brute force)."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    out = np.full((h, w), np.inf)
    for y in range(h):
        for x in range(w):
            out[y, x] = np.min(np.maximum(np.abs(ys - y), np.abs(xs - x)))
    return out


def test_empty_mask_returns_original():
    original = gradient_image(40, 40)
    generated = gradient_image(40, 40, phase=50)
    out = compose(original, generated, BinaryMask.zeros(40, 40), BlendParams(2.0))
    assert out == original


def test_full_mask_returns_generated():
    original = gradient_image(40, 40)
    generated = gradient_image(40, 40, phase=50)
    out = compose(original, generated, BinaryMask.full(40, 40), BlendParams(2.0))
    assert out == generated


def test_seam_matches_dense_oracle():
    params = BlendParams(2.0)
    assert params.radius == 6
    original = gradient_image(64, 64)
    generated = gradient_image(64, 64, phase=90)
    mask = square_mask(64, 22, 22, 20)  # 20x20 square at (22, 22)
    out = compose(original, generated, mask, params)

    alpha = dense_alpha_oracle(mask.data, params.sigma, params.radius)[:, :, None]
    expected = np.floor(
        alpha * generated.data.astype(np.float64)
        + (1.0 - alpha) * original.data.astype(np.float64)
        + 0.5
    ).astype(np.uint8)
    # corner pixel far from the mask: original bits
    assert np.array_equal(out.data[0, 0], original.data[0, 0])
    # mask center: generated bits
    assert np.array_equal(out.data[32, 32], generated.data[32, 32])
    # whole frame within 1/255 of the dense oracle
    assert np.max(np.abs(out.data.astype(int) - expected.astype(int))) <= 1


def test_alpha_matches_dense_oracle_closely():
    params = BlendParams(1.5)
    mask = square_mask(40, 12, 9, 14)
    got = blend_alpha(mask, params)
    want = dense_alpha_oracle(mask.data, params.sigma, params.radius)
    assert np.max(np.abs(got - want)) < 1e-12


def test_bit_exact_preservation_outside_radius():
    params = BlendParams(2.0)
    radius = params.radius
    original = gradient_image(64, 64)
    generated = Image(np.full((64, 64, 3), 255, dtype=np.uint8))
    mask = square_mask(64, 24, 24, 12)
    out = compose(original, generated, mask, params)
    dist = chebyshev_distance_field(mask.data)
    far = dist > radius
    assert far.any()
    assert np.array_equal(out.data[far], original.data[far])
    # and pixels whose full kernel support lies inside the mask equal generated
    inner = dist == 0
    core = np.zeros_like(mask.data)
    core[24 + radius : 36 - radius, 24 + radius : 36 - radius] = True
    assert np.array_equal(out.data[core], generated.data[core])


def test_compose_equal_inputs_is_identity():
    params = BlendParams(2.5)
    img = gradient_image(48, 48)
    mask = square_mask(48, 10, 10, 17)
    assert compose(img, img, mask, params) == img


def test_alpha_monotone_along_ray_from_convex_mask():
    params = BlendParams(2.0)
    mask = square_mask(64, 20, 20, 10)
    alpha = blend_alpha(mask, params)
    row = alpha[25, 29:]  # walking right from inside the mask
    assert np.all(np.diff(row) <= 1e-12)


def test_blend_params_radius_rule():
    assert BlendParams(2.0).radius == 6
    assert BlendParams(1.1).radius == 4  # ceil(3.3)
    with pytest.raises(ValueError):
        BlendParams(0.0)


def test_compose_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        compose(
            gradient_image(10, 10),
            gradient_image(11, 10),
            BinaryMask.zeros(10, 10),
            BlendParams(1.0),
        )
