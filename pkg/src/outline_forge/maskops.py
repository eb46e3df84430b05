"""Binary mask morphology: erosion, dilation, outline bands, vanish checks.

Conventions (fixed, not configurable):

* Square structuring elements only. A window of side k is anchored so the
  output pixel sits at offset ``(k-1)//2`` inside the window, matching the
  common image-library convention for even sides.
* Off-image pixels count as unset, so erosion shrinks masks that touch the
  border and never marks anything outside the frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .image import Image
from .mask import BinaryMask


@dataclass(frozen=True)
class SquareKernel:
    """Side length of the square structuring element; 0 (or 1) is identity."""

    side: int

    def __post_init__(self):
        if self.side < 0:
            raise ValueError(f"kernel side must be >= 0, got {self.side}")

    @property
    def anchor(self) -> int:
        return (self.side - 1) // 2


@dataclass(frozen=True)
class OutlineBand:
    """Partition of a mask into the inpaint region and the visible outline."""

    inner: BinaryMask  # eroded mask, the region handed to the inpainting model
    ring: BinaryMask  # original minus inner, the outline left as guidance
    original: BinaryMask

    def __post_init__(self):
        if not self.inner.is_subset_of(self.original):
            raise ValueError("inner band must be a subset of the original mask")
        if (self.inner | self.ring) != self.original or (self.inner & self.ring).area:
            raise ValueError("inner and ring must partition the original mask")


def _window_sums(bits: np.ndarray, side: int) -> np.ndarray:
    """Sum of each side x side window via an integral image, zero padded."""
    h, w = bits.shape
    anchor = (side - 1) // 2
    padded = np.zeros((h + side - 1, w + side - 1), dtype=np.int64)
    padded[anchor : anchor + h, anchor : anchor + w] = bits
    integral = np.zeros((h + side, w + side), dtype=np.int64)
    integral[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    return (
        integral[side:, side:]
        - integral[:-side, side:]
        - integral[side:, :-side]
        + integral[:-side, :-side]
    )


def erode(mask: BinaryMask, kernel: SquareKernel) -> BinaryMask:
    """Keep a pixel only when its whole kernel window is set in the input."""
    if kernel.side <= 1:
        return BinaryMask(mask.data)
    sums = _window_sums(mask.data.astype(np.int64), kernel.side)
    return BinaryMask(sums == kernel.side * kernel.side)


def dilate(mask: BinaryMask, kernel: SquareKernel) -> BinaryMask:
    """Set a pixel when any pixel of its kernel window is set in the input."""
    if kernel.side <= 1:
        return BinaryMask(mask.data)
    sums = _window_sums(mask.data.astype(np.int64), kernel.side)
    return BinaryMask(sums > 0)


def split_outline(mask: BinaryMask, kernel: SquareKernel) -> OutlineBand:
    inner = erode(mask, kernel)
    return OutlineBand(inner=inner, ring=mask.minus(inner), original=mask)


def is_vanished(mask: BinaryMask, min_pixels: int = 1) -> bool:
    """True when the mask fell below the minimum usable pixel count."""
    if min_pixels < 1:
        raise ValueError(f"min_pixels must be >= 1, got {min_pixels}")
    return mask.area < min_pixels


def bbox_of(mask: BinaryMask) -> tuple[int, int, int, int] | None:
    """Tight (x, y, w, h) over set pixels, or None for an all-zero mask."""
    rows = np.flatnonzero(mask.data.any(axis=1))
    cols = np.flatnonzero(mask.data.any(axis=0))
    if rows.size == 0:
        return None
    return (
        int(cols[0]),
        int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )


def replace_background_with_noise(image: Image, keep: BinaryMask, seed: int) -> Image:
    """Replace every pixel outside `keep` with seeded uniform channel noise."""
    if (image.width, image.height) != (keep.width, keep.height):
        raise DimensionMismatch(
            f"image is {image.width}x{image.height}, keep mask is "
            f"{keep.width}x{keep.height}"
        )
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    noise = rng.integers(0, 256, size=image.data.shape, dtype=np.uint8)
    out = np.where(keep.data[:, :, None], image.data, noise)
    return Image(out)
