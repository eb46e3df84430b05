"""Image geometry shared by the augmentation pipeline.

Covers padding/cropping to the model resolution, the inverse paste-back,
paired image/mask transforms, and deterministic resizing. Everything here is
integer or float64 math implemented in numpy so results are bit-stable across
platforms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .image import Image
from .mask import BinaryMask

TARGET_RESOLUTION = (512, 512)

GEOMETRIC_KINDS = frozenset({"hflip", "vflip", "rot90", "rot180", "rot270"})
PIXEL_KINDS = frozenset({"grayscale", "invert", "channel_shuffle"})


class PadFill(enum.Enum):
    EDGE = "edge"  # replicate border rows/columns
    BLACK = "black"  # constant zeros


@dataclass(frozen=True)
class CanvasPlan:
    """How to pad and crop one image to the working resolution."""

    pad: tuple[int, int, int, int]  # (left, top, right, bottom)
    crop: tuple[int, int, int, int]  # (x, y, w, h) on the padded canvas
    target: tuple[int, int] = TARGET_RESOLUTION
    object_cut: bool = False  # focus bbox larger than the target window

    @property
    def is_identity(self) -> bool:
        return self.pad == (0, 0, 0, 0) and self.crop[:2] == (0, 0)


@dataclass(frozen=True)
class Transform:
    """One augmentation step; geometric kinds move the mask along."""

    kind: str
    permutation: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in GEOMETRIC_KINDS | PIXEL_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.permutation is not None and sorted(self.permutation) != [0, 1, 2]:
            raise ValueError(f"bad channel permutation {self.permutation!r}")

    @property
    def geometric(self) -> bool:
        return self.kind in GEOMETRIC_KINDS


def plan_canvas(
    image_dims: tuple[int, int],
    focus_bbox: tuple[float, float, float, float],
    target: tuple[int, int] = TARGET_RESOLUTION,
) -> CanvasPlan:
    """Plan padding and a bbox-centered crop window of the target size.

    Padding is added only on axes where the image is smaller than the target,
    split evenly (extra pixel on the right/bottom). The crop is centered on
    the bbox center and clamped to the padded canvas, so the focus object
    stays in frame whenever it fits.
    """
    width, height = image_dims
    tw, th = target
    bx, by, bw, bh = focus_bbox
    if bx < 0 or by < 0 or bx + bw > width or by + bh > height:
        raise ValueError(f"focus bbox {focus_bbox} not inside {width}x{height} image")

    pad_w = max(0, tw - width)
    pad_h = max(0, th - height)
    left, top = pad_w // 2, pad_h // 2
    pad = (left, top, pad_w - left, pad_h - top)
    padded_w, padded_h = width + pad_w, height + pad_h

    cx = bx + bw / 2.0 + left
    cy = by + bh / 2.0 + top
    crop_x = int(math.floor(cx - tw / 2.0 + 0.5))
    crop_y = int(math.floor(cy - th / 2.0 + 0.5))
    crop_x = min(max(crop_x, 0), padded_w - tw)
    crop_y = min(max(crop_y, 0), padded_h - th)

    return CanvasPlan(
        pad=pad,
        crop=(crop_x, crop_y, tw, th),
        target=(tw, th),
        object_cut=bw > tw or bh > th,
    )


def _pad_image(data: np.ndarray, pad: tuple[int, int, int, int], fill: PadFill) -> np.ndarray:
    left, top, right, bottom = pad
    widths = ((top, bottom), (left, right), (0, 0))
    if fill is PadFill.EDGE:
        return np.pad(data, widths, mode="edge")
    return np.pad(data, widths, mode="constant", constant_values=0)


def apply_canvas(
    image: Image,
    mask: BinaryMask,
    plan: CanvasPlan,
    fill: PadFill = PadFill.EDGE,
) -> tuple[Image, BinaryMask]:
    """Pad then crop an image/mask pair to the plan's target size.

    Mask padding is always unset bits regardless of the image fill policy.
    """
    if (image.width, image.height) != (mask.width, mask.height):
        raise DimensionMismatch("image and mask dimensions differ")
    left, top, right, bottom = plan.pad
    x, y, w, h = plan.crop
    img = _pad_image(image.data, plan.pad, fill)[y : y + h, x : x + w]
    msk = np.pad(mask.data, ((top, bottom), (left, right)), mode="constant")[
        y : y + h, x : x + w
    ]
    return Image(img), BinaryMask(msk)


def invert_canvas(result: Image, plan: CanvasPlan, original: Image) -> Image:
    """Paste a target-sized result back into the original image geometry.

    Pixels of the original covered by the crop window are replaced; padding
    regions of the result are discarded; everything else stays untouched.
    """
    tw, th = plan.target
    if (result.width, result.height) != (tw, th):
        raise DimensionMismatch(f"result must be {tw}x{th}, got {result.width}x{result.height}")
    left, top = plan.pad[0], plan.pad[1]
    x, y, w, h = plan.crop

    # Overlap of the crop window with the original image, in padded coords.
    ox0 = max(x, left)
    oy0 = max(y, top)
    ox1 = min(x + w, left + original.width)
    oy1 = min(y + h, top + original.height)
    out = original.data.copy()
    if ox1 > ox0 and oy1 > oy0:
        out[oy0 - top : oy1 - top, ox0 - left : ox1 - left] = result.data[
            oy0 - y : oy1 - y, ox0 - x : ox1 - x
        ]
    return Image(out)


def _grayscale(data: np.ndarray) -> np.ndarray:
    # Integer BT.601 weights over 256 keep this bit-exact everywhere.
    r = data[:, :, 0].astype(np.uint32)
    g = data[:, :, 1].astype(np.uint32)
    b = data[:, :, 2].astype(np.uint32)
    luma = ((77 * r + 150 * g + 29 * b) >> 8).astype(np.uint8)
    return np.repeat(luma[:, :, None], 3, axis=2)


def apply_transform(
    image: Image,
    mask: BinaryMask,
    transform: Transform,
    seed: int = 0,
) -> tuple[Image, BinaryMask]:
    """Apply one transform; geometric kinds permute image and mask pixels identically."""
    data = image.data
    bits = mask.data
    kind = transform.kind
    if kind == "hflip":
        data, bits = data[:, ::-1], bits[:, ::-1]
    elif kind == "vflip":
        data, bits = data[::-1], bits[::-1]
    elif kind in ("rot90", "rot180", "rot270"):
        turns = {"rot90": 1, "rot180": 2, "rot270": 3}[kind]
        data, bits = np.rot90(data, turns), np.rot90(bits, turns)
    elif kind == "grayscale":
        data = _grayscale(data)
    elif kind == "invert":
        data = 255 - data
    elif kind == "channel_shuffle":
        perm = transform.permutation
        if perm is None:
            perm = tuple(np.random.default_rng(seed).permutation(3).tolist())
        data = data[:, :, list(perm)]
    return Image(np.ascontiguousarray(data)), BinaryMask(np.ascontiguousarray(bits))


def resize(image: Image, target: tuple[int, int], mode: str = "bilinear") -> Image:
    """Deterministic resize with half-pixel-center sampling."""
    tw, th = target
    if tw < 1 or th < 1:
        raise ValueError(f"target must be at least 1x1, got {target}")
    if (tw, th) == (image.width, image.height):
        return Image(image.data)
    if mode == "nearest":
        ys = _nearest_indices(image.height, th)
        xs = _nearest_indices(image.width, tw)
        return Image(image.data[np.ix_(ys, xs)])
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    out = _bilinear(image.data.astype(np.float64), tw, th)
    return Image(np.floor(out + 0.5).astype(np.uint8))


def resize_mask(mask: BinaryMask, target: tuple[int, int]) -> BinaryMask:
    """Nearest-neighbor mask resize; keeps the mask strictly binary."""
    tw, th = target
    if tw < 1 or th < 1:
        raise ValueError(f"target must be at least 1x1, got {target}")
    if (tw, th) == (mask.width, mask.height):
        return BinaryMask(mask.data)
    ys = _nearest_indices(mask.height, th)
    xs = _nearest_indices(mask.width, tw)
    return BinaryMask(mask.data[np.ix_(ys, xs)])


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst)
    return np.clip(np.floor(centers).astype(np.int64), 0, src - 1)


def _bilinear(data: np.ndarray, tw: int, th: int) -> np.ndarray:
    src_h, src_w = data.shape[:2]
    xs = (np.arange(tw, dtype=np.float64) + 0.5) * (src_w / tw) - 0.5
    ys = (np.arange(th, dtype=np.float64) + 0.5) * (src_h / th) - 0.5
    xs = np.clip(xs, 0.0, src_w - 1.0)  # clamp-to-edge sampling
    ys = np.clip(ys, 0.0, src_h - 1.0)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    wx = (xs - x0)[None, :, None]
    wy = (ys - y0)[:, None, None]
    x0i = x0.astype(np.int64)
    x1i = np.minimum(x0i + 1, src_w - 1)
    y0i = y0.astype(np.int64)
    y1i = np.minimum(y0i + 1, src_h - 1)
    top = data[y0i][:, x0i] * (1 - wx) + data[y0i][:, x1i] * wx
    bot = data[y1i][:, x0i] * (1 - wx) + data[y1i][:, x1i] * wx
    return top * (1 - wy) + bot * wy
