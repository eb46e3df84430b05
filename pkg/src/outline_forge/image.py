"""8-bit RGB image value type plus PNG/JPEG file handling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np
import PIL.Image

from .mask import BinaryMask


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable row-major 8-bit RGB raster."""

    data: np.ndarray  # uint8, shape (height, width, 3)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"image samples must be uint8, got {arr.dtype}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, color=(0, 0, 0)) -> "Image":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:] = np.asarray(color, dtype=np.uint8)
        return cls(arr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


def load_image(path: str | Path) -> Image:
    """Read a PNG or JPEG file as 8-bit RGB; alpha channels are dropped."""
    with PIL.Image.open(path) as pil:
        if pil.mode in ("RGBA", "LA", "PA"):
            warnings.warn(f"dropping alpha channel of {path}", stacklevel=2)
        rgb = pil.convert("RGB")
        return Image(np.asarray(rgb, dtype=np.uint8))


def save_png(image: Image, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PIL.Image.fromarray(image.data, mode="RGB").save(path, format="PNG")
    return path


def image_to_png_bytes(image: Image) -> bytes:
    buf = BytesIO()
    PIL.Image.fromarray(image.data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(raw: bytes) -> Image:
    with PIL.Image.open(BytesIO(raw)) as pil:
        return Image(np.asarray(pil.convert("RGB"), dtype=np.uint8))


def mask_to_png_bytes(mask: BinaryMask) -> bytes:
    """Render a mask as an 8-bit grayscale PNG, set pixels as 255."""
    buf = BytesIO()
    arr = np.where(mask.data, 255, 0).astype(np.uint8)
    PIL.Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(raw: bytes) -> BinaryMask:
    """Decode a 1-bit or 8-bit PNG into a mask; any nonzero sample is set."""
    with PIL.Image.open(BytesIO(raw)) as pil:
        arr = np.asarray(pil.convert("L"))
        return BinaryMask(arr != 0)


def save_mask_png(mask: BinaryMask, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(mask_to_png_bytes(mask))
    return path
