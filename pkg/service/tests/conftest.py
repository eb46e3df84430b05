"""Service test fixtures: in-process client plus golden fixture paths."""

from __future__ import annotations

import base64
from io import BytesIO
from pathlib import Path

import numpy as np
import PIL.Image
import pytest
from fastapi.testclient import TestClient

from outline_forge_service.app import create_app
from outline_forge_service.config import ServiceConfig

PROTOCOL_FIXTURES = Path(__file__).resolve().parents[2] / "fixtures" / "protocol"


@pytest.fixture(scope="session")
def client() -> TestClient:
    return TestClient(create_app(ServiceConfig(engine="procedural")))


def png_b64(arr: np.ndarray, mode: str = "RGB") -> str:
    buf = BytesIO()
    PIL.Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(value: str) -> np.ndarray:
    raw = base64.b64decode(value)
    with PIL.Image.open(BytesIO(raw)) as pil:
        return np.asarray(pil.convert("RGB"))


def make_image(width: int = 512, height: int = 512, phase: int = 0) -> np.ndarray:
    xs = np.arange(width)
    ys = np.arange(height)
    r = np.broadcast_to(((xs + phase) % 256).astype(np.uint8), (height, width))
    g = np.broadcast_to(((ys[:, None] + phase) % 256).astype(np.uint8), (height, width))
    b = ((xs[None, :] + ys[:, None]) % 256).astype(np.uint8)
    return np.stack([r, g, b], axis=2).copy()


def square_mask_png_b64(side: int = 128) -> str:
    mask = np.zeros((512, 512), dtype=np.uint8)
    lo = (512 - side) // 2
    mask[lo : lo + side, lo : lo + side] = 255
    return png_b64(mask, mode="L")
