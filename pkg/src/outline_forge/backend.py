"""Pluggable inpainting backends: HTTP client, deterministic mock, identity.

Wire protocol (authoritative copy):

    POST /v1/inpaint
      {"image_png_b64": str, "mask_png_b64": str, "prompt": str,
       "negative_prompt": str, "seed": int, "steps": int,
       "guidance_scale": float}
      -> 200 {"image_png_b64": str, "backend_id": str}
      -> 4xx/5xx {"error": str}
    GET /v1/health -> {"status": "ok", "model": str}

Masks travel as 1-bit or 8-bit PNGs where any nonzero sample marks a pixel
to inpaint. Backends return a full frame; callers must not assume the
unmasked region survived (latent codecs are lossy), compositing is the
compositor's job.
"""

from __future__ import annotations

import base64
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import requests

from .errors import BackendRejected, BackendUnreachable, ProtocolViolation
from .image import (
    Image,
    image_from_png_bytes,
    image_to_png_bytes,
    mask_to_png_bytes,
)
from .imageops import TARGET_RESOLUTION
from .mask import BinaryMask
from .maskops import SquareKernel, dilate
from .prompts import PromptSpec

DEFAULT_STEPS = 50
DEFAULT_GUIDANCE_SCALE = 7.5

# Ring used by the mock to pick its fill color: grow the mask by 8 px.
_MOCK_RING_KERNEL = SquareKernel(17)


@dataclass(frozen=True, eq=False)
class InpaintJob:
    """One backend round trip; image and mask at the working resolution."""

    image: Image
    mask: BinaryMask  # set = region to inpaint
    prompt: PromptSpec
    seed: int
    steps: int = DEFAULT_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE

    def __post_init__(self):
        tw, th = TARGET_RESOLUTION
        if (self.image.width, self.image.height) != (tw, th):
            raise ValueError(
                f"job image must be {tw}x{th}, got {self.image.width}x{self.image.height}"
            )
        if (self.mask.width, self.mask.height) != (tw, th):
            raise ValueError(
                f"job mask must be {tw}x{th}, got {self.mask.width}x{self.mask.height}"
            )
        if self.mask.area < 1:
            raise ValueError("job mask must contain at least one set pixel")


@dataclass(frozen=True, eq=False)
class InpaintResult:
    image: Image
    backend_id: str
    latency_ms: int = 0


class Backend(Protocol):
    backend_id: str

    def inpaint(self, job: InpaintJob) -> InpaintResult: ...


def encode_job(job: InpaintJob) -> dict:
    """Serialize a job into the wire request body."""
    return {
        "image_png_b64": base64.b64encode(image_to_png_bytes(job.image)).decode("ascii"),
        "mask_png_b64": base64.b64encode(mask_to_png_bytes(job.mask)).decode("ascii"),
        "prompt": job.prompt.positive,
        "negative_prompt": job.prompt.negative,
        "seed": int(job.seed),
        "steps": int(job.steps),
        "guidance_scale": float(job.guidance_scale),
    }


def decode_result(payload: dict, expect_dims: tuple[int, int]) -> tuple[Image, str]:
    """Parse a wire response body; raises ProtocolViolation on any defect."""
    if not isinstance(payload, dict):
        raise ProtocolViolation("response body is not an object")
    b64 = payload.get("image_png_b64")
    backend_id = payload.get("backend_id")
    if not isinstance(b64, str) or not isinstance(backend_id, str):
        raise ProtocolViolation("response missing image_png_b64 or backend_id")
    try:
        image = image_from_png_bytes(base64.b64decode(b64))
    except Exception as exc:
        raise ProtocolViolation(f"undecodable image payload: {exc}") from exc
    if (image.width, image.height) != expect_dims:
        raise ProtocolViolation(
            f"backend returned {image.width}x{image.height}, expected {expect_dims}"
        )
    return image, backend_id


class MockBackend:
    """Hermetic test double with a fully deterministic fill rule.

    Masked pixels get the mean color of the ring band around the mask plus
    seeded noise within +-8 per channel; unmasked pixels are perturbed by
    +-1 to simulate latent-codec lossiness, so any pipeline that skips the
    compositing overlay fails its preservation tests honestly.
    """

    backend_id = "mock"

    def inpaint(self, job: InpaintJob) -> InpaintResult:
        start = time.monotonic()
        img = job.image.data.astype(np.int16)
        inside = job.mask.data
        ring = dilate(job.mask, _MOCK_RING_KERNEL).data & ~inside
        if ring.any():
            fill = img[ring].mean(axis=0)
        else:
            fill = img.reshape(-1, 3).mean(axis=0)
        fill = np.floor(fill + 0.5).astype(np.int16)

        rng = np.random.default_rng(job.seed & 0xFFFFFFFFFFFFFFFF)
        noise_fill = rng.integers(-8, 9, size=img.shape, dtype=np.int16)
        noise_keep = rng.integers(-1, 2, size=img.shape, dtype=np.int16)
        filled = np.clip(fill[None, None, :] + noise_fill, 0, 255)
        kept = np.clip(img + noise_keep, 0, 255)
        out = np.where(inside[:, :, None], filled, kept).astype(np.uint8)
        latency = int((time.monotonic() - start) * 1000)
        return InpaintResult(image=Image(out), backend_id=self.backend_id, latency_ms=latency)


class IdentityBackend:
    """Zero-strength backend: returns the input frame unchanged."""

    backend_id = "identity"

    def inpaint(self, job: InpaintJob) -> InpaintResult:
        return InpaintResult(image=job.image, backend_id=self.backend_id, latency_ms=0)


# Transient HTTP statuses worth retrying alongside connection errors.
_RETRYABLE_STATUSES = {502, 503, 504}


@dataclass
class HttpBackend:
    """Client for the inference service; safe for concurrent use."""

    base_url: str
    timeout: float = 120.0
    max_attempts: int = 4
    backoff_base: float = 0.5
    backend_id: str = "http"
    _sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def _post_with_retry(self, url: str, body: dict) -> requests.Response:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                response = requests.post(url, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code in _RETRYABLE_STATUSES:
                last_error = BackendRejected(response.status_code, _error_text(response))
                continue
            return response
        raise BackendUnreachable(
            f"{url} unreachable after {self.max_attempts} attempts: {last_error}"
        )

    def inpaint(self, job: InpaintJob) -> InpaintResult:
        start = time.monotonic()
        body = encode_job(job)
        response = self._post_with_retry(self.base_url.rstrip("/") + "/v1/inpaint", body)
        if response.status_code != 200:
            raise BackendRejected(response.status_code, _error_text(response))
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProtocolViolation(f"response is not JSON: {exc}") from exc
        image, backend_id = decode_result(payload, (job.image.width, job.image.height))
        latency = int((time.monotonic() - start) * 1000)
        return InpaintResult(image=image, backend_id=backend_id, latency_ms=latency)

    def health(self) -> dict:
        url = self.base_url.rstrip("/") + "/v1/health"
        try:
            response = requests.get(url, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendUnreachable(f"{url}: {exc}") from exc
        if response.status_code != 200:
            raise BackendRejected(response.status_code, _error_text(response))
        return response.json()


def _error_text(response: requests.Response) -> str:
    try:
        payload = response.json()
        if isinstance(payload, dict) and "error" in payload:
            return str(payload["error"])
    except ValueError:
        pass
    return response.text[:200]


def make_backend(name: str, url: str | None = None) -> Backend:
    """Construct a backend from a CLI-style name."""
    if name == "mock":
        return MockBackend()
    if name == "identity":
        return IdentityBackend()
    if name == "http":
        if not url:
            raise ValueError("http backend needs an endpoint URL")
        return HttpBackend(base_url=url)
    raise ValueError(f"unknown backend {name!r}")
