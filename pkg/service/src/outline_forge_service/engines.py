"""Inpainting engines.

The diffusers engine wraps the real inpainting checkpoint and is only usable
when torch/diffusers plus the model weights are available. The procedural
engine is the CPU fallback for CI smoke tests: a deterministic
boundary-diffusion fill with seeded grain. It honors the same request fields
(prompt and negative prompt are hashed into the grain, steps control the
diffusion passes) so request-level ablations still produce distinct outputs.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np

from .config import ServiceConfig

log = logging.getLogger(__name__)


def _grain_seed(seed: int, prompt: str, negative_prompt: str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    h.update(b"\x00" + prompt.encode("utf-8"))
    h.update(b"\x00" + negative_prompt.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class ProceduralInpainter:
    """Deterministic stand-in engine; no model weights required."""

    engine_id = "procedural-fallback/v1"

    def inpaint(
        self,
        image: np.ndarray,
        mask: np.ndarray,
        prompt: str,
        negative_prompt: str,
        seed: int,
        steps: int,
        guidance_scale: float,
    ) -> np.ndarray:
        rng = np.random.default_rng(_grain_seed(seed, prompt, negative_prompt))
        out = image.astype(np.float64)
        inside = mask.astype(bool)
        if not inside.any():
            return image.copy()

        # start the masked region from seeded noise around the frame mean
        base = out.reshape(-1, 3).mean(axis=0)
        noise = rng.uniform(-40.0, 40.0, size=out.shape)
        out[inside] = np.clip(base + noise[inside], 0.0, 255.0)

        # pull boundary context inward with neighbor-average passes
        passes = int(min(max(steps, 1) * 4, 96))
        for _ in range(passes):
            padded = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
            neighbors = (
                padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
            ) / 4.0
            out[inside] = neighbors[inside]

        # seeded grain so variations stay visually distinct
        grain = rng.normal(0.0, 6.0, size=out.shape)
        out[inside] = np.clip(out[inside] + grain[inside], 0.0, 255.0)
        return np.floor(out + 0.5).astype(np.uint8)


class DiffusersInpainter:
    """Real diffusion engine; loads the checkpoint once at construction."""

    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from diffusers import StableDiffusionInpaintPipeline

        self._torch = torch
        self.engine_id = model_id
        dtype = torch.float16 if device.startswith("cuda") else torch.float32
        self.pipe = StableDiffusionInpaintPipeline.from_pretrained(
            model_id, torch_dtype=dtype
        ).to(device)
        self.device = device

    def inpaint(
        self,
        image: np.ndarray,
        mask: np.ndarray,
        prompt: str,
        negative_prompt: str,
        seed: int,
        steps: int,
        guidance_scale: float,
    ) -> np.ndarray:
        import PIL.Image

        generator = self._torch.Generator(device=self.device).manual_seed(int(seed) % (2**63))
        result = self.pipe(
            prompt=prompt,
            negative_prompt=negative_prompt or None,
            image=PIL.Image.fromarray(image),
            mask_image=PIL.Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)),
            num_inference_steps=int(steps),
            guidance_scale=float(guidance_scale),
            generator=generator,
        )
        return np.asarray(result.images[0].convert("RGB"), dtype=np.uint8)


def create_engine(config: ServiceConfig):
    if config.engine == "procedural":
        return ProceduralInpainter()
    if config.engine in ("diffusers", "auto"):
        try:
            return DiffusersInpainter(config.model_id, config.device)
        except Exception as exc:
            if config.engine == "diffusers":
                raise
            log.warning("diffusers engine unavailable (%s); using procedural fallback", exc)
            return ProceduralInpainter()
    raise ValueError(f"unknown engine {config.engine!r}")
