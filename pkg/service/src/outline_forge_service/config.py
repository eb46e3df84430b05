"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_MODEL_ID = "stabilityai/stable-diffusion-2-inpainting"


@dataclass
class ServiceConfig:
    engine: str = "auto"  # auto | procedural | diffusers
    model_id: str = DEFAULT_MODEL_ID
    device: str = "cpu"
    max_concurrent_jobs: int = 1
    queue_depth: int = 8
    max_request_bytes: int = 32 * 1024 * 1024
    feature_extractor: str = "stats-v1"
    embedding_model: str = "hash-embed-v1"
    work_resolution: tuple[int, int] = (512, 512)
