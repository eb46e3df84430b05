"""Feature and embedding extractors.

The default extractors are deterministic handcrafted stand-ins that satisfy
the wire contracts (2048-d feature rows, unit-norm embedding pairs) without
model weights. Inception/CLIP-backed extractors can be swapped in behind the
same interfaces on hosts that have the models.
"""

from __future__ import annotations

import hashlib

import numpy as np
import PIL.Image

FEATURE_DIM = 2048
EMBED_DIM = 512


def _resize(image: np.ndarray, size: int) -> np.ndarray:
    pil = PIL.Image.fromarray(image).resize((size, size), PIL.Image.BILINEAR)
    return np.asarray(pil, dtype=np.float64)


class StatsFeatureExtractor:
    """2048-d deterministic image descriptor: 32x32 luma grid (1024), three
    256-bin channel histograms (768), 16x16 gradient-energy grid (256)."""

    extractor_id = "stats-v1"
    dim = FEATURE_DIM

    def extract(self, image: np.ndarray) -> np.ndarray:
        small = _resize(image, 32)
        luma = small @ np.array([0.299, 0.587, 0.114])
        grid = (luma / 255.0).reshape(-1)

        hists = []
        for channel in range(3):
            counts = np.bincount(
                image[:, :, channel].reshape(-1), minlength=256
            ).astype(np.float64)
            hists.append(counts / counts.sum())

        medium = _resize(image, 17) @ np.array([0.299, 0.587, 0.114])
        gx = np.abs(np.diff(medium, axis=1))[:16, :16]
        gy = np.abs(np.diff(medium, axis=0))[:16, :16]
        gradient = ((gx + gy) / 510.0).reshape(-1)

        out = np.concatenate([grid, *hists, gradient])
        assert out.size == self.dim
        return out.astype(np.float32)

    def extract_batch(self, images: list[np.ndarray]) -> np.ndarray:
        return np.stack([self.extract(img) for img in images])


class HashEmbedder:
    """Unit-norm image/text embeddings from fixed projections and text hashes."""

    embedder_id = "hash-embed-v1"
    dim = EMBED_DIM

    def __init__(self):
        projector_rng = np.random.default_rng(0x0E0B_ED01)
        self._projection = projector_rng.normal(
            size=(FEATURE_DIM, EMBED_DIM)
        ) / np.sqrt(FEATURE_DIM)
        self._features = StatsFeatureExtractor()

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        vec = self._features.extract(image).astype(np.float64) @ self._projection
        return vec / np.linalg.norm(vec)

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        vec = rng.normal(size=self.dim)
        return vec / np.linalg.norm(vec)


def create_extractor(name: str):
    if name == "stats-v1":
        return StatsFeatureExtractor()
    raise ValueError(f"unknown feature extractor {name!r}")


def create_embedder(name: str):
    if name == "hash-embed-v1":
        return HashEmbedder()
    raise ValueError(f"unknown embedding model {name!r}")
