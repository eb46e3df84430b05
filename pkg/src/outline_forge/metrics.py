"""Image-set scoring: Fréchet distance between feature Gaussians, CLIP score.

This module operates purely on feature vectors and embeddings produced
elsewhere (the inference service or test stubs); it never runs a network.

The Fréchet distance between Gaussians (m_a, C_a) and (m_b, C_b) is

    d^2 = ||m_a - m_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2})

computed here through the symmetric product: with S = C_a^{1/2},
Tr((C_a C_b)^{1/2}) equals the sum of square roots of the eigenvalues of
S C_b S, which is symmetric PSD, so a real eigendecomposition suffices and
no imaginary residue ever appears. Small negative eigenvalues from floating
point are clamped to zero; anything beyond tolerance raises.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    MalformedFeatureFile,
    NotNormalized,
    NumericalBreakdown,
    TooFewSamples,
)

SYMMETRY_TOL = 1e-10
PSD_EIGENVALUE_TOL = 1e-8
RESULT_FLOOR = -1e-8
NORM_TOL = 1e-6

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sIQI")  # magic, version u32, count u64, dim u32


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Sample mean and unbiased covariance of a feature cloud."""

    n: int
    mean: np.ndarray  # (d,)
    cov: np.ndarray  # (d, d), symmetric PSD

    def __post_init__(self):
        if self.n < 2:
            raise TooFewSamples(f"need at least 2 samples, got {self.n}")
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"mean has shape {mean.shape}, cov has shape {cov.shape}"
            )
        sym_err = float(np.abs(cov - cov.T).max(initial=0.0))
        scale = float(np.abs(cov).max(initial=0.0))
        if sym_err > SYMMETRY_TOL * max(1.0, scale):
            raise NumericalBreakdown(f"covariance asymmetry {sym_err:g} beyond tolerance")
        eigs = np.linalg.eigvalsh((cov + cov.T) / 2.0)
        floor = -PSD_EIGENVALUE_TOL * max(1.0, float(eigs.max(initial=0.0)))
        if eigs.min(initial=0.0) < floor:
            raise NumericalBreakdown(
                f"covariance has eigenvalue {eigs.min():g} below tolerance"
            )
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class EmbeddingPair:
    """Unit-norm image/text embedding pair plus its caption."""

    image_embedding: np.ndarray
    text_embedding: np.ndarray
    caption: str = ""


def accumulate_stats(features: Iterable[np.ndarray] | np.ndarray) -> GaussianStats:
    """Single-pass stable mean/covariance over a stream of feature vectors.

    Uses Welford-style updates in float64, so shuffling the stream moves the
    result by less than 1e-9 relative. The covariance is the unbiased (n-1)
    estimator.
    """
    n = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None
    for row in features:
        vec = np.asarray(row, dtype=np.float64).reshape(-1)
        if mean is None:
            mean = np.zeros(vec.size)
            m2 = np.zeros((vec.size, vec.size))
        elif vec.size != mean.size:
            raise DimensionMismatch(
                f"feature of dimension {vec.size} in a stream of dimension {mean.size}"
            )
        n += 1
        delta = vec - mean
        mean = mean + delta / n
        m2 = m2 + np.outer(delta, vec - mean)
    if n < 2 or mean is None or m2 is None:
        raise TooFewSamples(f"need at least 2 feature vectors, got {n}")
    cov = m2 / (n - 1)
    return GaussianStats(n=n, mean=mean, cov=(cov + cov.T) / 2.0)


def merge_stats(a: GaussianStats, b: GaussianStats) -> GaussianStats:
    """Exact parallel combine of two partial accumulations (Chan's update)."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot merge dimensions {a.dim} and {b.dim}")
    n = a.n + b.n
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.n / n)
    m2 = (
        a.cov * (a.n - 1)
        + b.cov * (b.n - 1)
        + np.outer(delta, delta) * (a.n * b.n / n)
    )
    cov = m2 / (n - 1)
    return GaussianStats(n=n, mean=mean, cov=(cov + cov.T) / 2.0)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    eigs, vecs = np.linalg.eigh(cov)
    floor = -PSD_EIGENVALUE_TOL * max(1.0, float(eigs.max(initial=0.0)))
    if eigs.min(initial=0.0) < floor:
        raise NumericalBreakdown(f"matrix eigenvalue {eigs.min():g} below PSD tolerance")
    return (vecs * np.sqrt(np.clip(eigs, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Fréchet distance between two feature Gaussians; always >= 0."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"stats have dimensions {a.dim} and {b.dim}")
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.cov)
    product = sqrt_a @ b.cov @ sqrt_a
    product = (product + product.T) / 2.0
    eigs = np.linalg.eigvalsh(product)
    floor = -PSD_EIGENVALUE_TOL * max(1.0, float(eigs.max(initial=0.0)))
    if eigs.min(initial=0.0) < floor:
        raise NumericalBreakdown(
            f"product matrix eigenvalue {eigs.min():g} below PSD tolerance"
        )
    trace_sqrt = float(np.sqrt(np.clip(eigs, 0.0, None)).sum())
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)
    if value < RESULT_FLOOR:
        raise NumericalBreakdown(f"distance {value:g} below the negativity floor")
    return max(value, 0.0)


def clip_score(pairs: Sequence[EmbeddingPair]) -> float:
    """Mean cosine similarity over image/text embedding pairs, in [-1, 1].

    Inputs must already be unit vectors; the score is the plain dot product
    mean with no rescaling and no clipping at zero.
    """
    if len(pairs) == 0:
        raise EmptyInput("clip_score needs at least one embedding pair")
    total = 0.0
    for pair in pairs:
        img = np.asarray(pair.image_embedding, dtype=np.float64).reshape(-1)
        txt = np.asarray(pair.text_embedding, dtype=np.float64).reshape(-1)
        if img.size != txt.size:
            raise DimensionMismatch(
                f"embedding dims differ: {img.size} vs {txt.size}"
            )
        for vec, name in ((img, "image"), (txt, "text")):
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > NORM_TOL:
                raise NotNormalized(f"{name} embedding norm {norm:.8f} is not 1")
        total += float(img @ txt)
    return total / len(pairs)


def write_feature_file(path: str | Path, features: np.ndarray) -> Path:
    """Write float32 feature rows into the FEAT binary container."""
    arr = np.ascontiguousarray(np.asarray(features, dtype=np.float32))
    if arr.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D (count, dim), got {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4").tobytes())
    return path


def read_feature_file(path: str | Path) -> np.ndarray:
    """Read a FEAT container back into a float32 (count, dim) array."""
    raw = Path(path).read_bytes()
    if len(raw) < _FEAT_HEADER.size:
        raise MalformedFeatureFile("file shorter than the FEAT header")
    magic, version, count, dim = _FEAT_HEADER.unpack_from(raw)
    if magic != FEAT_MAGIC:
        raise MalformedFeatureFile(f"bad magic {magic!r}")
    if version != FEAT_VERSION:
        raise MalformedFeatureFile(f"unsupported FEAT version {version}")
    expected = _FEAT_HEADER.size + count * dim * 4
    if len(raw) != expected:
        raise MalformedFeatureFile(
            f"payload length {len(raw)} does not match header ({expected} expected)"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_FEAT_HEADER.size)
    return data.reshape(count, dim).copy()


def stats_from_file(path: str | Path) -> GaussianStats:
    return accumulate_stats(read_feature_file(path))


def write_embedding_pairs(path: str | Path, pairs: Sequence[EmbeddingPair]) -> Path:
    payload = {
        "version": 1,
        "pairs": [
            {
                "image_embedding": np.asarray(p.image_embedding, dtype=float).tolist(),
                "text_embedding": np.asarray(p.text_embedding, dtype=float).tolist(),
                "caption": p.caption,
            }
            for p in pairs
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload))
    return path


def read_embedding_pairs(path: str | Path) -> list[EmbeddingPair]:
    payload = json.loads(Path(path).read_text())
    pairs = []
    for entry in payload.get("pairs", []):
        pairs.append(
            EmbeddingPair(
                image_embedding=np.asarray(entry["image_embedding"], dtype=np.float64),
                text_embedding=np.asarray(entry["text_embedding"], dtype=np.float64),
                caption=str(entry.get("caption", "")),
            )
        )
    return pairs
