"""COCO-20i folds and N-shot support-set sampling.

The 80 object classes split into four 20-class folds. Sampling is driven by
numpy's PCG64 streams keyed off stable 64-bit hashes of (seed, class), so a
support set is reproducible across runs, platforms, and worker counts.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .coco import DatasetIndex
from .errors import InsufficientImages, NotDivisible

NUM_FOLDS = 4

# Default AreaFilter thresholds follow the COCO size buckets.
SMALL_AREA = 32 * 32
MEDIUM_AREA = 96 * 96


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    class_ids: tuple[int, ...]
    assignment: str = "modulo"


@dataclass(frozen=True)
class AreaFilter:
    """Keep only annotations with at least this many area pixels."""

    min_area: float = 0.0

    def __post_init__(self):
        if self.min_area < 0:
            raise ValueError(f"min_area must be >= 0, got {self.min_area}")

    def passes(self, area: float) -> bool:
        return area >= self.min_area


@dataclass(frozen=True)
class SupportSet:
    fold: FoldSpec
    shots: int
    entries: tuple[tuple[int, int], ...]  # (image_id, class_id)
    seed: int


@dataclass(frozen=True)
class AugmentationTask:
    image_id: int
    class_id: int
    variant_index: int
    seed: int


def stable_hash64(*parts: int | str) -> int:
    """Platform-independent 64-bit hash used for seed derivation."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8"))
        else:
            h.update(b"i" + struct.pack("<q", int(part)))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def make_folds(
    category_ids: list[int] | tuple[int, ...],
    assignment: str = "modulo",
    num_folds: int = NUM_FOLDS,
) -> list[FoldSpec]:
    """Partition sorted category ids into equal folds.

    `modulo` sends the id of sorted rank r into fold r % num_folds,
    `contiguous` slices sorted ids into consecutive blocks.
    """
    ids = sorted(int(c) for c in category_ids)
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate category ids")
    if num_folds < 1 or len(ids) % num_folds != 0:
        raise NotDivisible(
            f"{len(ids)} categories cannot split into {num_folds} equal folds"
        )
    per_fold = len(ids) // num_folds
    if assignment == "modulo":
        groups = [tuple(ids[f::num_folds]) for f in range(num_folds)]
    elif assignment == "contiguous":
        groups = [tuple(ids[f * per_fold : (f + 1) * per_fold]) for f in range(num_folds)]
    else:
        raise ValueError(f"unknown assignment {assignment!r}")
    return [FoldSpec(fold_index=f, class_ids=g, assignment=assignment) for f, g in enumerate(groups)]


def eligible_images(ds: DatasetIndex, class_id: int, area_filter: AreaFilter) -> list[int]:
    """Sorted ids of images holding a usable instance of the class.

    An image qualifies when it has at least one non-crowd annotation of the
    class whose stored area passes the filter; crowd regions never confer
    eligibility.
    """
    found = set()
    for ann in ds.annotations:
        if (
            ann.category_id == class_id
            and not ann.iscrowd
            and area_filter.passes(ann.area)
        ):
            found.add(ann.image_id)
    return sorted(found)


def _sample_without_replacement(pool: list[int], count: int, seed: int) -> list[int]:
    """Partial Fisher-Yates over a sorted pool, driven by one PCG64 stream."""
    rng = np.random.default_rng(seed)
    pool = list(pool)
    picked = []
    for i in range(count):
        j = int(rng.integers(i, len(pool)))
        pool[i], pool[j] = pool[j], pool[i]
        picked.append(pool[i])
    return picked


def sample_support(
    ds: DatasetIndex,
    fold: FoldSpec,
    shots: int,
    area_filter: AreaFilter = AreaFilter(),
    seed: int = 0,
) -> SupportSet:
    """Sample `shots` images per fold class, uniformly without replacement."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    entries: list[tuple[int, int]] = []
    for class_id in fold.class_ids:
        pool = eligible_images(ds, class_id, area_filter)
        if len(pool) < shots:
            raise InsufficientImages(class_id, len(pool), shots)
        picked = _sample_without_replacement(pool, shots, stable_hash64(seed, class_id))
        entries.extend((image_id, class_id) for image_id in picked)
    return SupportSet(fold=fold, shots=shots, entries=tuple(entries), seed=seed)


def plan_augmentation(
    support: SupportSet,
    added: int,
    policy: str = "balanced",
) -> list[AugmentationTask]:
    """Distribute `added` augmentation tasks round-robin over support entries."""
    if added < 0:
        raise ValueError(f"added must be >= 0, got {added}")
    if policy != "balanced":
        raise ValueError(f"unknown policy {policy!r}")
    tasks = []
    n = len(support.entries)
    for i in range(added):
        image_id, class_id = support.entries[i % n]
        variant = i // n
        tasks.append(
            AugmentationTask(
                image_id=image_id,
                class_id=class_id,
                variant_index=variant,
                seed=stable_hash64(support.seed, image_id, class_id, variant),
            )
        )
    return tasks
