"""End-to-end orchestration: erode, canvas, prompt, inpaint, compose, write.

Also implements the evaluation-prep protocols: paired original/inpainted
image sets for FID scoring and bounding-box cutouts for Local FID. All batch
work is a pure function of (dataset, plan, config, master seed); worker count
and completion order never change the output bytes.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import (
    DEFAULT_GUIDANCE_SCALE,
    DEFAULT_STEPS,
    Backend,
    InpaintJob,
    MockBackend,
)
from .coco import Annotation, DatasetIndex, ImageRecord, decode_mask, write_augmented_dataset
from .compositor import BlendParams, compose
from .errors import (
    BackendRejected,
    BackendUnreachable,
    EmptyBbox,
    FailureBudgetExceeded,
    ProtocolViolation,
    SkippedTooSmall,
    SkippedVanished,
)
from .fewshot import AreaFilter, AugmentationTask, stable_hash64
from .image import Image, load_image, save_png
from .imageops import (
    PadFill,
    TARGET_RESOLUTION,
    apply_canvas,
    invert_canvas,
    plan_canvas,
    resize,
    resize_mask,
)
from .mask import BinaryMask
from .maskops import (
    SquareKernel,
    bbox_of,
    erode,
    is_vanished,
    replace_background_with_noise,
    split_outline,
)
from .prompts import DEFAULT_NEGATIVE_PROMPT, DEFAULT_TEMPLATE, PromptTemplate, build_prompt

log = logging.getLogger(__name__)


@dataclass
class AugmentationConfig:
    """Knobs of one augmentation run; every field lands in the manifest."""

    erosion: SquareKernel = SquareKernel(12)
    min_area: AreaFilter = AreaFilter(0)
    blend: BlendParams = BlendParams(2.0)
    template: PromptTemplate = DEFAULT_TEMPLATE
    use_negative: bool = False
    negative_text: str = DEFAULT_NEGATIVE_PROMPT
    backend: Backend = field(default_factory=MockBackend)
    master_seed: int = 0
    workers: int = 1
    noise_background: bool = False
    failure_budget: float = 0.01
    vanish_min_pixels: int = 1
    pad_fill: PadFill = PadFill.EDGE
    steps: int = DEFAULT_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def config_dict(self) -> dict:
        return {
            "erosion": self.erosion.side,
            "min_area": self.min_area.min_area,
            "blend_sigma": self.blend.sigma,
            "template": self.template.name,
            "use_negative": self.use_negative,
            "backend": getattr(self.backend, "backend_id", "unknown"),
            "backend_url": getattr(self.backend, "base_url", None),
            "master_seed": self.master_seed,
            "workers": self.workers,
            "noise_background": self.noise_background,
            "failure_budget": self.failure_budget,
            "vanish_min_pixels": self.vanish_min_pixels,
            "pad_fill": self.pad_fill.value,
            "steps": self.steps,
            "guidance_scale": self.guidance_scale,
        }


@dataclass
class FidPrepConfig:
    masks_per_image: int = 2
    erosion: SquareKernel = SquareKernel(12)
    work_resolution: tuple[int, int] = TARGET_RESOLUTION
    output_resolution: tuple[int, int] = (256, 256)
    seed: int = 0
    template: PromptTemplate = DEFAULT_TEMPLATE
    use_negative: bool = False
    negative_text: str = DEFAULT_NEGATIVE_PROMPT
    steps: int = DEFAULT_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE

    def __post_init__(self):
        if self.masks_per_image < 1:
            raise ValueError("masks_per_image must be >= 1")


@dataclass
class RunReport:
    succeeded: int = 0
    skipped_vanished: int = 0
    skipped_small: int = 0
    failed: int = 0
    dataset_path: Path | None = None
    log_path: Path | None = None

    def counts(self) -> dict:
        return {
            "succeeded": self.succeeded,
            "skipped_vanished": self.skipped_vanished,
            "skipped_small": self.skipped_small,
            "failed": self.failed,
        }


def _eligible_annotations(
    ds: DatasetIndex, image_id: int, class_id: int, area_filter: AreaFilter
) -> list[Annotation]:
    return [
        ann
        for ann in ds.annotations_for(image_id)
        if ann.category_id == class_id and not ann.iscrowd and area_filter.passes(ann.area)
    ]


def _union_mask(anns: Sequence[Annotation], width: int, height: int) -> BinaryMask:
    acc = np.zeros((height, width), dtype=bool)
    for ann in anns:
        acc |= decode_mask(ann.segmentation, width, height).data
    return BinaryMask(acc)


def augment_instance(
    ds: DatasetIndex,
    image_root: Path,
    image_id: int,
    class_id: int,
    cfg: AugmentationConfig,
    variant_seed: int,
) -> tuple[Image, dict]:
    """Produce one augmented variant of an image around one object class.

    All same-class annotations passing the area filter merge into a single
    union mask and a single inpaint job; the merged count drives the
    several-instances prompt branch. Returns the full-resolution result and
    its provenance record.
    """
    record = ds.image(image_id)
    anns = _eligible_annotations(ds, image_id, class_id, cfg.min_area)
    if not anns:
        raise SkippedTooSmall(
            f"image {image_id} has no eligible class-{class_id} annotation "
            f"at min_area {cfg.min_area.min_area}"
        )

    union = _union_mask(anns, record.width, record.height)
    if union.area == 0:
        raise SkippedVanished(f"image {image_id} class {class_id}: empty union mask")
    band = split_outline(union, cfg.erosion)
    if is_vanished(band.inner, cfg.vanish_min_pixels):
        raise SkippedVanished(
            f"image {image_id} class {class_id}: mask vanished under "
            f"erosion {cfg.erosion.side}"
        )

    source = load_image(Path(image_root) / record.file_name)
    if (source.width, source.height) != (record.width, record.height):
        raise ProtocolViolation(
            f"file {record.file_name} is {source.width}x{source.height}, "
            f"record says {record.width}x{record.height}"
        )

    plan = plan_canvas((record.width, record.height), bbox_of(union))
    canvas_img, canvas_union = apply_canvas(source, union, plan, cfg.pad_fill)
    _, canvas_inner = apply_canvas(source, band.inner, plan, cfg.pad_fill)
    if is_vanished(canvas_inner, cfg.vanish_min_pixels):
        raise SkippedVanished(
            f"image {image_id} class {class_id}: eroded mask left the crop window"
        )

    backend_input = canvas_img
    if cfg.noise_background:
        backend_input = replace_background_with_noise(
            canvas_img, canvas_union, stable_hash64(variant_seed, "noise-bg")
        )

    prompt = build_prompt(
        ds.category(class_id).name,
        instance_count=len(anns),
        template=cfg.template,
        use_negative=cfg.use_negative,
        negative_text=cfg.negative_text,
    )
    job = InpaintJob(
        image=backend_input,
        mask=canvas_inner,
        prompt=prompt,
        seed=variant_seed,
        steps=cfg.steps,
        guidance_scale=cfg.guidance_scale,
    )
    result = cfg.backend.inpaint(job)
    composed = compose(canvas_img, result.image, canvas_inner, cfg.blend)
    final = invert_canvas(composed, plan, source)

    provenance = {
        "source_image_id": image_id,
        "class_id": class_id,
        "annotation_ids": [a.id for a in anns],
        "instance_count": len(anns),
        "erosion": cfg.erosion.side,
        "prompt": prompt.positive,
        "use_negative": cfg.use_negative,
        "seed": variant_seed,
        "backend_id": result.backend_id,
        "blend_sigma": cfg.blend.sigma,
        "noise_background": cfg.noise_background,
    }
    return final, provenance


def plan_full_dataset(
    ds: DatasetIndex,
    variants: int,
    area_filter: AreaFilter,
    master_seed: int,
) -> list[AugmentationTask]:
    """One task per (image, class) pair with an eligible annotation, times `variants`."""
    pairs = sorted(
        {
            (ann.image_id, ann.category_id)
            for ann in ds.annotations
            if not ann.iscrowd and area_filter.passes(ann.area)
        }
    )
    return [
        AugmentationTask(
            image_id=image_id,
            class_id=class_id,
            variant_index=v,
            seed=stable_hash64(master_seed, image_id, class_id, v),
        )
        for v in range(variants)
        for image_id, class_id in pairs
    ]


def run_plan(
    ds: DatasetIndex,
    image_root: Path,
    plan: Sequence[AugmentationTask],
    cfg: AugmentationConfig,
    out_dir: Path,
) -> RunReport:
    """Execute augmentation tasks over a worker pool and write the dataset.

    Results are keyed by task, gathered in plan order, and written once; the
    output is byte-identical for any worker count. Backend failures are
    tolerated up to the configured budget, then the whole run fails.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def _execute(task: AugmentationTask):
        started = time.monotonic()
        try:
            image, provenance = augment_instance(
                ds, image_root, task.image_id, task.class_id, cfg, task.seed
            )
            status, payload = "ok", (image, provenance)
        except SkippedVanished as exc:
            status, payload = "skipped_vanished", str(exc)
        except SkippedTooSmall as exc:
            status, payload = "skipped_small", str(exc)
        except (BackendUnreachable, BackendRejected, ProtocolViolation) as exc:
            status, payload = "failed", str(exc)
        elapsed_ms = int((time.monotonic() - started) * 1000)
        return status, payload, elapsed_ms

    if cfg.workers == 1:
        results = [_execute(task) for task in plan]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_execute, plan))

    report = RunReport()
    log_entries = []
    new_images: list[tuple[ImageRecord, int, dict]] = []
    next_image_id = max((im.id for im in ds.images), default=0) + 1
    for task, (status, payload, elapsed_ms) in zip(plan, results):
        entry = {
            "task": {
                "image_id": task.image_id,
                "class_id": task.class_id,
                "variant_index": task.variant_index,
                "seed": task.seed,
            },
            "status": status,
            "elapsed_ms": elapsed_ms,
        }
        if status == "ok":
            image, provenance = payload
            source = ds.image(task.image_id)
            file_name = (
                f"images/aug_{task.image_id}_c{task.class_id}_v{task.variant_index}.png"
            )
            record = ImageRecord(
                id=next_image_id,
                file_name=file_name,
                width=source.width,
                height=source.height,
                captions=source.captions,
            )
            next_image_id += 1
            save_png(image, out_dir / file_name)
            new_images.append((record, task.image_id, provenance))
            entry["provenance"] = provenance
            entry["new_image_id"] = record.id
            report.succeeded += 1
        else:
            entry["reason"] = payload
            setattr(report, status, getattr(report, status) + 1)
        log_entries.append(entry)

    log_path = out_dir / "run_log.jsonl"
    with open(log_path, "w") as fh:
        for entry in log_entries:
            fh.write(json.dumps(entry) + "\n")
    report.log_path = log_path

    allowed_failures = math.floor(cfg.failure_budget * len(plan))
    if report.failed > allowed_failures:
        raise FailureBudgetExceeded(
            f"{report.failed} backend failures exceed budget of {allowed_failures} "
            f"({cfg.failure_budget:.0%} of {len(plan)} tasks); log at {log_path}"
        )

    report.dataset_path = write_augmented_dataset(ds, new_images, out_dir / "augmented.json")
    return report


@dataclass
class FidPrepReport:
    images_processed: int = 0
    images_skipped: int = 0
    reversions: int = 0
    pairs: list[dict] = field(default_factory=list)
    manifest_path: Path | None = None


def fid_prep(
    ds: DatasetIndex,
    image_root: Path,
    cfg: FidPrepConfig,
    backend: Backend,
    out_dir: Path,
) -> FidPrepReport:
    """Build the paired original/inpainted image sets for FID scoring.

    Per image: resize to the working resolution, sample annotations, erode
    each mask, fall back to the un-eroded mask when erosion leaves nothing,
    inpaint all sampled masks as one union job, and keep the raw backend
    frame (no compositing overlay). Both sides are then resized to the
    output resolution and written as paired files.
    """
    out_dir = Path(out_dir)
    a_dir = out_dir / "A"
    b_dir = out_dir / "B"
    a_dir.mkdir(parents=True, exist_ok=True)
    b_dir.mkdir(parents=True, exist_ok=True)
    report = FidPrepReport()

    for record in sorted(ds.images, key=lambda im: im.id):
        anns = [a for a in ds.annotations_for(record.id) if not a.iscrowd]
        if not anns:
            log.info("fid-prep: image %d has no usable annotations, skipped", record.id)
            report.images_skipped += 1
            continue
        take = min(cfg.masks_per_image, len(anns))
        if take < cfg.masks_per_image:
            log.info(
                "fid-prep: image %d contributes %d of %d masks",
                record.id,
                take,
                cfg.masks_per_image,
            )
        by_id = {a.id: a for a in anns}
        order = _pick_annotation_ids(sorted(by_id), take, cfg.seed, record.id)

        source = load_image(Path(image_root) / record.file_name)
        work = resize(source, cfg.work_resolution, mode="bilinear")
        union = np.zeros((cfg.work_resolution[1], cfg.work_resolution[0]), dtype=bool)
        sampled_info = []
        for ann_id in order:
            ann = by_id[ann_id]
            mask = decode_mask(ann.segmentation, record.width, record.height)
            mask_work = resize_mask(mask, cfg.work_resolution)
            eroded = erode(mask_work, cfg.erosion)
            reverted = is_vanished(eroded)
            if reverted:
                eroded = mask_work
                report.reversions += 1
            union |= eroded.data
            sampled_info.append(
                {"annotation_id": ann_id, "reverted": reverted, "bbox": list(ann.bbox)}
            )
        if not union.any():
            log.info("fid-prep: image %d union mask empty, skipped", record.id)
            report.images_skipped += 1
            continue

        prompt_ann = max(order, key=lambda i: (by_id[i].area, -i))
        same_class = sum(
            1 for i in order if by_id[i].category_id == by_id[prompt_ann].category_id
        )
        prompt = build_prompt(
            ds.category(by_id[prompt_ann].category_id).name,
            instance_count=same_class,
            template=cfg.template,
            use_negative=cfg.use_negative,
            negative_text=cfg.negative_text,
        )
        job = InpaintJob(
            image=work,
            mask=BinaryMask(union),
            prompt=prompt,
            seed=stable_hash64(cfg.seed, record.id, "inpaint"),
            steps=cfg.steps,
            guidance_scale=cfg.guidance_scale,
        )
        result = backend.inpaint(job)

        name = f"img_{record.id}.png"
        save_png(resize(work, cfg.output_resolution, mode="bilinear"), a_dir / name)
        save_png(resize(result.image, cfg.output_resolution, mode="bilinear"), b_dir / name)
        report.pairs.append(
            {
                "image_id": record.id,
                "file": name,
                "source_dims": [record.width, record.height],
                "sampled": sampled_info,
            }
        )
        report.images_processed += 1

    manifest = {
        "work_resolution": list(cfg.work_resolution),
        "output_resolution": list(cfg.output_resolution),
        "erosion": cfg.erosion.side,
        "masks_per_image": cfg.masks_per_image,
        "seed": cfg.seed,
        "counts": {
            "images_processed": report.images_processed,
            "images_skipped": report.images_skipped,
            "reversions": report.reversions,
        },
        "pairs": report.pairs,
    }
    report.manifest_path = out_dir / "fidprep_pairs.json"
    report.manifest_path.write_text(json.dumps(manifest, indent=2))
    return report


def _pick_annotation_ids(ids: list[int], count: int, seed: int, image_id: int) -> list[int]:
    rng = np.random.default_rng(stable_hash64(seed, image_id, "fid-masks"))
    pool = list(ids)
    picked = []
    for i in range(count):
        j = int(rng.integers(i, len(pool)))
        pool[i], pool[j] = pool[j], pool[i]
        picked.append(pool[i])
    return picked


def local_cutouts(
    items: Sequence[tuple[Image, Image, Sequence[float], tuple[int, int]]],
    out_resolution: tuple[int, int] = (256, 256),
    min_size: int = 8,
) -> tuple[list[tuple[int, Image, Image]], int]:
    """Paired bbox cutouts for Local FID.

    Each item is (original, inpainted, bbox in source coords, source dims).
    The bbox is scaled to the images' resolution, clamped, and expanded to at
    least `min_size` per side; degenerate boxes skip the pair (counted in the
    second return value). Results carry the item index so callers can pair
    them with their metadata.
    """
    results: list[tuple[int, Image, Image]] = []
    skipped = 0
    for idx, (original, inpainted, bbox, source_dims) in enumerate(items):
        try:
            window = _scale_bbox(
                bbox, source_dims, (original.width, original.height), min_size
            )
        except EmptyBbox as exc:
            log.info("cutouts: pair %d skipped: %s", idx, exc)
            skipped += 1
            continue
        x0, y0, x1, y1 = window
        crop_a = Image(original.data[y0:y1, x0:x1])
        crop_b = Image(inpainted.data[y0:y1, x0:x1])
        results.append(
            (
                idx,
                resize(crop_a, out_resolution, mode="bilinear"),
                resize(crop_b, out_resolution, mode="bilinear"),
            )
        )
    return results, skipped


def _scale_bbox(
    bbox: Sequence[float],
    source_dims: tuple[int, int],
    image_dims: tuple[int, int],
    min_size: int,
) -> tuple[int, int, int, int]:
    bx, by, bw, bh = bbox
    src_w, src_h = source_dims
    img_w, img_h = image_dims
    sx = img_w / src_w
    sy = img_h / src_h
    x0 = max(0, int(math.floor(bx * sx)))
    y0 = max(0, int(math.floor(by * sy)))
    x1 = min(img_w, int(math.ceil((bx + bw) * sx)))
    y1 = min(img_h, int(math.ceil((by + bh) * sy)))
    if x1 <= x0 or y1 <= y0:
        raise EmptyBbox(f"bbox {list(bbox)} is empty after scaling to {image_dims}")
    x0, x1 = _expand_span(x0, x1, min_size, img_w)
    y0, y1 = _expand_span(y0, y1, min_size, img_h)
    return x0, y0, x1, y1


def _expand_span(lo: int, hi: int, min_size: int, limit: int) -> tuple[int, int]:
    """Grow [lo, hi) to at least min_size, centered, clamped to [0, limit)."""
    if hi - lo >= min_size:
        return lo, hi
    size = min(min_size, limit)
    center = (lo + hi) / 2.0
    lo = int(math.floor(center - size / 2.0 + 0.5))
    lo = min(max(lo, 0), limit - size)
    return lo, lo + size
