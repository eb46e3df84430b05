"""COCO-style instance segmentation datasets: parsing, mask codecs, writing.

Format notes
------------
Two segmentation encodings are supported natively:

* polygon lists: ``[[x0, y0, x1, y1, ...], ...]``, rasterized at pixel
  centers with the even-odd rule, multiple polygons unioned;
* uncompressed RLE: ``{"size": [h, w], "counts": [int, ...]}`` with
  column-major alternating runs, the first run counting zeros.

Compressed string RLE (the encoding COCO uses for crowd regions) is accepted
on input and decompressed to integer counts at parse time; this package never
emits the compressed form.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DanglingReference,
    DegeneratePolygon,
    DimensionMismatch,
    MalformedJson,
    RleLengthMismatch,
)
from .mask import BinaryMask

# Polygon list or RLE dict, exactly as stored in the annotation JSON.
SegEncoding = Any

# Stored areas in COCO files are rounded; accept this much drift against the
# decoded popcount (whichever bound is larger).
AREA_REL_TOL = 0.02
AREA_ABS_TOL = 16.0


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int
    captions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    segmentation: SegEncoding
    area: float
    bbox: tuple[float, float, float, float]  # (x, y, w, h)
    iscrowd: bool = False


@dataclass(frozen=True)
class DatasetIndex:
    """Validated in-memory COCO dataset; immutable after construction."""

    images: tuple[ImageRecord, ...]
    annotations: tuple[Annotation, ...]
    categories: tuple[Category, ...]
    by_image: Mapping[int, tuple[Annotation, ...]] = field(repr=False)

    def image(self, image_id: int) -> ImageRecord:
        rec = self._image_index.get(image_id)
        if rec is None:
            raise KeyError(f"no image with id {image_id}")
        return rec

    def category(self, category_id: int) -> Category:
        cat = self._category_index.get(category_id)
        if cat is None:
            raise KeyError(f"no category with id {category_id}")
        return cat

    def annotations_for(self, image_id: int) -> tuple[Annotation, ...]:
        return self.by_image.get(image_id, ())

    def __post_init__(self):
        object.__setattr__(self, "_image_index", {im.id: im for im in self.images})
        object.__setattr__(self, "_category_index", {c.id: c for c in self.categories})


def decompress_rle_string(counts: str) -> list[int]:
    """Decode COCO's compressed RLE string into integer run counts."""
    out: list[int] = []
    pos = 0
    while pos < len(counts):
        value = 0
        k = 0
        more = True
        while more:
            if pos >= len(counts):
                raise MalformedJson("truncated compressed RLE string")
            c = ord(counts[pos]) - 48
            value |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                value |= -1 << (5 * k)
        if len(out) > 2:
            value += out[-2]
        out.append(value)
    return out


def _rasterize_polygon(coords: Sequence[float], width: int, height: int) -> np.ndarray:
    """Scanline even-odd fill of one polygon at pixel centers.

    A pixel (x, y) is inside when the ray from its center (x+0.5, y+0.5)
    crosses an odd number of edges to the right, the same convention the
    per-pixel even-odd test uses.
    """
    if len(coords) < 6 or len(coords) % 2 != 0:
        raise DegeneratePolygon(
            f"polygon needs at least 3 vertices, got {len(coords) / 2:g} coordinates"
        )
    xs = np.clip(np.asarray(coords[0::2], dtype=np.float64), 0.0, float(width))
    ys = np.clip(np.asarray(coords[1::2], dtype=np.float64), 0.0, float(height))
    out = np.zeros((height, width), dtype=bool)
    n = len(xs)
    y_lo = max(0, int(math.floor(ys.min() - 0.5)))
    y_hi = min(height - 1, int(math.ceil(ys.max())))
    for y in range(y_lo, y_hi + 1):
        yc = y + 0.5
        crossings = []
        for i in range(n):
            ax, ay = xs[i], ys[i]
            bx, by = xs[(i + 1) % n], ys[(i + 1) % n]
            if (ay > yc) != (by > yc):
                crossings.append(ax + (yc - ay) * (bx - ax) / (by - ay))
        crossings.sort()
        for j in range(0, len(crossings) - 1, 2):
            lo = max(0, math.ceil(crossings[j] - 0.5))
            hi = min(width - 1, math.ceil(crossings[j + 1] - 0.5) - 1)
            if hi >= lo:
                out[y, lo : hi + 1] = True
    return out


def decode_mask(seg: SegEncoding, width: int, height: int) -> BinaryMask:
    """Decode a polygon list or RLE dict into a mask of the given dimensions."""
    if isinstance(seg, dict):
        counts = seg.get("counts")
        if isinstance(counts, str):
            counts = decompress_rle_string(counts)
        if not isinstance(counts, list):
            raise MalformedJson("RLE 'counts' must be a list or compressed string")
        size = seg.get("size")
        if size is not None and list(size) != [height, width]:
            raise DimensionMismatch(
                f"RLE size {list(size)} does not match image dimensions "
                f"[{height}, {width}]"
            )
        counts = [int(c) for c in counts]
        if any(c < 0 for c in counts):
            raise MalformedJson("negative RLE count")
        if sum(counts) != width * height:
            raise RleLengthMismatch(
                f"RLE counts sum to {sum(counts)}, expected {width * height}"
            )
        values = np.arange(len(counts), dtype=np.uint8) % 2  # runs alternate 0,1,...
        flat = np.repeat(values, counts).astype(bool)
        return BinaryMask(flat.reshape((height, width), order="F"))
    if isinstance(seg, (list, tuple)):
        if len(seg) == 0:
            raise DegeneratePolygon("empty polygon list")
        acc = np.zeros((height, width), dtype=bool)
        for poly in seg:
            acc |= _rasterize_polygon(poly, width, height)
        return BinaryMask(acc)
    raise MalformedJson(f"unsupported segmentation encoding: {type(seg).__name__}")


def encode_rle(mask: BinaryMask) -> dict:
    """Encode a mask as uncompressed column-major RLE.

    Round trip contract: decode_mask(encode_rle(m), w, h) == m bit-exactly.
    """
    flat = mask.data.flatten(order="F").astype(np.int8)
    if flat.size == 0:
        counts = [0]
    else:
        boundaries = np.flatnonzero(np.diff(flat)) + 1
        edges = np.concatenate(([0], boundaries, [flat.size]))
        counts = np.diff(edges).tolist()
        if flat[0] == 1:
            counts = [0] + counts
    return {"size": [mask.height, mask.width], "counts": counts}


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise MalformedJson(message)


def _mask_bbox(mask: BinaryMask) -> tuple[int, int, int, int] | None:
    rows = np.flatnonzero(mask.data.any(axis=1))
    cols = np.flatnonzero(mask.data.any(axis=0))
    if rows.size == 0:
        return None
    return (
        int(cols[0]),
        int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )


def _validate_annotation(ann: Annotation, image: ImageRecord) -> None:
    mask = decode_mask(ann.segmentation, image.width, image.height)
    if (mask.width, mask.height) != (image.width, image.height):
        raise DimensionMismatch(
            f"annotation {ann.id} decodes to {mask.width}x{mask.height}, "
            f"image {image.id} is {image.width}x{image.height}"
        )
    popcount = mask.area
    tol = max(AREA_REL_TOL * popcount, AREA_ABS_TOL)
    _require(
        abs(ann.area - popcount) <= tol,
        f"annotation {ann.id} stores area {ann.area}, decoded mask has "
        f"{popcount} pixels (tolerance {tol:.1f})",
    )
    tight = _mask_bbox(mask)
    if tight is not None:
        bx, by, bw, bh = ann.bbox
        tx, ty, tw, th = tight
        eps = 1e-6
        _require(
            tx + 0.5 >= bx - eps
            and ty + 0.5 >= by - eps
            and tx + tw - 0.5 <= bx + bw + eps
            and ty + th - 0.5 <= by + bh + eps,
            f"annotation {ann.id} bbox {ann.bbox} does not contain all set pixels "
            f"(mask extent {tight})",
        )


def parse_dataset(json_bytes: bytes | str) -> DatasetIndex:
    """Parse and fully validate a COCO-format annotation JSON."""
    try:
        raw = json.loads(json_bytes)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "top level must be a JSON object")
    for key in ("images", "annotations", "categories"):
        _require(isinstance(raw.get(key), list), f"missing or non-list '{key}' section")

    categories = []
    for entry in raw["categories"]:
        _require(isinstance(entry, dict), "category entries must be objects")
        categories.append(Category(id=int(entry["id"]), name=str(entry["name"])))
    cat_ids = {c.id for c in categories}
    _require(len(cat_ids) == len(categories), "duplicate category ids")

    captions_by_image: dict[int, list[str]] = {}
    instance_entries = []
    for entry in raw["annotations"]:
        _require(isinstance(entry, dict), "annotation entries must be objects")
        if "caption" in entry and "segmentation" not in entry:
            captions_by_image.setdefault(int(entry["image_id"]), []).append(
                str(entry["caption"])
            )
        else:
            instance_entries.append(entry)

    images = []
    for entry in raw["images"]:
        _require(isinstance(entry, dict), "image entries must be objects")
        width = int(entry["width"])
        height = int(entry["height"])
        _require(width > 0 and height > 0, f"image {entry.get('id')} has non-positive dimensions")
        image_id = int(entry["id"])
        captions = [str(c) for c in entry.get("captions", [])]
        captions.extend(captions_by_image.get(image_id, []))
        images.append(
            ImageRecord(
                id=image_id,
                file_name=str(entry["file_name"]),
                width=width,
                height=height,
                captions=tuple(captions),
            )
        )
    image_index = {im.id: im for im in images}
    _require(len(image_index) == len(images), "duplicate image ids")

    annotations = []
    for entry in instance_entries:
        try:
            ann = Annotation(
                id=int(entry["id"]),
                image_id=int(entry["image_id"]),
                category_id=int(entry["category_id"]),
                segmentation=entry["segmentation"],
                area=float(entry["area"]),
                bbox=tuple(float(v) for v in entry["bbox"]),
                iscrowd=bool(entry.get("iscrowd", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedJson(f"bad annotation entry: {exc}") from exc
        annotations.append(ann)

    ann_ids = {a.id for a in annotations}
    _require(len(ann_ids) == len(annotations), "duplicate annotation ids")
    for ann in annotations:
        if ann.image_id not in image_index:
            raise DanglingReference(ann.id, ann.image_id, kind="image")
        if ann.category_id not in cat_ids:
            raise DanglingReference(ann.id, ann.category_id, kind="category")
        _validate_annotation(ann, image_index[ann.image_id])

    by_image: dict[int, list[Annotation]] = {}
    for ann in annotations:
        by_image.setdefault(ann.image_id, []).append(ann)

    return DatasetIndex(
        images=tuple(images),
        annotations=tuple(annotations),
        categories=tuple(categories),
        by_image={k: tuple(v) for k, v in by_image.items()},
    )


def load_dataset(path: str | Path) -> DatasetIndex:
    return parse_dataset(Path(path).read_bytes())


def _image_json(rec: ImageRecord) -> dict:
    out = {
        "id": rec.id,
        "file_name": rec.file_name,
        "width": rec.width,
        "height": rec.height,
    }
    if rec.captions:
        out["captions"] = list(rec.captions)
    return out


def _annotation_json(ann: Annotation) -> dict:
    return {
        "id": ann.id,
        "image_id": ann.image_id,
        "category_id": ann.category_id,
        "segmentation": copy.deepcopy(ann.segmentation),
        "area": ann.area,
        "bbox": list(ann.bbox),
        "iscrowd": int(ann.iscrowd),
    }


def write_augmented_dataset(
    base: DatasetIndex,
    new_images: Sequence[tuple[ImageRecord, int, dict]],
    out: str | Path,
) -> Path:
    """Emit a COCO JSON extending `base` with augmented image variants.

    Each entry of `new_images` is (record, source_image_id, provenance). The
    new image inherits copies of every annotation of its source image with
    fresh unique ids and byte-identical segmentations; areas are recomputed
    from the decoded mask so the emitted file is self-consistent. Provenance
    dictionaries are collected under a top-level "augmentation_info" key.
    """
    existing_image_ids = {im.id for im in base.images}
    images_json = [_image_json(im) for im in base.images]
    annotations_json = [_annotation_json(a) for a in base.annotations]
    next_ann_id = max((a.id for a in base.annotations), default=0) + 1
    provenance_block: dict[str, dict] = {}

    seen_new_ids = set()
    for rec, source_id, provenance in new_images:
        try:
            source = base.image(source_id)
        except KeyError:
            raise DanglingReference(rec.id, source_id, kind="image") from None
        if (rec.width, rec.height) != (source.width, source.height):
            raise DimensionMismatch(
                f"new image {rec.id} is {rec.width}x{rec.height}, source "
                f"{source_id} is {source.width}x{source.height}"
            )
        if rec.id in existing_image_ids or rec.id in seen_new_ids:
            raise MalformedJson(f"new image id {rec.id} collides with an existing id")
        seen_new_ids.add(rec.id)
        images_json.append(_image_json(rec))
        for ann in base.annotations_for(source_id):
            mask = decode_mask(ann.segmentation, source.width, source.height)
            entry = _annotation_json(ann)
            entry["id"] = next_ann_id
            entry["image_id"] = rec.id
            entry["area"] = float(mask.area)
            next_ann_id += 1
            annotations_json.append(entry)
        provenance_block[str(rec.id)] = dict(provenance)

    payload: dict[str, Any] = {
        "images": images_json,
        "annotations": annotations_json,
        "categories": [{"id": c.id, "name": c.name} for c in base.categories],
    }
    if provenance_block:
        payload["augmentation_info"] = provenance_block

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=None, separators=(",", ":")))
    return out
