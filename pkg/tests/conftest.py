"""Shared builders for synthetic COCO datasets and deterministic images."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from outline_forge.image import Image, save_png


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        status = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {status} {name}")


def rect_polygon(x: float, y: float, w: float, h: float) -> list[float]:
    return [x, y, x + w, y, x + w, y + h, x, y + h]


def rect_annotation(
    ann_id: int,
    image_id: int,
    category_id: int,
    x: int,
    y: int,
    w: int,
    h: int,
    iscrowd: int = 0,
) -> dict:
    """Axis-aligned rectangle instance; area and bbox are exact by construction."""
    return {
        "id": ann_id,
        "image_id": image_id,
        "category_id": category_id,
        "segmentation": [rect_polygon(x, y, w, h)],
        "area": float(w * h),
        "bbox": [float(x), float(y), float(w), float(h)],
        "iscrowd": iscrowd,
    }


def coco_dict(images: list[dict], annotations: list[dict], categories: list[dict]) -> dict:
    return {"images": images, "annotations": annotations, "categories": categories}


def gradient_image(width: int, height: int, phase: int = 0) -> Image:
    xs = np.arange(width, dtype=np.int64)
    ys = np.arange(height, dtype=np.int64)
    r = ((xs[None, :] * 3 + phase) % 256).astype(np.uint8)
    g = ((ys[:, None] * 5 + phase) % 256).astype(np.uint8)
    b = ((xs[None, :] + ys[:, None] + phase) % 256).astype(np.uint8)
    return Image(
        np.stack(
            [np.broadcast_to(r, (height, width)), np.broadcast_to(g, (height, width)), b],
            axis=2,
        ).copy()
    )


def paint_rect(image: Image, x: int, y: int, w: int, h: int, color) -> Image:
    data = image.data.copy()
    data[y : y + h, x : x + w] = np.asarray(color, dtype=np.uint8)
    return Image(data)


class ToyDataset:
    """A COCO JSON plus its image files on disk."""

    def __init__(self, root: Path):
        self.root = root
        self.images_dir = root / "images"
        self.images_dir.mkdir(parents=True, exist_ok=True)
        self.images: list[dict] = []
        self.annotations: list[dict] = []
        self.categories: list[dict] = []
        self._next_ann_id = 1

    def add_category(self, category_id: int, name: str) -> None:
        self.categories.append({"id": category_id, "name": name})

    def add_image(
        self,
        image_id: int,
        width: int,
        height: int,
        objects: list[tuple[int, int, int, int, int]] = (),
        captions: list[str] | None = None,
    ) -> None:
        """objects: list of (category_id, x, y, w, h) rectangles."""
        file_name = f"img_{image_id}.png"
        img = gradient_image(width, height, phase=image_id * 7)
        entry = {"id": image_id, "file_name": file_name, "width": width, "height": height}
        if captions:
            entry["captions"] = captions
        self.images.append(entry)
        for category_id, x, y, w, h in objects:
            color = (40 * category_id % 256, 200, 90)
            img = paint_rect(img, x, y, w, h, color)
            self.annotations.append(
                rect_annotation(self._next_ann_id, image_id, category_id, x, y, w, h)
            )
            self._next_ann_id += 1
        save_png(img, self.images_dir / file_name)

    def write(self) -> Path:
        path = self.root / "annotations.json"
        path.write_text(
            json.dumps(coco_dict(self.images, self.annotations, self.categories))
        )
        return path


def make_cocoval_metadata(path: Path, classes: int = 80, per_class: int = 7) -> Path:
    """Annotation-only metadata shaped like a COCO val split: 80 classes, one
    object per image, areas spread over the small/medium/large buckets.

    Per class: 2 small (20x20), 3 medium (50x50), 2 large (100x100) objects,
    so eligibility counts shrink 7 -> 5 -> 2 across min-area 0 / 32^2 / 96^2.
    """
    sides = [20, 20, 50, 50, 50, 100, 100][:per_class]
    images = []
    annotations = []
    categories = [{"id": c + 1, "name": f"class_{c + 1:02d}"} for c in range(classes)]
    next_id = 1
    for c in range(classes):
        for side in sides:
            images.append(
                {
                    "id": next_id,
                    "file_name": f"val_{next_id:05d}.jpg",
                    "width": 128,
                    "height": 128,
                }
            )
            annotations.append(
                rect_annotation(next_id, next_id, c + 1, 5, 5, side, side)
            )
            next_id += 1
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(coco_dict(images, annotations, categories)))
    return path


@pytest.fixture
def toy_dataset(tmp_path: Path) -> ToyDataset:
    """Four images, two categories, objects big enough to survive erosion 12."""
    toy = ToyDataset(tmp_path / "toy")
    toy.add_category(1, "bus")
    toy.add_category(2, "cat")
    toy.add_image(1, 160, 120, [(1, 20, 20, 60, 60)], captions=["a bus parked"])
    toy.add_image(2, 160, 120, [(2, 30, 10, 50, 70)])
    toy.add_image(3, 200, 150, [(1, 10, 10, 80, 80), (1, 110, 40, 60, 60)])
    toy.add_image(4, 140, 140, [(2, 40, 40, 64, 64)])
    toy.coco_path = toy.write()
    return toy
