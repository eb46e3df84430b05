"""Acceptance gate: every primary criterion at its stated tolerance.

Each test is one criterion; the conftest hook prints a PASS/FAIL line per
criterion when the suite runs. Everything here uses the mock backend and
stub feature vectors, so the suite is fully hermetic.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from outline_forge.backend import IdentityBackend, MockBackend
from outline_forge.cli import main as cli_main
from outline_forge.coco import decode_mask, load_dataset, parse_dataset
from outline_forge.fewshot import AreaFilter, eligible_images, make_folds, sample_support
from outline_forge.image import load_image
from outline_forge.mask import BinaryMask
from outline_forge.maskops import SquareKernel, dilate, erode
from outline_forge.metrics import GaussianStats, accumulate_stats, frechet_distance
from outline_forge.pipeline import (
    AugmentationConfig,
    FidPrepConfig,
    fid_prep,
    plan_full_dataset,
    run_plan,
)
from outline_forge.prompts import DEFAULT_NEGATIVE_PROMPT, TEMPLATES, build_prompt

from conftest import ToyDataset, make_cocoval_metadata
from test_coco import rasterize_oracle, random_polygon, rect_polygon
from test_maskops import erode_oracle, random_mask
from test_metrics import frechet_oracle, random_stats

FIXTURES = Path(__file__).parent / "fixtures"


def test_morphology_oracle_500_masks():
    """erode == brute-force min filter on 500 random masks, kernels
    {0,1,2,3,6,12}, bit-exact, under 30 s."""
    started = time.monotonic()
    rng = np.random.default_rng(2024)
    sides = (0, 1, 2, 3, 6, 12)
    for _ in range(500):
        mask = random_mask(rng, max_side=64)
        for side in sides:
            got = erode(mask, SquareKernel(side))
            want = erode_oracle(mask.data, side)
            assert np.array_equal(got.data, want), f"kernel {side} disagrees"
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"morphology oracle took {elapsed:.1f}s"
    print(f"  500 masks x 6 kernels bit-exact in {elapsed:.1f}s", end=" ")


def _preservation_set(tmp_path: Path) -> ToyDataset:
    toy = ToyDataset(tmp_path / "preserve")
    toy.add_category(1, "bus")
    toy.add_category(2, "cat")
    rng = np.random.default_rng(9)
    for image_id in range(1, 26):
        cls = 1 + (image_id % 2)
        side = int(rng.integers(40, 70))
        x = int(rng.integers(0, 128 - side))
        y = int(rng.integers(0, 128 - side))
        toy.add_image(image_id, 128, 128, [(cls, x, y, side, side)])
    toy.coco_path = toy.write()
    return toy


def test_annotation_preservation_50_augmentations(tmp_path):
    """50 mock augmentations: pixels beyond the blend radius outside the
    original mask equal the source bit-exactly; the output re-parses and
    every variant's popcounts equal its source's. Under 60 s."""
    started = time.monotonic()
    toy = _preservation_set(tmp_path)
    ds = load_dataset(toy.coco_path)
    cfg = AugmentationConfig(backend=MockBackend(), master_seed=11, workers=4)
    plan = plan_full_dataset(ds, variants=2, area_filter=AreaFilter(0), master_seed=11)
    assert len(plan) == 50
    out = tmp_path / "out"
    report = run_plan(ds, toy.images_dir, plan, cfg, out)
    assert report.succeeded == 50

    emitted = parse_dataset(report.dataset_path.read_bytes())  # validates throughout
    info = json.loads(report.dataset_path.read_text())["augmentation_info"]
    radius = cfg.blend.radius
    checked = 0
    for record in emitted.images:
        if str(record.id) not in info:
            continue
        source_id = info[str(record.id)]["source_image_id"]
        source_rec = emitted.image(source_id)
        source_img = load_image(toy.images_dir / source_rec.file_name)
        variant_img = load_image(out / record.file_name)

        union = np.zeros((record.height, record.width), dtype=bool)
        for ann in emitted.annotations_for(source_id):
            union |= decode_mask(ann.segmentation, record.width, record.height).data
        near = dilate(BinaryMask(union), SquareKernel(2 * radius + 1)).data
        far = ~near
        assert np.array_equal(variant_img.data[far], source_img.data[far]), (
            f"variant {record.id} changed pixels beyond the blend radius"
        )
        # popcounts of the copied annotations equal the source's
        for new_ann, src_ann in zip(
            emitted.annotations_for(record.id), emitted.annotations_for(source_id)
        ):
            a = decode_mask(new_ann.segmentation, record.width, record.height).area
            b = decode_mask(src_ann.segmentation, record.width, record.height).area
            assert a == b
        checked += 1
    assert checked == 50
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"preservation audit took {elapsed:.1f}s"
    print(f"  50 variants audited in {elapsed:.1f}s", end=" ")


def test_codec_round_trips():
    """RLE identity on 200 random masks; polygon rasterization equals the
    even-odd point-in-polygon oracle on 100 polygons. Exact."""
    from outline_forge.coco import encode_rle

    rng = np.random.default_rng(77)
    for _ in range(200):
        w = int(rng.integers(1, 33))
        h = int(rng.integers(1, 33))
        mask = BinaryMask(rng.random((h, w)) < rng.uniform(0.05, 0.95))
        assert decode_mask(encode_rle(mask), w, h) == mask

    for index in range(100):
        w = int(rng.integers(4, 65))
        h = int(rng.integers(4, 65))
        if index % 10 == 0:  # include exact axis-aligned cases
            poly = rect_polygon(
                int(rng.integers(0, w // 2)),
                int(rng.integers(0, h // 2)),
                int(rng.integers(1, w // 2)),
                int(rng.integers(1, h // 2)),
            )
        else:
            poly = random_polygon(rng, w, h)
        got = decode_mask([poly], w, h)
        want = rasterize_oracle(poly, w, h)
        assert np.array_equal(got.data, want)
    print("  200 RLE round trips + 100 polygon oracles exact", end=" ")


def test_frechet_distance_criteria():
    """Zero on identical stats (1e-8); 1-D closed form (1e-10); eigensolver
    oracle agreement on 50 random 4-16 D pairs (1e-6 relative); symmetry and
    s^2 scaling laws (1e-6)."""
    rng = np.random.default_rng(31337)
    stats = random_stats(rng, 8)
    assert frechet_distance(stats, stats) <= 1e-8

    a1 = GaussianStats(n=16, mean=np.array([0.0]), cov=np.array([[1.0]]))
    b1 = GaussianStats(n=16, mean=np.array([1.0]), cov=np.array([[1.0]]))
    assert abs(frechet_distance(a1, b1) - 1.0) <= 1e-10

    for _ in range(50):
        dim = int(rng.integers(4, 17))
        a = random_stats(rng, dim)
        b = random_stats(rng, dim)
        got = frechet_distance(a, b)
        want = frechet_oracle(a, b)
        assert abs(got - want) <= 1e-6 * max(1.0, abs(want))
        assert abs(got - frechet_distance(b, a)) <= 1e-6 * max(1.0, got)

    a = random_stats(rng, 6)
    b = random_stats(rng, 6)
    base = frechet_distance(a, b)
    for s in (0.25, 2.0, 10.0):
        sa = GaussianStats(n=a.n, mean=s * a.mean, cov=s * s * a.cov)
        sb = GaussianStats(n=b.n, mean=s * b.mean, cov=s * s * b.cov)
        got = frechet_distance(sa, sb)
        assert abs(got - s * s * base) <= 1e-6 * max(1.0, got)
    print("  frechet: identity, closed form, 50 oracle pairs, laws", end=" ")


def _fid_toy(tmp_path: Path) -> ToyDataset:
    toy = ToyDataset(tmp_path / "fidtoy")
    toy.add_category(1, "blob")
    toy.add_category(2, "slab")
    image_id = 1
    for _ in range(4):  # only 2x2 objects: every sampled mask vanishes
        toy.add_image(image_id, 128, 128, [(1, 10, 10, 2, 2), (2, 40, 40, 2, 2)])
        image_id += 1
    for _ in range(15):
        toy.add_image(image_id, 128, 128, [(1, 8, 8, 40, 40), (2, 60, 60, 50, 50)])
        image_id += 1
    toy.add_image(image_id, 128, 128, [(1, 20, 20, 60, 60)])  # single annotation
    toy.coco_path = toy.write()
    return toy


def test_fid_prep_protocol_trace(tmp_path):
    """20-image toy set: exactly 2 masks per eligible image (1 where only one
    exists), hand-computed reversion count, 256x256 outputs, identity-backend
    degenerate FID < 1e-6 on mean-RGB stub features. Under 2 min."""
    started = time.monotonic()
    toy = _fid_toy(tmp_path)
    ds = load_dataset(toy.coco_path)
    out = tmp_path / "fid"
    report = fid_prep(ds, toy.images_dir, FidPrepConfig(seed=5), MockBackend(), out)

    assert report.images_processed == 20
    sampled = [len(p["sampled"]) for p in report.pairs]
    assert sampled.count(2) == 19 and sampled.count(1) == 1
    # hand-computed expectation: the 4 tiny-object images hold two 2x2
    # annotations each; 2x2 upscales to 8x8 at 512 and vanishes under kernel
    # 12, so both sampled masks revert: exactly 8 reversions.
    assert report.reversions == 8
    for pair in report.pairs:
        for side in ("A", "B"):
            img = load_image(out / side / pair["file"])
            assert (img.width, img.height) == (256, 256)

    ident_out = tmp_path / "fid_ident"
    fid_prep(ds, toy.images_dir, FidPrepConfig(seed=5), IdentityBackend(), ident_out)

    def mean_rgb(directory: Path) -> np.ndarray:
        rows = []
        for path in sorted(directory.glob("*.png")):
            rows.append(load_image(path).data.reshape(-1, 3).mean(axis=0))
        return np.asarray(rows)

    stats_a = accumulate_stats(mean_rgb(ident_out / "A"))
    stats_b = accumulate_stats(mean_rgb(ident_out / "B"))
    degenerate = frechet_distance(stats_a, stats_b)
    assert degenerate < 1e-6
    elapsed = time.monotonic() - started
    assert elapsed < 120.0, f"fid-prep trace took {elapsed:.1f}s"
    print(f"  reversions=8, degenerate fid={degenerate:.2e}, {elapsed:.1f}s", end=" ")


def test_fewshot_arithmetic(tmp_path):
    """Folds partition 80 classes under both assignments; 5-shot sampling is
    exactly 100 entries; min-area 0 / 32^2 / 96^2 shrink the eligible sets
    monotonically on COCO-val-style metadata (no images needed)."""
    ids = list(range(1, 81))
    for assignment in ("modulo", "contiguous"):
        folds = make_folds(ids, assignment)
        union = [c for f in folds for c in f.class_ids]
        assert sorted(union) == ids and len(set(union)) == 80
        assert all(len(f.class_ids) == 20 for f in folds)

    coco = make_cocoval_metadata(tmp_path / "val.json")
    ds = parse_dataset(coco.read_bytes())
    folds = make_folds([c.id for c in ds.categories], "modulo")
    support = sample_support(ds, folds[2], shots=5, area_filter=AreaFilter(0), seed=1)
    assert len(support.entries) == 100

    areas = (0, 32 * 32, 96 * 96)
    for category in ds.categories:
        sets = [set(eligible_images(ds, category.id, AreaFilter(a))) for a in areas]
        assert sets[2] < sets[1] < sets[0]  # strictly shrinking by construction
    print("  folds partition, 100 entries, filters monotone", end=" ")


def _tree_hash(root: Path, exclude: set[str]) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name not in exclude:
            out[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    return out


def test_determinism_across_worker_counts(tmp_path, capsys):
    """cmd_augment, mock backend, same seed, workers 1 vs 8: byte-identical
    output trees. The run log (wall times) and the manifest (which records
    the differing workers flag) are the only files excluded. Under 2 min."""
    started = time.monotonic()
    toy = _preservation_set(tmp_path)
    trees = {}
    for workers in (1, 8):
        out = tmp_path / f"run_w{workers}"
        code = cli_main(
            [
                "augment",
                "--coco", str(toy.coco_path),
                "--images", str(toy.images_dir),
                "--out", str(out),
                "--seed", "21",
                "--variants", "1",
                "--workers", str(workers),
                "--backend", "mock",
            ]
        )
        capsys.readouterr()
        assert code == 0
        trees[workers] = _tree_hash(out, exclude={"run_log.jsonl", "manifest.json"})
    assert trees[1] == trees[8]
    assert len(trees[1]) >= 26  # dataset json + 25 variant images
    elapsed = time.monotonic() - started
    assert elapsed < 120.0, f"determinism check took {elapsed:.1f}s"
    print(f"  {len(trees[1])} files byte-identical in {elapsed:.1f}s", end=" ")


def _ablation_set(tmp_path: Path) -> ToyDataset:
    toy = ToyDataset(tmp_path / "ablation")
    toy.add_category(1, "thing")
    # two images per COCO size bucket, so min-area genuinely changes the plan
    toy.add_image(1, 128, 128, [(1, 10, 10, 20, 20)])
    toy.add_image(2, 128, 128, [(1, 30, 30, 20, 20)])
    toy.add_image(3, 128, 128, [(1, 10, 10, 50, 50)])
    toy.add_image(4, 128, 128, [(1, 40, 40, 50, 50)])
    toy.add_image(5, 128, 128, [(1, 10, 10, 100, 100)])
    toy.add_image(6, 128, 128, [(1, 14, 14, 100, 100)])
    toy.coco_path = toy.write()
    return toy


def test_ablation_grid_plumbing(tmp_path, capsys):
    """The 3 x 3 x 2 grid runs as 18 mock jobs with distinct manifests;
    output pixels differ wherever min-area or erosion differ."""
    toy = _ablation_set(tmp_path)
    manifest_hashes = set()
    tree_hashes = {}
    image_hashes = {}
    for min_area in (0, 32 * 32, 96 * 96):
        for erosion in (0, 6, 12):
            for negative in (False, True):
                key = (min_area, erosion, negative)
                out = tmp_path / f"g_{min_area}_{erosion}_{int(negative)}"
                argv = [
                    "augment",
                    "--coco", str(toy.coco_path),
                    "--images", str(toy.images_dir),
                    "--out", str(out),
                    "--seed", "3",
                    "--min-area", str(min_area),
                    "--erosion", str(erosion),
                ]
                if negative:
                    argv.append("--use-negative")
                code = cli_main(argv)
                capsys.readouterr()
                assert code == 0
                manifest_hashes.add(
                    hashlib.sha256((out / "manifest.json").read_bytes()).hexdigest()
                )
                tree = _tree_hash(out, exclude={"run_log.jsonl", "manifest.json"})
                tree_hashes[key] = json.dumps(tree, sort_keys=True)
                image_hashes[key] = json.dumps(
                    {k: v for k, v in tree.items() if k.endswith(".png")},
                    sort_keys=True,
                )
    assert len(manifest_hashes) == 18
    # every config pair differing in an inpaint-affecting field has distinct
    # output pixels; the negative-prompt toggle shows up in the dataset JSON
    assert len(set(tree_hashes.values())) == 18
    pixel_groups = {(m, e): image_hashes[(m, e, False)] for m, e, _ in image_hashes}
    assert len(set(pixel_groups.values())) == 9
    for m, e in pixel_groups:
        assert image_hashes[(m, e, False)] == image_hashes[(m, e, True)]
    print("  18 manifests distinct, 9 pixel groups distinct", end=" ")


def test_prompt_goldens():
    """Default template outputs and the negative prompt byte-match fixtures."""
    golden_negative = (FIXTURES / "negative_prompt.txt").read_bytes()
    assert DEFAULT_NEGATIVE_PROMPT.encode("utf-8") == golden_negative
    cases = json.loads((FIXTURES / "prompt_goldens.json").read_text())["cases"]
    assert len(cases) >= 5
    for case in cases:
        spec = build_prompt(
            case["class"],
            case["count"],
            template=TEMPLATES[case["template"]],
            use_negative=case["use_negative"],
        )
        assert spec.positive == case["positive"]
        assert spec.negative == case["negative"]
    assert build_prompt("cat", 1, use_negative=True).negative.startswith(
        "disfigured, kitsch, ugly, oversaturated, grain"
    )
    print("  negative prompt and template goldens byte-exact", end=" ")
