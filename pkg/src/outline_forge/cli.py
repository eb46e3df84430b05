"""Command-line front end: augment, fewshot, fidprep, cutouts, score, preview, validate.

Scores and reports go to stdout as JSON so experiment grids stay scriptable;
human-readable progress goes to stderr. Every command resolves its options as
defaults < config file (TOML or JSON) < explicit flags, and records the fully
resolved configuration in a run manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backend import make_backend
from .coco import decode_mask, load_dataset
from .compositor import BlendParams
from .errors import OutlineForgeError
from .fewshot import AreaFilter, make_folds, plan_augmentation, sample_support, stable_hash64
from .image import Image, load_image, save_png
from .imageops import PadFill, resize
from .mask import BinaryMask
from .maskops import SquareKernel, erode
from .metrics import clip_score, frechet_distance, read_embedding_pairs, stats_from_file
from .pipeline import (
    AugmentationConfig,
    FidPrepConfig,
    augment_instance,
    fid_prep,
    local_cutouts,
    plan_full_dataset,
    run_plan,
)
from .prompts import DEFAULT_NEGATIVE_PROMPT, resolve_template

log = logging.getLogger("outline_forge")

ENV_BACKEND_URL = "OUTLINE_FORGE_BACKEND_URL"

_COMMON_DEFAULTS = {
    "erosion": 12,
    "min_area": 0.0,
    "blend_sigma": 2.0,
    "prompt_template": "photo",
    "use_negative": False,
    "negative_prompt": DEFAULT_NEGATIVE_PROMPT,
    "backend": "mock",
    "backend_url": None,
    "seed": 0,
    "workers": 1,
    "steps": 50,
    "guidance_scale": 7.5,
    "pad_fill": "edge",
    "noise_background": False,
    "failure_budget": 0.01,
}

DEFAULTS: dict[str, dict] = {
    "augment": dict(
        _COMMON_DEFAULTS,
        variants=1,
        fold=None,
        shots=5,
        added=None,
        assignment="modulo",
    ),
    "fewshot": {
        "fold": 0,
        "shots": 5,
        "min_area": 0.0,
        "seed": 0,
        "assignment": "modulo",
        "out": None,
    },
    "fidprep": dict(_COMMON_DEFAULTS, masks_per_image=2),
    "cutouts": {"out": None},
    "score": {
        "features_a": None,
        "features_b": None,
        "local_features_a": None,
        "local_features_b": None,
        "embeddings": None,
    },
    "preview": dict(_COMMON_DEFAULTS, variants=3),
    "validate": {},
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(command: str, resolved: dict, input_files: dict[str, Path]) -> dict:
    return {
        "tool": "outline-forge",
        "version": __version__,
        "command": command,
        "master_seed": resolved.get("seed"),
        "config": {k: str(v) if isinstance(v, Path) else v for k, v in resolved.items()},
        "input_hashes": {name: _sha256(Path(p)) for name, p in input_files.items()},
    }


def write_manifest(manifest: dict, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _load_config_file(path: str) -> dict:
    raw = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw)


def _resolve(args: argparse.Namespace) -> dict:
    explicit = {
        k: v for k, v in vars(args).items() if k not in ("command", "func")
    }
    resolved = dict(DEFAULTS[args.command])
    config_path = explicit.pop("config", None)
    if config_path:
        file_values = _load_config_file(config_path)
        unknown = set(file_values) - set(resolved) - {"coco", "images", "out"}
        if unknown:
            raise OutlineForgeError(
                f"config file sets unknown keys: {sorted(unknown)}"
            )
        resolved.update(file_values)
        resolved["config"] = config_path
    if "negative_prompt" in explicit and "use_negative" not in explicit:
        explicit["use_negative"] = True
    resolved.update(explicit)
    if resolved.get("backend_url") is None:
        resolved["backend_url"] = os.environ.get(ENV_BACKEND_URL)
    return resolved


def _require_keys(resolved: dict, keys: list[str], command: str) -> None:
    missing = [k for k in keys if not resolved.get(k)]
    if missing:
        raise OutlineForgeError(
            f"{command} requires {', '.join('--' + k.replace('_', '-') for k in missing)}"
        )


def _augment_config(resolved: dict) -> AugmentationConfig:
    backend = make_backend(resolved["backend"], resolved.get("backend_url"))
    return AugmentationConfig(
        erosion=SquareKernel(int(resolved["erosion"])),
        min_area=AreaFilter(float(resolved["min_area"])),
        blend=BlendParams(float(resolved["blend_sigma"])),
        template=resolve_template(resolved["prompt_template"]),
        use_negative=bool(resolved["use_negative"]),
        negative_text=str(resolved["negative_prompt"]),
        backend=backend,
        master_seed=int(resolved["seed"]),
        workers=int(resolved["workers"]),
        noise_background=bool(resolved["noise_background"]),
        failure_budget=float(resolved["failure_budget"]),
        pad_fill=PadFill(resolved["pad_fill"]),
        steps=int(resolved["steps"]),
        guidance_scale=float(resolved["guidance_scale"]),
    )


def cmd_augment(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    _require_keys(resolved, ["coco", "images", "out"], "augment")
    ds = load_dataset(resolved["coco"])
    cfg = _augment_config(resolved)
    area = AreaFilter(float(resolved["min_area"]))
    seed = int(resolved["seed"])
    if resolved.get("fold") is not None:
        folds = make_folds([c.id for c in ds.categories], resolved["assignment"])
        support = sample_support(
            ds, folds[int(resolved["fold"])], int(resolved["shots"]), area, seed
        )
        added = resolved.get("added")
        added = len(support.entries) if added is None else int(added)
        plan = plan_augmentation(support, added)
    else:
        plan = plan_full_dataset(ds, int(resolved["variants"]), area, seed)
    log.info("augment: %d tasks planned", len(plan))

    out_dir = Path(resolved["out"])
    report = run_plan(ds, Path(resolved["images"]), plan, cfg, out_dir)
    manifest = build_manifest("augment", resolved, {"coco": Path(resolved["coco"])})
    manifest_path = write_manifest(manifest, out_dir)
    print(
        json.dumps(
            {
                "report": report.counts(),
                "dataset": str(report.dataset_path),
                "log": str(report.log_path),
                "manifest": str(manifest_path),
            }
        )
    )
    return 0


def cmd_fewshot(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    _require_keys(resolved, ["coco"], "fewshot")
    ds = load_dataset(resolved["coco"])
    folds = make_folds([c.id for c in ds.categories], resolved["assignment"])
    fold = folds[int(resolved["fold"])]
    support = sample_support(
        ds,
        fold,
        int(resolved["shots"]),
        AreaFilter(float(resolved["min_area"])),
        int(resolved["seed"]),
    )
    manifest = build_manifest("fewshot", resolved, {"coco": Path(resolved["coco"])})
    payload = {
        "fold": {
            "fold_index": fold.fold_index,
            "class_ids": list(fold.class_ids),
            "assignment": fold.assignment,
        },
        "shots": support.shots,
        "seed": support.seed,
        "entries": [list(e) for e in support.entries],
        "manifest": manifest,
    }
    text = json.dumps(payload)
    if resolved.get("out"):
        Path(resolved["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(resolved["out"]).write_text(text)
    print(text)
    return 0


def cmd_fidprep(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    _require_keys(resolved, ["coco", "images", "out"], "fidprep")
    ds = load_dataset(resolved["coco"])
    backend = make_backend(resolved["backend"], resolved.get("backend_url"))
    cfg = FidPrepConfig(
        masks_per_image=int(resolved["masks_per_image"]),
        erosion=SquareKernel(int(resolved["erosion"])),
        seed=int(resolved["seed"]),
        template=resolve_template(resolved["prompt_template"]),
        use_negative=bool(resolved["use_negative"]),
        negative_text=str(resolved["negative_prompt"]),
        steps=int(resolved["steps"]),
        guidance_scale=float(resolved["guidance_scale"]),
    )
    out_dir = Path(resolved["out"])
    report = fid_prep(ds, Path(resolved["images"]), cfg, backend, out_dir)
    manifest = build_manifest("fidprep", resolved, {"coco": Path(resolved["coco"])})
    manifest_path = write_manifest(manifest, out_dir)
    print(
        json.dumps(
            {
                "images_processed": report.images_processed,
                "images_skipped": report.images_skipped,
                "reversions": report.reversions,
                "pairs_manifest": str(report.manifest_path),
                "manifest": str(manifest_path),
            }
        )
    )
    return 0


def cmd_cutouts(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    _require_keys(resolved, ["fidprep_dir", "out"], "cutouts")
    fid_dir = Path(resolved["fidprep_dir"])
    pairs_manifest = json.loads((fid_dir / "fidprep_pairs.json").read_text())
    out_dir = Path(resolved["out"])
    (out_dir / "A").mkdir(parents=True, exist_ok=True)
    (out_dir / "B").mkdir(parents=True, exist_ok=True)

    items = []
    names = []
    for pair in pairs_manifest["pairs"]:
        original = load_image(fid_dir / "A" / pair["file"])
        inpainted = load_image(fid_dir / "B" / pair["file"])
        for sampled in pair["sampled"]:
            items.append(
                (original, inpainted, sampled["bbox"], tuple(pair["source_dims"]))
            )
            names.append(f"img_{pair['image_id']}_ann{sampled['annotation_id']}.png")
    results, skipped = local_cutouts(items)
    for idx, crop_a, crop_b in results:
        save_png(crop_a, out_dir / "A" / names[idx])
        save_png(crop_b, out_dir / "B" / names[idx])
    manifest = build_manifest(
        "cutouts", resolved, {"pairs": fid_dir / "fidprep_pairs.json"}
    )
    manifest_path = write_manifest(manifest, out_dir)
    print(
        json.dumps(
            {
                "pairs_written": len(results),
                "pairs_skipped": skipped,
                "manifest": str(manifest_path),
            }
        )
    )
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    result: dict = {}
    inputs: dict[str, Path] = {}
    if resolved.get("features_a") or resolved.get("features_b"):
        _require_keys(resolved, ["features_a", "features_b"], "score")
        result["fid"] = frechet_distance(
            stats_from_file(resolved["features_a"]),
            stats_from_file(resolved["features_b"]),
        )
        inputs["features_a"] = Path(resolved["features_a"])
        inputs["features_b"] = Path(resolved["features_b"])
    if resolved.get("local_features_a") or resolved.get("local_features_b"):
        _require_keys(resolved, ["local_features_a", "local_features_b"], "score")
        result["local_fid"] = frechet_distance(
            stats_from_file(resolved["local_features_a"]),
            stats_from_file(resolved["local_features_b"]),
        )
        inputs["local_features_a"] = Path(resolved["local_features_a"])
        inputs["local_features_b"] = Path(resolved["local_features_b"])
    if resolved.get("embeddings"):
        result["clip_score"] = clip_score(read_embedding_pairs(resolved["embeddings"]))
        inputs["embeddings"] = Path(resolved["embeddings"])
    if not result:
        raise OutlineForgeError(
            "score needs --features-a/--features-b, --local-features-a/--local-features-b, "
            "or --embeddings"
        )
    result["manifest"] = build_manifest("score", resolved, inputs)
    print(json.dumps(result))
    return 0


def _tint(image: Image, mask: BinaryMask, color: tuple[int, int, int]) -> Image:
    out = image.data.copy()
    tint = np.asarray(color, dtype=np.uint8)
    out[mask.data] = out[mask.data] // 2 + tint // 2
    return Image(out)


def cmd_preview(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    _require_keys(resolved, ["coco", "images", "out", "image_id", "class_id"], "preview")
    ds = load_dataset(resolved["coco"])
    cfg = _augment_config(resolved)
    image_id = int(resolved["image_id"])
    class_id = int(resolved["class_id"])
    record = ds.image(image_id)
    source = load_image(Path(resolved["images"]) / record.file_name)

    union = np.zeros((record.height, record.width), dtype=bool)
    for ann in ds.annotations_for(image_id):
        if ann.category_id == class_id and not ann.iscrowd and cfg.min_area.passes(ann.area):
            union |= decode_mask(ann.segmentation, record.width, record.height).data
    union_mask = BinaryMask(union)
    inner = erode(union_mask, cfg.erosion)

    tile_size = (256, 256)
    tiles = [
        resize(_tint(source, union_mask, (0, 255, 0)), tile_size),
        resize(_tint(source, inner, (255, 0, 0)), tile_size),
    ]
    for index in range(int(resolved["variants"])):
        variant_seed = stable_hash64(int(resolved["seed"]), image_id, class_id, index)
        variant, _ = augment_instance(
            ds, Path(resolved["images"]), image_id, class_id, cfg, variant_seed
        )
        tiles.append(resize(variant, tile_size))
    grid = Image(np.concatenate([t.data for t in tiles], axis=1))
    out_path = Path(resolved["out"])
    save_png(grid, out_path)
    manifest = build_manifest("preview", resolved, {"coco": Path(resolved["coco"])})
    print(json.dumps({"preview": str(out_path), "tiles": len(tiles), "manifest": manifest}))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    _require_keys(resolved, ["coco"], "validate")
    ds = load_dataset(resolved["coco"])
    manifest = build_manifest("validate", resolved, {"coco": Path(resolved["coco"])})
    print(
        json.dumps(
            {
                "images": len(ds.images),
                "annotations": len(ds.annotations),
                "categories": len(ds.categories),
                "crowd_annotations": sum(1 for a in ds.annotations if a.iscrowd),
                "manifest": manifest,
            }
        )
    )
    return 0


def _add_backend_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--backend",
        choices=["mock", "identity", "http"],
        default=argparse.SUPPRESS,
        help="inpainting backend (default mock)",
    )
    sub.add_argument(
        "--backend-url",
        default=argparse.SUPPRESS,
        help=f"HTTP backend endpoint (default ${ENV_BACKEND_URL})",
    )
    sub.add_argument(
        "--steps", type=int, default=argparse.SUPPRESS, help="diffusion steps (default 50)"
    )
    sub.add_argument(
        "--guidance-scale",
        type=float,
        default=argparse.SUPPRESS,
        help="classifier-free guidance scale (default 7.5)",
    )


def _add_prompt_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--prompt-template",
        default=argparse.SUPPRESS,
        help="template name (photo, image_of, bare) or custom pattern with {}",
    )
    sub.add_argument(
        "--use-negative",
        dest="use_negative",
        action="store_true",
        default=argparse.SUPPRESS,
        help="attach the negative prompt",
    )
    sub.add_argument(
        "--no-negative",
        dest="use_negative",
        action="store_false",
        default=argparse.SUPPRESS,
        help="disable the negative prompt",
    )
    sub.add_argument(
        "--negative-prompt",
        default=argparse.SUPPRESS,
        help="custom negative prompt text (implies --use-negative)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outline-forge",
        description="Outline-guided inpainting augmentation for instance segmentation datasets",
    )
    parser.add_argument("--version", action="version", version=f"outline-forge {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    def new_sub(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subs.add_parser(name, help=help_text)
        sub.add_argument("--config", default=argparse.SUPPRESS, help="TOML or JSON config file")
        sub.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
        return sub

    aug = new_sub("augment", "generate annotated variants of dataset objects")
    aug.add_argument("--coco", default=argparse.SUPPRESS, help="COCO annotation JSON")
    aug.add_argument("--images", default=argparse.SUPPRESS, help="image root directory")
    aug.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    aug.add_argument("--erosion", type=int, default=argparse.SUPPRESS, help="erosion kernel side")
    aug.add_argument("--min-area", type=float, default=argparse.SUPPRESS, help="minimum object area")
    aug.add_argument("--blend-sigma", type=float, default=argparse.SUPPRESS, help="seam blur sigma")
    aug.add_argument("--variants", type=int, default=argparse.SUPPRESS, help="variants per (image, class)")
    aug.add_argument("--fold", type=int, default=argparse.SUPPRESS, help="COCO-20i fold for support sampling")
    aug.add_argument("--shots", type=int, default=argparse.SUPPRESS, help="images per class in the support set")
    aug.add_argument("--added", type=int, default=argparse.SUPPRESS, help="augmented images to add over the support set")
    aug.add_argument("--assignment", choices=["modulo", "contiguous"], default=argparse.SUPPRESS, help="fold assignment rule")
    aug.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker pool size")
    aug.add_argument("--noise-background", action="store_true", default=argparse.SUPPRESS, help="replace background with noise before inpainting")
    aug.add_argument("--failure-budget", type=float, default=argparse.SUPPRESS, help="tolerated backend failure fraction")
    aug.add_argument("--pad-fill", choices=["edge", "black"], default=argparse.SUPPRESS, help="canvas padding fill")
    _add_prompt_flags(aug)
    _add_backend_flags(aug)
    aug.set_defaults(func=cmd_augment)

    few = new_sub("fewshot", "emit a COCO-20i support set as JSON")
    few.add_argument("--coco", default=argparse.SUPPRESS, help="COCO annotation JSON")
    few.add_argument("--fold", type=int, default=argparse.SUPPRESS, help="fold index 0..3")
    few.add_argument("--shots", type=int, default=argparse.SUPPRESS, help="images per class")
    few.add_argument("--min-area", type=float, default=argparse.SUPPRESS, help="minimum object area")
    few.add_argument("--assignment", choices=["modulo", "contiguous"], default=argparse.SUPPRESS, help="fold assignment rule")
    few.add_argument("--out", default=argparse.SUPPRESS, help="also write the JSON here")
    few.set_defaults(func=cmd_fewshot)

    fid = new_sub("fidprep", "build paired original/inpainted sets for FID")
    fid.add_argument("--coco", default=argparse.SUPPRESS, help="COCO annotation JSON")
    fid.add_argument("--images", default=argparse.SUPPRESS, help="image root directory")
    fid.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    fid.add_argument("--masks-per-image", type=int, default=argparse.SUPPRESS, help="annotations sampled per image")
    fid.add_argument("--erosion", type=int, default=argparse.SUPPRESS, help="erosion kernel side")
    _add_prompt_flags(fid)
    _add_backend_flags(fid)
    fid.set_defaults(func=cmd_fidprep)

    cut = new_sub("cutouts", "crop paired bbox cutouts for Local FID")
    cut.add_argument("--fidprep-dir", default=argparse.SUPPRESS, help="directory written by fidprep")
    cut.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    cut.set_defaults(func=cmd_cutouts)

    score = new_sub("score", "compute fid / local_fid / clip_score from files")
    score.add_argument("--features-a", default=argparse.SUPPRESS, help="FEAT file, reference set")
    score.add_argument("--features-b", default=argparse.SUPPRESS, help="FEAT file, generated set")
    score.add_argument("--local-features-a", default=argparse.SUPPRESS, help="FEAT file, reference cutouts")
    score.add_argument("--local-features-b", default=argparse.SUPPRESS, help="FEAT file, generated cutouts")
    score.add_argument("--embeddings", default=argparse.SUPPRESS, help="embedding pairs JSON")
    score.set_defaults(func=cmd_score)

    prev = new_sub("preview", "tile mask overlays and variants into one PNG")
    prev.add_argument("--coco", default=argparse.SUPPRESS, help="COCO annotation JSON")
    prev.add_argument("--images", default=argparse.SUPPRESS, help="image root directory")
    prev.add_argument("--out", default=argparse.SUPPRESS, help="output PNG path")
    prev.add_argument("--image-id", type=int, default=argparse.SUPPRESS, help="image to preview")
    prev.add_argument("--class-id", type=int, default=argparse.SUPPRESS, help="class to preview")
    prev.add_argument("--variants", type=int, default=argparse.SUPPRESS, help="variant tiles")
    prev.add_argument("--erosion", type=int, default=argparse.SUPPRESS, help="erosion kernel side")
    prev.add_argument("--min-area", type=float, default=argparse.SUPPRESS, help="minimum object area")
    prev.add_argument("--blend-sigma", type=float, default=argparse.SUPPRESS, help="seam blur sigma")
    prev.add_argument("--workers", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    prev.add_argument("--noise-background", action="store_true", default=argparse.SUPPRESS, help="replace background with noise before inpainting")
    prev.add_argument("--failure-budget", type=float, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    prev.add_argument("--pad-fill", choices=["edge", "black"], default=argparse.SUPPRESS, help="canvas padding fill")
    _add_prompt_flags(prev)
    _add_backend_flags(prev)
    prev.set_defaults(func=cmd_preview)

    val = new_sub("validate", "parse and validate a COCO annotation file")
    val.add_argument("--coco", default=argparse.SUPPRESS, help="COCO annotation JSON")
    val.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OutlineForgeError as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 1
    except OSError as exc:
        print(json.dumps({"error": {"type": "IoError", "message": str(exc)}}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
