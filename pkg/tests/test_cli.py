"""cli: command wiring, config merging, manifests, JSON outputs."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from outline_forge.cli import build_parser, main
from outline_forge.image import load_image
from outline_forge.metrics import write_feature_file

from conftest import ToyDataset, make_cocoval_metadata


def run_cli(capsys, argv: list[str]) -> tuple[int, dict]:
    code = main(argv)
    out = capsys.readouterr().out.strip()
    payload = json.loads(out.splitlines()[-1]) if out else {}
    return code, payload


def image_hashes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*.png"))
    }


# ---------------------------------------------------------------------------
# augment


def test_augment_happy_path(toy_dataset: ToyDataset, tmp_path, capsys):
    out = tmp_path / "out"
    code, payload = run_cli(
        capsys,
        [
            "augment",
            "--coco", str(toy_dataset.coco_path),
            "--images", str(toy_dataset.images_dir),
            "--out", str(out),
            "--erosion", "12",
            "--variants", "1",
            "--backend", "mock",
            "--seed", "7",
        ],
    )
    assert code == 0
    assert payload["report"]["succeeded"] == 4
    assert Path(payload["dataset"]).exists()
    assert Path(payload["manifest"]).exists()
    manifest = json.loads(Path(payload["manifest"]).read_text())
    assert manifest["command"] == "augment"
    assert manifest["master_seed"] == 7
    assert manifest["config"]["erosion"] == 12
    assert "coco" in manifest["input_hashes"]


def test_augment_missing_image_file_names_it(toy_dataset: ToyDataset, tmp_path, capsys):
    (toy_dataset.images_dir / "img_2.png").unlink()
    code, payload = run_cli(
        capsys,
        [
            "augment",
            "--coco", str(toy_dataset.coco_path),
            "--images", str(toy_dataset.images_dir),
            "--out", str(tmp_path / "out"),
        ],
    )
    assert code == 1
    assert "img_2.png" in payload["error"]["message"]


def test_augment_erosion_sensitivity(toy_dataset: ToyDataset, tmp_path, capsys):
    hashes = {}
    manifests = {}
    for erosion in (0, 12):
        out = tmp_path / f"e{erosion}"
        code, payload = run_cli(
            capsys,
            [
                "augment",
                "--coco", str(toy_dataset.coco_path),
                "--images", str(toy_dataset.images_dir),
                "--out", str(out),
                "--erosion", str(erosion),
                "--seed", "7",
            ],
        )
        assert code == 0
        hashes[erosion] = image_hashes(out)
        manifests[erosion] = json.loads((out / "manifest.json").read_text())["config"]
    assert hashes[0] != hashes[12]
    differing = {
        k for k in manifests[0] if manifests[0][k] != manifests[12][k] and k != "out"
    }
    assert differing == {"erosion"}


def test_augment_config_file_merging(toy_dataset: ToyDataset, tmp_path, capsys):
    config = tmp_path / "run.toml"
    config.write_text('erosion = 6\nseed = 3\n')
    out = tmp_path / "out"
    code, _ = run_cli(
        capsys,
        [
            "augment",
            "--coco", str(toy_dataset.coco_path),
            "--images", str(toy_dataset.images_dir),
            "--out", str(out),
            "--config", str(config),
            "--erosion", "3",  # explicit flag wins over the config file
        ],
    )
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["erosion"] == 3
    assert manifest["config"]["seed"] == 3  # config file beat the default


def test_augment_fold_mode(tmp_path, capsys):
    # fewshot-driven planning needs images on disk: build a small 8-class set
    from conftest import ToyDataset as TD

    toy = TD(tmp_path / "foldset")
    for c in range(8):
        toy.add_category(c + 1, f"class{c}")
    image_id = 1
    for c in range(8):
        for _ in range(3):
            toy.add_image(image_id, 120, 120, [(c + 1, 10, 10, 50, 50)])
            image_id += 1
    coco = toy.write()
    out = tmp_path / "out"
    code, payload = run_cli(
        capsys,
        [
            "augment",
            "--coco", str(coco),
            "--images", str(toy.images_dir),
            "--out", str(out),
            "--fold", "0",
            "--shots", "2",
            "--added", "4",
            "--seed", "5",
        ],
    )
    assert code == 0
    assert payload["report"]["succeeded"] == 4


# ---------------------------------------------------------------------------
# fewshot


def test_fewshot_hundred_entries(tmp_path, capsys):
    coco = make_cocoval_metadata(tmp_path / "val.json")
    code, payload = run_cli(
        capsys, ["fewshot", "--coco", str(coco), "--fold", "1", "--shots", "5"]
    )
    assert code == 0
    assert len(payload["entries"]) == 100
    assert len(payload["fold"]["class_ids"]) == 20
    assert payload["manifest"]["command"] == "fewshot"


def test_fewshot_insufficient_images_error(tmp_path, capsys):
    coco = make_cocoval_metadata(tmp_path / "val.json")
    code, payload = run_cli(
        capsys,
        ["fewshot", "--coco", str(coco), "--fold", "0", "--shots", "5",
         "--min-area", str(96 * 96)],
    )
    assert code == 1
    assert payload["error"]["type"] == "InsufficientImages"


# ---------------------------------------------------------------------------
# fidprep + cutouts


def test_fidprep_and_cutouts(toy_dataset: ToyDataset, tmp_path, capsys):
    out = tmp_path / "fid"
    code, payload = run_cli(
        capsys,
        [
            "fidprep",
            "--coco", str(toy_dataset.coco_path),
            "--images", str(toy_dataset.images_dir),
            "--out", str(out),
            "--seed", "2",
        ],
    )
    assert code == 0
    assert payload["images_processed"] == 4
    cut_out = tmp_path / "cut"
    code, payload = run_cli(
        capsys, ["cutouts", "--fidprep-dir", str(out), "--out", str(cut_out)]
    )
    assert code == 0
    assert payload["pairs_written"] > 0
    pngs = list((cut_out / "A").glob("*.png"))
    assert pngs
    sample = load_image(pngs[0])
    assert (sample.width, sample.height) == (256, 256)


# ---------------------------------------------------------------------------
# score


def test_score_identical_feature_files(tmp_path, capsys):
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(32, 6)).astype(np.float32)
    a = write_feature_file(tmp_path / "a.feat", rows)
    b = write_feature_file(tmp_path / "b.feat", rows)
    code, payload = run_cli(
        capsys, ["score", "--features-a", str(a), "--features-b", str(b)]
    )
    assert code == 0
    assert payload["fid"] <= 1e-8


def test_score_requires_inputs(capsys):
    code, payload = run_cli(capsys, ["score"])
    assert code == 1
    assert "error" in payload


def test_score_with_embeddings(tmp_path, capsys):
    from outline_forge.metrics import EmbeddingPair, write_embedding_pairs

    e = np.array([1.0, 0.0, 0.0])
    path = write_embedding_pairs(tmp_path / "emb.json", [EmbeddingPair(e, e, "cap")])
    code, payload = run_cli(capsys, ["score", "--embeddings", str(path)])
    assert code == 0
    assert payload["clip_score"] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# preview / validate


def test_preview_grid_layout(toy_dataset: ToyDataset, tmp_path, capsys):
    out = tmp_path / "grid.png"
    code, payload = run_cli(
        capsys,
        [
            "preview",
            "--coco", str(toy_dataset.coco_path),
            "--images", str(toy_dataset.images_dir),
            "--image-id", "1",
            "--class-id", "1",
            "--variants", "3",
            "--out", str(out),
        ],
    )
    assert code == 0
    assert payload["tiles"] == 2 + 3
    grid = load_image(out)
    assert grid.width == 5 * 256
    assert grid.height == 256


def test_validate_counts(toy_dataset: ToyDataset, capsys):
    code, payload = run_cli(capsys, ["validate", "--coco", str(toy_dataset.coco_path)])
    assert code == 0
    assert payload["images"] == 4
    assert payload["annotations"] == 5
    assert payload["categories"] == 2


def test_validate_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, payload = run_cli(capsys, ["validate", "--coco", str(bad)])
    assert code == 1
    assert payload["error"]["type"] == "MalformedJson"


# ---------------------------------------------------------------------------
# parser hygiene


def test_help_documents_flags(capsys):
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["augment", "--help"])
    text = capsys.readouterr().out
    for flag in ("--coco", "--erosion", "--prompt-template", "--no-negative",
                 "--backend-url", "--workers", "--noise-background"):
        assert flag in text


def test_unknown_flag_is_an_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["augment", "--nonsense", "1"])
    assert info.value.code != 0


def test_env_var_backend_url(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("OUTLINE_FORGE_BACKEND_URL", "http://127.0.0.1:9/")
    toy = ToyDataset(tmp_path / "one")
    toy.add_category(1, "bus")
    toy.add_image(1, 100, 100, [(1, 10, 10, 50, 50)])
    coco = toy.write()
    # http backend with an unreachable endpoint: the run must fail, proving
    # the env var was picked up as the default URL
    code, payload = run_cli(
        capsys,
        [
            "augment",
            "--coco", str(coco),
            "--images", str(toy.images_dir),
            "--out", str(tmp_path / "out"),
            "--backend", "http",
        ],
    )
    assert code == 1
    assert payload["error"]["type"] in ("FailureBudgetExceeded", "BackendUnreachable")
