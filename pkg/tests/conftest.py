"""Shared fixtures and small builders for the test suite."""

from __future__ import annotations

import contextlib
import io
from pathlib import Path

import numpy as np
import pytest

from stylerank import cli, compat, synthetic
from stylerank.dataset import (Annotation, AnnotationStore, DEFAULT_STYLES,
                               FeatureTable)


def store_from_counts(counts: dict[str, tuple[int, ...]],
                      styles=DEFAULT_STYLES) -> AnnotationStore:
    """Build a store whose per-image label counts equal ``counts``.

    Experts are assigned left to right, so an image with counts
    (2, 1, 0, 0) gets expert-00/01 voting style 0 and expert-02 style 1.
    """
    annotations = []
    for image_id in sorted(counts):
        expert = 0
        for style, count in enumerate(counts[image_id]):
            for _ in range(count):
                annotations.append(
                    Annotation(image_id, f"expert-{expert:02d}", style))
                expert += 1
    return AnnotationStore(annotations, styles)


def random_index(n_items: int, seed: int, max_images: int = 5,
                 n_classes: int = 4, dim: int = 16
                 ) -> tuple[compat.CompatibilityIndex, compat.FurnitureRegistry,
                            FeatureTable]:
    """A compatibility index over random embeddings, plus its inputs."""
    rng = np.random.default_rng(seed)
    items = []
    image_ids = []
    registry_rows = []
    for k in range(n_items):
        fid = f"unit-{k:03d}"
        n_imgs = int(rng.integers(1, max_images + 1))
        imgs = tuple(f"{fid}-img-{p}" for p in range(n_imgs))
        image_ids.extend(imgs)
        cls = f"class-{k % n_classes}"
        items.append(compat.FurnitureItem(fid, cls, imgs, f"/t/{fid}.png"))
        registry_rows.append((fid, imgs))
    registry = compat.FurnitureRegistry(items)
    for fid, imgs in registry_rows:
        for img in imgs:
            registry.record_validation(img, fid, compat.SIMILAR)
    matrix = rng.standard_normal((len(image_ids), dim)).astype(np.float32)
    table = FeatureTable(image_ids, matrix)
    return compat.build_index(registry, table), registry, table


class BufferCapture:
    """Stand-in for capsys where fixture scoping rules it out."""

    def __init__(self):
        self._out = io.StringIO()
        self._err = io.StringIO()

    def __enter__(self):
        self._ctx = [contextlib.redirect_stdout(self._out),
                     contextlib.redirect_stderr(self._err)]
        for c in self._ctx:
            c.__enter__()
        return self

    def __exit__(self, *exc):
        for c in reversed(self._ctx):
            c.__exit__(*exc)
        return False

    def readouterr(self):
        out = self._out.getvalue()
        err = self._err.getvalue()
        self._out.seek(0), self._out.truncate()
        self._err.seek(0), self._err.truncate()
        return type("Captured", (), {"out": out, "err": err})()


# one pinned pipeline shared by the CLI tests, the determinism acceptance
# check, and the committed golden evaluation report
PIPELINE_SEEDS = {"synth": 404, "ingest": 405, "comparisons": 406, "train": 407}


def run_pipeline(root: Path, cap) -> dict[str, Path]:
    """Drive synth through build-index with the pinned seeds; ``cap``
    must offer a capsys-style readouterr()."""
    paths = {
        "annotations": root / "annotations.jsonl",
        "features": root / "features.styf",
        "registry": root / "registry.json",
        "store": root / "store.json",
        "comparisons": root / "comparisons.jsonl",
        "model": root / "model.ckpt",
        "metrics": root / "metrics.jsonl",
        "embeddings": root / "embeddings.styf",
        "index": root / "index.styx",
    }
    steps = [
        ["synth", "--n", 60, "--seed", PIPELINE_SEEDS["synth"], "--d", 8,
         "--images-per-item", 2, "--out-dir", root],
        ["ingest", "--annotations", paths["annotations"],
         "--seed", PIPELINE_SEEDS["ingest"], "--out", paths["store"]],
        ["gen-comparisons", "--store", paths["store"], "--t", 3, "--n", 300,
         "--seed", PIPELINE_SEEDS["comparisons"], "--out", paths["comparisons"]],
        ["train", "--store", paths["store"], "--features", paths["features"],
         "--comparisons", paths["comparisons"], "--seed", PIPELINE_SEEDS["train"],
         "--epochs", 6, "--batch-size", 64, "--learning-rate", 1e-3,
         "--l2", 2e-4, "--metrics", paths["metrics"], "--out", paths["model"]],
        ["embed", "--model", paths["model"], "--features", paths["features"],
         "--out", paths["embeddings"]],
        ["build-index", "--registry", paths["registry"],
         "--embeddings", paths["embeddings"], "--out", paths["index"]],
    ]
    for argv in steps:
        code = cli.main([str(a) for a in argv])
        captured = cap.readouterr()
        assert code == 0, f"{argv[0]} failed: {captured.err}"
    return paths


@pytest.fixture(scope="session")
def small_corpus() -> synthetic.SyntheticCorpus:
    return synthetic.generate_corpus(90, seed=71, d=None, images_per_item=3)


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    return small_corpus.dataset(seed=17)
