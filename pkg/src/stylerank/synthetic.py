"""Synthetic corpus generation for tests, demos, and benchmarks.

Each image carries a latent style mixture drawn from a Dirichlet prior.
Simulated experts label the argmax of a noisy copy of that mixture, and
features are a (optionally projected) noisy copy of the mixture itself,
so the true style signal is linearly recoverable from the features while
the annotations disagree realistically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import (Annotation, AnnotationStore, Dataset, FeatureTable,
                      DEFAULT_STYLES, assign_splits)

FURNITURE_CLASSES = (
    "sofa", "sectional", "loveseat", "accent_chair", "recliner",
    "coffee_table", "end_table", "dining_table", "dining_chair", "bench",
    "bed", "nightstand", "dresser", "chest", "wardrobe",
    "bookcase", "tv_stand", "desk", "ottoman", "lamp",
)


@dataclass
class SyntheticCorpus:
    """Generated images with their hidden ground truth attached."""

    styles: tuple[str, ...]
    image_ids: list[str]
    latent: np.ndarray        # (n, L) style mixtures, rows sum to 1
    true_styles: np.ndarray   # (n,) argmax of the latent mixture
    annotations: list[Annotation]
    features: FeatureTable
    furniture: dict[str, tuple[str, list[str]]]  # item id -> (class, images)

    def store(self) -> AnnotationStore:
        return AnnotationStore(self.annotations, self.styles)

    def dataset(self, seed: int, fractions=(0.8, 0.1, 0.1)) -> Dataset:
        splits = assign_splits(self.image_ids, fractions, seed)
        return Dataset(self.features, self.store(), splits)

    def registry(self):
        """Furniture registry over the generated items, every image
        pre-validated as similar."""
        from . import compat

        items = [compat.FurnitureItem(fid, cls, tuple(imgs), f"/thumbs/{fid}.png")
                 for fid, (cls, imgs) in sorted(self.furniture.items())]
        registry = compat.FurnitureRegistry(items)
        for fid, (_, imgs) in sorted(self.furniture.items()):
            for img in imgs:
                registry.record_validation(img, fid, compat.SIMILAR)
        return registry


def generate_corpus(n_images: int, seed: int, *,
                    n_experts: int = 10,
                    styles=DEFAULT_STYLES,
                    d: int | None = None,
                    concentration: float = 0.3,
                    label_noise: float = 0.25,
                    feature_noise: float = 0.05,
                    images_per_item: int = 3) -> SyntheticCorpus:
    """Build a fully synthetic corpus.

    ``concentration`` is the symmetric Dirichlet parameter; small values
    give near-pure styles, larger values blur them. ``label_noise`` is
    the stddev of the per-expert perturbation before their argmax vote.
    ``d=None`` keeps features in the latent space (dimension L); larger
    ``d`` applies a fixed random linear map into that many dimensions.
    """
    if n_images < 1:
        raise ValueError("n_images must be at least 1")
    if n_experts < 1:
        raise ValueError("n_experts must be at least 1")
    if images_per_item < 1:
        raise ValueError("images_per_item must be at least 1")
    styles = tuple(styles)
    n_styles = len(styles)
    if d is not None and d < n_styles:
        raise ValueError(f"d must be at least {n_styles}")
    rng = np.random.default_rng(seed)

    latent = rng.dirichlet([concentration] * n_styles, size=n_images)
    true_styles = latent.argmax(axis=1)
    width = max(4, len(str(n_images - 1)))
    image_ids = [f"img-{k:0{width}d}" for k in range(n_images)]

    annotations: list[Annotation] = []
    for e in range(n_experts):
        noisy = latent + label_noise * rng.standard_normal(latent.shape)
        votes = noisy.argmax(axis=1)
        expert_id = f"expert-{e:02d}"
        for image_id, vote in zip(image_ids, votes):
            annotations.append(Annotation(image_id, expert_id, int(vote)))

    if d is None or d == n_styles:
        raw = latent + feature_noise * rng.standard_normal(latent.shape)
    else:
        projection = rng.standard_normal((n_styles, d)) / np.sqrt(n_styles)
        raw = latent @ projection + feature_noise * rng.standard_normal((n_images, d))
    features = FeatureTable(image_ids, raw.astype(np.float32))

    furniture: dict[str, tuple[str, list[str]]] = {}
    n_items = (n_images + images_per_item - 1) // images_per_item
    item_width = max(4, len(str(n_items - 1)))
    for k in range(n_items):
        fid = f"item-{k:0{item_width}d}"
        cls = FURNITURE_CLASSES[k % len(FURNITURE_CLASSES)]
        imgs = image_ids[k * images_per_item:(k + 1) * images_per_item]
        furniture[fid] = (cls, list(imgs))

    return SyntheticCorpus(styles, image_ids, latent, true_styles,
                           annotations, features, furniture)
