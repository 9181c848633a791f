"""Generation and sampling of pairwise style-comparison labels.

A comparison records that one image received strictly more expert labels
for a style than another, by a margin greater than a threshold ``t``.
Pairs where either image has no label for the style are discarded, as
are pairs within the margin. Every stored label is canonical: the
lexicographically smaller image id comes first and the sign follows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import DEFAULT_STYLES, AnnotationStore, style_index
from .errors import FormatError, SparsePopulationError, StyleRankError

DEFAULT_THRESHOLD = 3      # widest margin still leaving enough pairs; best observed
ENUMERATION_CAP = 1000     # the brute-force oracle is quadratic on purpose
REJECTION_FACTOR = 1000    # draw budget per requested comparison
_CHUNK = 1024


@dataclass(frozen=True)
class ComparisonLabel:
    """Signed style-order judgment between two images (canonical i < j)."""

    i: str
    j: str
    style: int
    y: int


@dataclass(frozen=True)
class ComparisonConfig:
    """Knobs for comparison sampling."""

    t: int = DEFAULT_THRESHOLD
    n_c: int = 1
    seed: int = 0
    split: str | None = "train"

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("threshold t must be nonnegative")
        if self.n_c < 1:
            raise ValueError("n_c must be at least 1")


def eligible_pair(counts_i: Sequence[int], counts_j: Sequence[int],
                  style: int, t: int) -> int | None:
    """Label (+1/-1) for an ordered image pair, or None when discarded.

    Both images need at least one label for the style, and the count
    difference must strictly exceed ``t``.
    """
    if t < 0:
        raise ValueError("threshold t must be nonnegative")
    ci = int(counts_i[style])
    cj = int(counts_j[style])
    if ci < 1 or cj < 1:
        return None
    if ci - cj > t:
        return 1
    if cj - ci > t:
        return -1
    return None


def _split_images(store: AnnotationStore, split: str | None,
                  splits: Mapping[str, str] | None) -> list[str]:
    images = store.images()
    if split is None:
        return images
    if splits is None:
        raise ValueError("filtering by split requires a split assignment")
    for image_id in images:
        if image_id not in splits:
            raise ValueError(f"image {image_id!r} has no split assignment")
    return [i for i in images if splits[i] == split]


def _counts_matrix(store: AnnotationStore, images: Sequence[str]) -> np.ndarray:
    mat = np.zeros((len(images), store.num_styles), dtype=np.int64)
    for k, image_id in enumerate(images):
        mat[k] = store.label_counts(image_id)
    return mat


def _population_per_style(counts: np.ndarray, style: int, t: int) -> int:
    vals = counts[:, style]
    vals = vals[vals >= 1]
    if len(vals) < 2:
        return 0
    ordered = np.sort(vals)
    # for each potential winner, count images losing by more than t
    return int(np.searchsorted(ordered, vals - t, side="left").sum())


def count_eligible(store: AnnotationStore, t: int, *,
                   split: str | None = None,
                   splits: Mapping[str, str] | None = None) -> int:
    """Exact size of the eligible comparison population, all styles,
    without materializing any pairs."""
    if t < 0:
        raise ValueError("threshold t must be nonnegative")
    images = _split_images(store, split, splits)
    counts = _counts_matrix(store, images)
    return sum(_population_per_style(counts, style, t)
               for style in range(store.num_styles))


def enumerate_comparisons(store: AnnotationStore, style: int, t: int, *,
                          split: str | None = None,
                          splits: Mapping[str, str] | None = None,
                          cap: int = ENUMERATION_CAP) -> list[ComparisonLabel]:
    """Brute-force the complete comparison set for one style.

    Oracle-grade and quadratic; refuses more than ``cap`` images.
    """
    if not 0 <= style < store.num_styles:
        raise ValueError(f"style index {style} out of range")
    images = _split_images(store, split, splits)
    if len(images) > cap:
        raise StyleRankError(
            f"{len(images)} images exceed the enumeration cap of {cap}")
    gated = sorted(i for i in images if store.label_counts(i)[style] >= 1)
    out: list[ComparisonLabel] = []
    for a, b in combinations(gated, 2):
        y = eligible_pair(store.label_counts(a), store.label_counts(b), style, t)
        if y is not None:
            out.append(ComparisonLabel(a, b, style, y))
    return out


def sample_comparisons(store: AnnotationStore, config: ComparisonConfig,
                       splits: Mapping[str, str] | None = None
                       ) -> list[ComparisonLabel]:
    """Sample comparison labels uniformly without replacement.

    Draws (image, image, style) triples by rejection so the pairwise
    population is never materialized, and returns exactly
    ``min(n_c, population)`` labels. Raises SparsePopulationError when
    the population is empty or the draw budget runs out first.
    """
    images = _split_images(store, config.split, splits)
    counts = _counts_matrix(store, images)
    population = sum(_population_per_style(counts, style, config.t)
                     for style in range(store.num_styles))
    if population == 0:
        raise SparsePopulationError(
            f"no eligible comparison pairs at threshold {config.t}")
    target = min(config.n_c, population)
    budget = REJECTION_FACTOR * config.n_c
    rng = np.random.default_rng(config.seed)
    n = len(images)
    n_styles = store.num_styles
    seen: set[tuple[int, int, int]] = set()
    out: list[ComparisonLabel] = []
    draws = 0
    while len(out) < target:
        if draws >= budget:
            raise SparsePopulationError(
                f"collected {len(out)} of {target} comparisons "
                f"after {draws} draws; population too sparse")
        take = min(_CHUNK, budget - draws)
        ii = rng.integers(0, n, size=take)
        jj = rng.integers(0, n, size=take)
        ss = rng.integers(0, n_styles, size=take)
        draws += take
        for a, b, style in zip(ii, jj, ss):
            if a == b:
                continue
            ca = counts[a, style]
            cb = counts[b, style]
            if ca < 1 or cb < 1:
                continue
            diff = int(ca - cb)
            if abs(diff) <= config.t:
                continue
            if images[b] < images[a]:
                a, b = b, a
                diff = -diff
            key = (int(a), int(b), int(style))
            if key in seen:
                continue
            seen.add(key)
            out.append(ComparisonLabel(images[a], images[b], int(style),
                                       1 if diff > 0 else -1))
            if len(out) == target:
                break
    return out


def save_comparisons(labels: Iterable[ComparisonLabel],
                     styles: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(json.dumps({"i": label.i, "j": label.j,
                                 "style": styles[label.style],
                                 "y": label.y}, sort_keys=True) + "\n")


def load_comparisons(path, styles: Sequence[str] = DEFAULT_STYLES
                     ) -> list[ComparisonLabel]:
    out: list[ComparisonLabel] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                i, j, style_name, y = row["i"], row["j"], row["style"], row["y"]
            except (TypeError, KeyError):
                raise FormatError(
                    f"line {lineno}: expected an object with i, j, style, y") from None
            if y not in (1, -1):
                raise FormatError(f"line {lineno}: y must be +1 or -1, got {y!r}")
            if i == j:
                raise FormatError(f"line {lineno}: compared image with itself")
            try:
                style = style_index(styles, style_name)
            except KeyError:
                raise FormatError(f"line {lineno}: unknown style {style_name!r}") from None
            out.append(ComparisonLabel(i, j, style, int(y)))
    return out
