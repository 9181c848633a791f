"""Expert style annotations, dataset splits, and feature-vector storage.

Annotations arrive as JSON Lines rows of ``{"image_id", "expert_id",
"style"}``. Feature vectors live in a small binary container (magic
``STYF``) with a JSON-Lines fallback; dimensionality is always read from
the file, never assumed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, IngestError

DEFAULT_STYLES = ("modern", "traditional", "cottage", "coastal")
SPLITS = ("train", "validation", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)

_FEATURE_MAGIC = b"STYF"
_FEATURE_VERSION = 1


@dataclass(frozen=True)
class Annotation:
    """One expert's style label for one image."""

    image_id: str
    expert_id: str
    style: int


class AnnotationStore:
    """Immutable collection of annotations with per-image label counts.

    At most one annotation per (image, expert) pair; the constructor
    rejects duplicates.
    """

    def __init__(self, annotations: Iterable[Annotation],
                 styles: Sequence[str] = DEFAULT_STYLES):
        styles = tuple(styles)
        if len(styles) < 2:
            raise ValueError("need at least two styles")
        if len(set(s.lower() for s in styles)) != len(styles):
            raise ValueError("style names must be unique")
        self.styles = styles
        records: list[Annotation] = []
        counts: dict[str, np.ndarray] = {}
        experts: set[str] = set()
        seen: set[tuple[str, str]] = set()
        for ann in annotations:
            if not 0 <= ann.style < len(styles):
                raise IngestError(f"style index {ann.style} out of range")
            key = (ann.image_id, ann.expert_id)
            if key in seen:
                raise IngestError(
                    f"duplicate annotation for image {ann.image_id!r} "
                    f"by expert {ann.expert_id!r}")
            seen.add(key)
            records.append(ann)
            experts.add(ann.expert_id)
            row = counts.get(ann.image_id)
            if row is None:
                row = np.zeros(len(styles), dtype=np.int64)
                counts[ann.image_id] = row
            row[ann.style] += 1
        for row in counts.values():
            row.flags.writeable = False
        self.annotations = tuple(records)
        self.experts = frozenset(experts)
        self._counts = counts

    @property
    def num_styles(self) -> int:
        return len(self.styles)

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    def __len__(self) -> int:
        return len(self.annotations)

    def images(self) -> list[str]:
        """All annotated image ids in sorted order."""
        return sorted(self._counts)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._counts

    def label_counts(self, image_id: str) -> np.ndarray:
        """Per-style label counts for one image (read-only array)."""
        try:
            return self._counts[image_id]
        except KeyError:
            raise KeyError(f"image {image_id!r} has no annotations") from None

    def style_index(self, name: str) -> int:
        """Resolve a style name (case-insensitive) to its index."""
        lowered = name.lower()
        for idx, style in enumerate(self.styles):
            if style.lower() == lowered:
                return idx
        raise KeyError(f"unknown style {name!r}")


def style_index(styles: Sequence[str], name: str) -> int:
    lowered = name.lower()
    for idx, style in enumerate(styles):
        if style.lower() == lowered:
            return idx
    raise KeyError(f"unknown style {name!r}")


def ingest_annotations(lines: Iterable[str],
                       styles: Sequence[str] = DEFAULT_STYLES) -> AnnotationStore:
    """Parse a JSON-Lines annotation stream into a store.

    Malformed rows, unknown style names, and duplicate (image, expert)
    pairs raise :class:`IngestError` carrying the 1-based line number.
    Blank lines are skipped.
    """
    styles = tuple(styles)
    lookup = {name.lower(): idx for idx, name in enumerate(styles)}
    records: list[Annotation] = []
    seen: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(row, dict):
            raise IngestError(f"line {lineno}: expected a JSON object")
        try:
            image_id = row["image_id"]
            expert_id = row["expert_id"]
            style_name = row["style"]
        except KeyError as exc:
            raise IngestError(
                f"line {lineno}: missing field {exc.args[0]!r}") from None
        if not all(isinstance(v, str) for v in (image_id, expert_id, style_name)):
            raise IngestError(
                f"line {lineno}: image_id, expert_id, and style must be strings")
        style = lookup.get(style_name.lower())
        if style is None:
            raise IngestError(f"line {lineno}: unknown style {style_name!r}")
        key = (image_id, expert_id)
        if key in seen:
            raise IngestError(
                f"line {lineno}: duplicate annotation for image "
                f"{image_id!r} by expert {expert_id!r}")
        seen.add(key)
        records.append(Annotation(image_id, expert_id, style))
    return AnnotationStore(records, styles)


def load_annotations(path, styles: Sequence[str] = DEFAULT_STYLES) -> AnnotationStore:
    with open(path, "r", encoding="utf-8") as fh:
        return ingest_annotations(fh, styles)


def save_annotations(store: AnnotationStore, path) -> None:
    """Write annotations back out as JSON Lines in ingestion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for ann in store.annotations:
            fh.write(json.dumps({"image_id": ann.image_id,
                                 "expert_id": ann.expert_id,
                                 "style": store.styles[ann.style]},
                                sort_keys=True) + "\n")


def assign_splits(image_ids: Iterable[str],
                  fractions: Sequence[float] = DEFAULT_FRACTIONS,
                  seed: int = 0) -> dict[str, str]:
    """Deterministically assign images to train/validation/test splits.

    Sorted ids are shuffled with a seeded generator and cut at boundaries
    obtained by rounding the cumulative fractions, so realized sizes stay
    within one image of the targets.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLITS):
        raise ValueError(f"expected {len(SPLITS)} split fractions")
    if any(f < 0.0 for f in fractions):
        raise ValueError("split fractions must be nonnegative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    ids = sorted(image_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids")
    positive = sum(1 for f in fractions if f > 0.0)
    if len(ids) < positive:
        raise ValueError(
            f"{len(ids)} images cannot populate {positive} nonempty splits")
    n = len(ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    bounds: list[int] = []
    cum = 0.0
    for f in fractions[:-1]:
        cum += f
        # round half up so 10 images at 0.8/0.1/0.1 give 8/1/1
        bounds.append(int(np.floor(cum * n + 0.5)))
    bounds.append(n)
    assignment: dict[str, str] = {}
    start = 0
    for split, stop in zip(SPLITS, bounds):
        for k in order[start:stop]:
            assignment[ids[k]] = split
        start = stop
    return assignment


def save_splits(assignment: Mapping[str, str], path) -> None:
    groups = {split: sorted(i for i, s in assignment.items() if s == split)
              for split in SPLITS}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(groups, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_splits(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        groups = json.load(fh)
    assignment: dict[str, str] = {}
    for split, ids in groups.items():
        if split not in SPLITS:
            raise FormatError(f"unknown split name {split!r}")
        for image_id in ids:
            if image_id in assignment:
                raise FormatError(f"image {image_id!r} appears in two splits")
            assignment[image_id] = split
    return assignment


@dataclass(frozen=True)
class ValidationSetSpec:
    """Per-style minimum label counts for validation-set membership."""

    l_min: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "l_min", tuple(int(v) for v in self.l_min))
        if not self.l_min:
            raise ValueError("l_min must not be empty")
        if any(v < 1 for v in self.l_min):
            raise ValueError("every minimum count must be at least 1")

    @classmethod
    def all_ones(cls, n_styles: int) -> "ValidationSetSpec":
        """Loosest spec: membership needs a single label."""
        return cls((1,) * n_styles)

    @classmethod
    def high_agreement(cls) -> "ValidationSetSpec":
        """Strict per-style minimums for the canonical four styles, tuned
        so that members carry a near-unanimous label."""
        return cls((10, 8, 7, 7))


def build_style_set(store: AnnotationStore, spec: ValidationSetSpec,
                    single_label: bool = False) -> set[tuple[str, int]]:
    """Collect (image_id, style) memberships meeting the per-style minimums.

    With ``single_label=True`` an image keeps only the style holding the
    strict maximum of its counts; tied maxima exclude the image entirely,
    so each member carries exactly one ground-truth style.
    """
    if len(spec.l_min) != store.num_styles:
        raise ValueError(
            f"spec covers {len(spec.l_min)} styles, store has {store.num_styles}")
    if store.annotations and max(spec.l_min) > store.num_experts:
        raise ValueError(
            f"minimum count {max(spec.l_min)} exceeds the "
            f"{store.num_experts} annotating experts")
    members: set[tuple[str, int]] = set()
    for image_id in store.images():
        counts = store.label_counts(image_id)
        if single_label:
            winners = np.flatnonzero(counts == counts.max())
            if len(winners) != 1:
                continue
            style = int(winners[0])
            if counts[style] >= spec.l_min[style]:
                members.add((image_id, style))
        else:
            for style in range(store.num_styles):
                if counts[style] >= spec.l_min[style]:
                    members.add((image_id, style))
    return members


def save_style_set(members: set[tuple[str, int]], styles: Sequence[str], path) -> None:
    rows = [{"image_id": i, "style": styles[s]} for i, s in sorted(members)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_style_set(path, styles: Sequence[str] = DEFAULT_STYLES) -> set[tuple[str, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    return {(row["image_id"], style_index(styles, row["style"])) for row in rows}


class FeatureTable:
    """Image feature vectors held as one contiguous float32 matrix."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        ids = tuple(ids)
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError("matrix must have shape (len(ids), d)")
        if matrix.shape[1] < 1:
            raise ValueError("feature dimension must be at least 1")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("feature values must be finite")
        matrix.flags.writeable = False
        self.ids = ids
        self.matrix = matrix
        self._rows = {image_id: k for k, image_id in enumerate(ids)}

    @property
    def d(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._rows

    def row(self, image_id: str) -> int:
        try:
            return self._rows[image_id]
        except KeyError:
            raise KeyError(f"no features for image {image_id!r}") from None

    def vector(self, image_id: str) -> np.ndarray:
        return self.matrix[self.row(image_id)]

    def subset(self, ids: Sequence[str]) -> "FeatureTable":
        """New table restricted to ``ids``, preserving their order."""
        rows = [self.row(i) for i in ids]
        return FeatureTable(ids, self.matrix[rows])


def save_features(table: FeatureTable, path) -> None:
    """Write the binary feature container.

    Layout: magic, u32 version, u64 count, u32 dimension, then per record
    a u16 id length, the UTF-8 id, and d little-endian float32 values.
    """
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<IQI", _FEATURE_VERSION, len(table), table.d))
        for image_id, row in zip(table.ids, table.matrix):
            encoded = image_id.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"image id too long: {image_id!r}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(row.astype("<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated feature file while reading {what}")
    return buf


def _load_features_binary(fh) -> FeatureTable:
    version, count, dim = struct.unpack("<IQI", _read_exact(fh, 16, "header"))
    if version != _FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    if dim < 1:
        raise FormatError("feature dimension must be at least 1")
    ids: list[str] = []
    matrix = np.empty((count, dim), dtype=np.float32)
    for k in range(count):
        (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {k} id length"))
        ids.append(_read_exact(fh, id_len, f"record {k} id").decode("utf-8"))
        raw = _read_exact(fh, 4 * dim, f"record {k} features")
        matrix[k] = np.frombuffer(raw, dtype="<f4")
    if fh.read(1):
        raise FormatError("trailing bytes after the last feature record")
    try:
        return FeatureTable(ids, matrix)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def _load_features_jsonl(path) -> FeatureTable:
    ids: list[str] = []
    rows: list[list[float]] = []
    dim: int | None = None
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
                image_id = row["image_id"]
                values = row["features"]
            except (TypeError, KeyError):
                raise FormatError(
                    f"line {lineno}: expected an object with image_id and features") from None
            if not isinstance(values, list) or not values:
                raise FormatError(f"line {lineno}: features must be a nonempty list")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise FormatError(
                    f"line {lineno}: dimension {len(values)} differs from {dim}")
            ids.append(image_id)
            rows.append(values)
    if not ids:
        raise FormatError("feature file contains no records")
    try:
        return FeatureTable(ids, np.array(rows, dtype=np.float32))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def load_features(path) -> FeatureTable:
    """Load a feature table, sniffing binary vs JSON-Lines by magic."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic == _FEATURE_MAGIC:
            return _load_features_binary(fh)
    return _load_features_jsonl(path)


@dataclass(frozen=True)
class ImageRecord:
    """One image joined across features, split, and optional furniture link."""

    image_id: str
    features: np.ndarray
    split: str
    furniture_id: str | None = None


@dataclass
class Dataset:
    """Features, annotations, and split assignment for one corpus."""

    features: FeatureTable
    annotations: AnnotationStore
    splits: Mapping[str, str]

    def split_images(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return sorted(i for i, s in self.splits.items() if s == split)

    def record(self, image_id: str, furniture_id: str | None = None) -> ImageRecord:
        split = self.splits.get(image_id)
        if split is None:
            raise KeyError(f"image {image_id!r} has no split assignment")
        return ImageRecord(image_id, self.features.vector(image_id), split, furniture_id)

    def clean_truth(self, split: str, spec: ValidationSetSpec | None = None
                    ) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Features and single ground-truth styles for one split.

        Membership defaults to the loosest spec with ``single_label``
        semantics, i.e. the plurality expert vote with ties excluded.
        Only images present in the feature table are returned.
        """
        if spec is None:
            spec = ValidationSetSpec.all_ones(self.annotations.num_styles)
        members = build_style_set(self.annotations, spec, single_label=True)
        truth = dict(members)
        ids = [i for i in self.split_images(split)
               if i in truth and i in self.features]
        x = np.array([self.features.vector(i) for i in ids], dtype=np.float64)
        y = np.array([truth[i] for i in ids], dtype=np.int64)
        if not ids:
            x = np.empty((0, self.features.d), dtype=np.float64)
        return x, y, ids


def save_store(store: AnnotationStore, splits: Mapping[str, str], path,
               seed: int | None = None,
               fractions: Sequence[float] | None = None) -> None:
    """Persist annotations plus split assignment as one JSON document."""
    payload = {
        "format": "stylerank-store",
        "version": 1,
        "styles": list(store.styles),
        "seed": seed,
        "fractions": list(fractions) if fractions is not None else None,
        "annotations": [[a.image_id, a.expert_id, a.style]
                        for a in store.annotations],
        "splits": {split: sorted(i for i, s in splits.items() if s == split)
                   for split in SPLITS},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_store(path) -> tuple[AnnotationStore, dict[str, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != "stylerank-store":
        raise FormatError(f"{path} is not a stylerank store file")
    if payload.get("version") != 1:
        raise FormatError(f"unsupported store version {payload.get('version')}")
    styles = tuple(payload["styles"])
    records = [Annotation(i, e, s) for i, e, s in payload["annotations"]]
    store = AnnotationStore(records, styles)
    assignment: dict[str, str] = {}
    for split, ids in payload["splits"].items():
        for image_id in ids:
            assignment[image_id] = split
    return store, assignment
