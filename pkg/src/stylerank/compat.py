"""Furniture catalog, visual-validation records, and the precomputed
style-compatibility index behind every ranking query.

Compatibility distances are float32 end to end: on-demand queries and
the packed index matrix share a single code path, so stored entries
reproduce a fresh computation bit for bit. The item distance is the
minimum Euclidean embedding distance over all cross pairs of the two
items' validated images; it deliberately satisfies no triangle
inequality.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import FeatureTable
from .errors import (FormatError, StaleIndexError, UnknownItemError,
                     UnrankableItemError)

SIMILAR = "similar"
NOT_SIMILAR = "not_similar"
UNKNOWN = "unknown"
STATUSES = (SIMILAR, NOT_SIMILAR, UNKNOWN)

_INDEX_MAGIC = b"STYX"
_INDEX_VERSION = 1
_MANIFEST_SUFFIX = ".manifest.json"


@dataclass(frozen=True)
class FurnitureItem:
    """A catalog product with its photo set."""

    furniture_id: str
    class_name: str
    image_ids: tuple[str, ...]
    thumbnail: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValueError(f"item {self.furniture_id!r} lists an image twice")


class FurnitureRegistry:
    """Catalog of furniture items plus per-image validation statuses.

    Every mutation bumps ``generation`` so an index built earlier can be
    recognized as stale.
    """

    def __init__(self, items: Iterable[FurnitureItem]):
        self.items: dict[str, FurnitureItem] = {}
        for item in items:
            if item.furniture_id in self.items:
                raise ValueError(f"duplicate furniture id {item.furniture_id!r}")
            self.items[item.furniture_id] = item
        self._status: dict[tuple[str, str], str] = {}
        self.generation = 0

    def __len__(self) -> int:
        return len(self.items)

    def item(self, furniture_id: str) -> FurnitureItem:
        try:
            return self.items[furniture_id]
        except KeyError:
            raise UnknownItemError(f"unknown furniture id {furniture_id!r}") from None

    def _require_pair(self, image_id: str, furniture_id: str) -> None:
        item = self.item(furniture_id)
        if image_id not in item.image_ids:
            raise UnknownItemError(
                f"image {image_id!r} does not belong to {furniture_id!r}")

    def status(self, image_id: str, furniture_id: str) -> str:
        """Validation status of one (image, furniture) pair; defaults to
        unknown until somebody records a judgment."""
        self._require_pair(image_id, furniture_id)
        return self._status.get((image_id, furniture_id), UNKNOWN)

    def record_validation(self, image_id: str, furniture_id: str,
                          status: str) -> None:
        """Store a visual-similarity judgment; the last write wins."""
        if status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}, got {status!r}")
        self._require_pair(image_id, furniture_id)
        self._status[(image_id, furniture_id)] = status
        self.generation += 1

    def validated_images(self, furniture_id: str) -> tuple[str, ...]:
        """Images of the item confirmed similar, in sorted order."""
        item = self.item(furniture_id)
        return tuple(sorted(
            i for i in item.image_ids
            if self._status.get((i, furniture_id)) == SIMILAR))

    def rankable_ids(self) -> list[str]:
        """Sorted ids of items with at least one validated image."""
        return sorted(fid for fid in self.items if self.validated_images(fid))

    def validations(self) -> list[tuple[str, str, str]]:
        """All recorded judgments as sorted (image, furniture, status)."""
        return sorted((i, f, s) for (i, f), s in self._status.items())


def save_registry(registry: FurnitureRegistry, path) -> None:
    payload = {
        "format": "stylerank-registry",
        "version": 1,
        "furniture": [
            {"id": item.furniture_id, "class": item.class_name,
             "images": list(item.image_ids), "thumbnail": item.thumbnail}
            for _, item in sorted(registry.items.items())
        ],
        "validations": [
            {"image": i, "furniture": f, "status": s}
            for i, f, s in registry.validations()
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_registry(path) -> FurnitureRegistry:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "furniture" not in payload:
        raise FormatError(f"{path} is not a furniture registry")
    try:
        items = [FurnitureItem(row["id"], row["class"], tuple(row["images"]),
                               row.get("thumbnail"))
                 for row in payload["furniture"]]
        registry = FurnitureRegistry(items)
        for row in payload.get("validations", []):
            image, furniture, status = row["image"], row["furniture"], row["status"]
            if status not in STATUSES:
                raise FormatError(f"unknown validation status {status!r}")
            registry._require_pair(image, furniture)
            # restored judgments do not advance the generation counter
            registry._status[(image, furniture)] = status
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed registry: {exc}") from exc
    except UnknownItemError as exc:
        raise FormatError(f"malformed registry: {exc}") from exc
    return registry


def embedding_distance(e_i: np.ndarray, e_j: np.ndarray) -> float:
    """Euclidean distance between two embeddings in float32, the index's
    native precision."""
    a = np.asarray(e_i, dtype=np.float32)
    b = np.asarray(e_j, dtype=np.float32)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError("embeddings must be two vectors of equal length")
    diff = a - b
    return float(np.sqrt((diff * diff).sum(dtype=np.float32)))


def _min_cross_distance(a: np.ndarray, b: np.ndarray) -> float:
    # the one and only distance computation; index builds and on-demand
    # queries must agree bitwise, so nothing else may reimplement this
    diff = a[:, None, :] - b[None, :, :]
    d2 = (diff * diff).sum(axis=2, dtype=np.float32)
    return float(np.sqrt(d2.min()))


def _triangle_offset(n: int, i: int, j: int) -> int:
    # packed upper triangle, row-major, diagonal excluded; needs i < j
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


@dataclass
class CompatibilityIndex:
    """Precomputed pairwise item distances plus everything needed to
    recompute them: validated image sets and their embeddings."""

    item_ids: tuple[str, ...]                 # rankable, sorted
    classes: dict[str, str]                   # every item, rankable or not
    thumbnails: dict[str, str | None]
    validated: dict[str, tuple[str, ...]]     # rankable id -> image ids
    embeddings: FeatureTable                  # validated images only
    triangle: np.ndarray                      # packed f32 upper triangle
    unrankable: tuple[str, ...]               # sorted
    generation: int = 0
    _pos: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.item_ids = tuple(self.item_ids)
        self.unrankable = tuple(self.unrankable)
        n = len(self.item_ids)
        self.triangle = np.ascontiguousarray(self.triangle, dtype=np.float32)
        if self.triangle.shape != (n * (n - 1) // 2,):
            raise ValueError("triangle length does not match the item count")
        self._pos = {fid: k for k, fid in enumerate(self.item_ids)}

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def has_item(self, furniture_id: str) -> bool:
        return furniture_id in self.classes

    def is_rankable(self, furniture_id: str) -> bool:
        return furniture_id in self._pos

    def _require_rankable(self, furniture_id: str) -> int:
        pos = self._pos.get(furniture_id)
        if pos is None:
            if furniture_id in self.classes:
                raise UnrankableItemError(
                    f"furniture {furniture_id!r} has no validated images")
            raise UnknownItemError(f"unknown furniture id {furniture_id!r}")
        return pos

    def distance(self, a: str, b: str) -> float:
        """Precomputed item distance; an item is at distance 0 from itself."""
        ia = self._require_rankable(a)
        ib = self._require_rankable(b)
        if ia == ib:
            return 0.0
        if ia > ib:
            ia, ib = ib, ia
        return float(self.triangle[_triangle_offset(self.n_items, ia, ib)])

    def _validated_matrix(self, furniture_id: str) -> np.ndarray:
        rows = [self.embeddings.row(i) for i in self.validated[furniture_id]]
        return self.embeddings.matrix[rows]

    def class_names(self) -> list[str]:
        return sorted(set(self.classes.values()))

    def items_of_class(self, class_name: str) -> list[str]:
        """Rankable ids of one class; the class itself must exist
        somewhere in the catalog."""
        if class_name not in set(self.classes.values()):
            raise UnknownItemError(f"unknown furniture class {class_name!r}")
        return [fid for fid in self.item_ids if self.classes[fid] == class_name]

    def catalog_ids(self) -> list[str]:
        return sorted(self.classes)


def furniture_distance(index: CompatibilityIndex, a: str, b: str) -> float:
    """Minimum embedding distance across the items' validated image sets,
    recomputed on demand from the stored embeddings."""
    index._require_rankable(a)
    index._require_rankable(b)
    if a == b:
        return 0.0
    return _min_cross_distance(index._validated_matrix(a),
                               index._validated_matrix(b))


def build_index(registry: FurnitureRegistry,
                embeddings: FeatureTable) -> CompatibilityIndex:
    """Precompute the symmetric distance matrix over rankable items.

    Items without validated images stay out of the matrix but remain in
    the catalog metadata; every validated image must have an embedding.
    """
    rankable = registry.rankable_ids()
    validated: dict[str, tuple[str, ...]] = {}
    for fid in rankable:
        imgs = registry.validated_images(fid)
        for img in imgs:
            if img not in embeddings:
                raise UnknownItemError(
                    f"no embedding for validated image {img!r} of {fid!r}")
        validated[fid] = imgs
    needed = sorted({img for imgs in validated.values() for img in imgs})
    table = embeddings.subset(needed) if needed else FeatureTable(
        [], np.zeros((0, embeddings.d), dtype=np.float32))
    mats = {fid: table.matrix[[table.row(i) for i in imgs]]
            for fid, imgs in validated.items()}
    n = len(rankable)
    triangle = np.zeros(n * (n - 1) // 2, dtype=np.float32)
    pos = 0
    for ia in range(n):
        left = mats[rankable[ia]]
        for ib in range(ia + 1, n):
            triangle[pos] = _min_cross_distance(left, mats[rankable[ib]])
            pos += 1
    unrankable = tuple(sorted(set(registry.items) - set(rankable)))
    classes = {fid: item.class_name for fid, item in registry.items.items()}
    thumbnails = {fid: item.thumbnail for fid, item in registry.items.items()}
    return CompatibilityIndex(tuple(rankable), classes, thumbnails, validated,
                              table, triangle, unrankable, registry.generation)


def rank_single_seed(index: CompatibilityIndex, seed_id: str,
                     class_name: str, k: int) -> list[tuple[str, float]]:
    """Rankable items of one class, nearest to the seed item first.

    The seed itself is excluded; distance ties break by id. Fewer than
    ``k`` candidates just means a shorter list.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    index._require_rankable(seed_id)
    candidates = [c for c in index.items_of_class(class_name) if c != seed_id]
    scored = sorted((index.distance(seed_id, c), c) for c in candidates)
    return [(fid, dist) for dist, fid in scored[:k]]


def rank_multi_seed(index: CompatibilityIndex, scene: Sequence[str],
                    class_name: str, k: int) -> list[tuple[str, float]]:
    """Candidates sorted by summed distance to every scene placement.

    Duplicate placements count twice; scene members never suggest
    themselves. An empty scene is an error (rank from a single seed or
    browse the catalog instead).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    scene = list(scene)
    if not scene:
        raise ValueError("scene is empty; use a single-seed ranking or the catalog")
    for fid in scene:
        index._require_rankable(fid)
    exclude = set(scene)
    candidates = [c for c in index.items_of_class(class_name) if c not in exclude]
    scored = []
    for c in candidates:
        total = 0.0
        for fid in scene:  # summed in placement order for reproducibility
            total += index.distance(c, fid)
        scored.append((total, c))
    scored.sort()
    return [(fid, dist) for dist, fid in scored[:k]]


def scene_energy(index: CompatibilityIndex, scene: Sequence[str]) -> float:
    """Sum of distances over unordered placement pairs, each counted
    once; empty and single-item scenes have zero energy."""
    scene = list(scene)
    for fid in scene:
        index._require_rankable(fid)
    total = 0.0
    for p in range(len(scene)):
        for q in range(p + 1, len(scene)):
            total += index.distance(scene[p], scene[q])
    return total


def check_generation(index: CompatibilityIndex, generation: int | None) -> None:
    """Raise StaleIndexError when a caller pins a generation the index
    does not match; None means the caller does not care."""
    if generation is not None and generation != index.generation:
        raise StaleIndexError(
            f"requested generation {generation}, index has {index.generation}")


def _write_str(fh, value: str) -> None:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long for the index format: {value!r}")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _index_read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated index file while reading {what}")
    return buf


def _read_str(fh, what: str) -> str:
    (length,) = struct.unpack("<H", _index_read_exact(fh, 2, what))
    return _index_read_exact(fh, length, what).decode("utf-8")


def save_index(index: CompatibilityIndex, path, write_manifest: bool = True) -> None:
    """Write the binary index plus a human-readable JSON manifest."""
    with open(path, "wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(struct.pack("<IqIIIQ", _INDEX_VERSION, index.generation,
                             index.n_items, len(index.unrankable),
                             index.embeddings.d if len(index.embeddings) else 0,
                             len(index.embeddings)))
        for fid in index.item_ids:
            _write_str(fh, fid)
            _write_str(fh, index.classes[fid])
            _write_str(fh, index.thumbnails.get(fid) or "")
            imgs = index.validated[fid]
            fh.write(struct.pack("<I", len(imgs)))
            for img in imgs:
                _write_str(fh, img)
        for fid in index.unrankable:
            _write_str(fh, fid)
            _write_str(fh, index.classes[fid])
            _write_str(fh, index.thumbnails.get(fid) or "")
        for image_id, row in zip(index.embeddings.ids, index.embeddings.matrix):
            _write_str(fh, image_id)
            fh.write(row.astype("<f4").tobytes())
        fh.write(index.triangle.astype("<f4").tobytes())
    if write_manifest:
        manifest = {
            "format": "stylerank-index",
            "version": _INDEX_VERSION,
            "generation": index.generation,
            "rankable_items": index.n_items,
            "unrankable_items": len(index.unrankable),
            "embedding_dim": index.embeddings.d if len(index.embeddings) else 0,
            "embeddings": len(index.embeddings),
            "classes": index.class_names(),
        }
        with open(str(path) + _MANIFEST_SUFFIX, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_index(path) -> CompatibilityIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _INDEX_MAGIC:
            raise FormatError(f"{path} is not a compatibility index")
        version, generation, n_rank, n_unrank, dim, n_emb = struct.unpack(
            "<IqIIIQ", _index_read_exact(fh, 32, "header"))
        if version != _INDEX_VERSION:
            raise FormatError(f"unsupported index version {version}")
        item_ids: list[str] = []
        classes: dict[str, str] = {}
        thumbnails: dict[str, str | None] = {}
        validated: dict[str, tuple[str, ...]] = {}
        for _ in range(n_rank):
            fid = _read_str(fh, "item id")
            classes[fid] = _read_str(fh, "item class")
            thumb = _read_str(fh, "item thumbnail")
            thumbnails[fid] = thumb or None
            (count,) = struct.unpack("<I", _index_read_exact(fh, 4, "image count"))
            validated[fid] = tuple(_read_str(fh, "image id") for _ in range(count))
            item_ids.append(fid)
        unrankable: list[str] = []
        for _ in range(n_unrank):
            fid = _read_str(fh, "item id")
            classes[fid] = _read_str(fh, "item class")
            thumb = _read_str(fh, "item thumbnail")
            thumbnails[fid] = thumb or None
            unrankable.append(fid)
        emb_ids: list[str] = []
        matrix = np.empty((n_emb, dim), dtype=np.float32)
        for k in range(n_emb):
            emb_ids.append(_read_str(fh, "embedding id"))
            raw = _index_read_exact(fh, 4 * dim, "embedding values")
            matrix[k] = np.frombuffer(raw, dtype="<f4")
        tri_len = n_rank * (n_rank - 1) // 2
        raw = _index_read_exact(fh, 4 * tri_len, "distance triangle")
        triangle = np.frombuffer(raw, dtype="<f4").copy()
        if fh.read(1):
            raise FormatError("trailing bytes after the distance triangle")
    try:
        table = FeatureTable(emb_ids, matrix) if n_emb else FeatureTable(
            [], np.zeros((0, max(dim, 1)), dtype=np.float32))
        return CompatibilityIndex(tuple(item_ids), classes, thumbnails,
                                  validated, table, triangle,
                                  tuple(unrankable), generation)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
