"""Furniture registry, distance index, ranking, and the STYX file format."""

from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_index
from stylerank import compat
from stylerank.compat import (NOT_SIMILAR, SIMILAR, UNKNOWN, CompatibilityIndex,
                              FurnitureItem, FurnitureRegistry, build_index,
                              embedding_distance, furniture_distance,
                              load_index, load_registry, rank_multi_seed,
                              rank_single_seed, save_index, save_registry,
                              scene_energy)
from stylerank.dataset import FeatureTable
from stylerank.errors import (FormatError, StaleIndexError, UnknownItemError,
                              UnrankableItemError)


def two_item_setup():
    registry = FurnitureRegistry([
        FurnitureItem("sofa-1", "sofa", ("s1a", "s1b"), None),
        FurnitureItem("lamp-1", "lamp", ("l1a",), "/t/lamp.png"),
    ])
    registry.record_validation("s1a", "sofa-1", SIMILAR)
    registry.record_validation("s1b", "sofa-1", SIMILAR)
    registry.record_validation("l1a", "lamp-1", SIMILAR)
    table = FeatureTable(
        ["s1a", "s1b", "l1a"],
        np.array([[0, 0, 0], [10, 10, 10], [0, 3, 4]], dtype=np.float32),
    )
    return registry, table


class TestRegistry:
    def test_duplicate_item_rejected(self):
        with pytest.raises(ValueError, match="duplicate furniture id"):
            FurnitureRegistry([
                FurnitureItem("a", "sofa", ("img1",), None),
                FurnitureItem("a", "chair", ("img2",), None),
            ])

    def test_item_with_repeated_image_rejected(self):
        with pytest.raises(ValueError, match="twice"):
            FurnitureItem("a", "sofa", ("img1", "img1"), None)

    def test_status_lifecycle(self):
        registry, _ = two_item_setup()
        assert registry.status("s1a", "sofa-1") == SIMILAR
        registry.record_validation("s1a", "sofa-1", NOT_SIMILAR)
        assert registry.status("s1a", "sofa-1") == NOT_SIMILAR
        assert registry.validated_images("sofa-1") == ("s1b",)

    def test_unreviewed_defaults_to_unknown(self):
        registry = FurnitureRegistry(
            [FurnitureItem("a", "sofa", ("img1",), None)])
        assert registry.status("img1", "a") == UNKNOWN
        assert registry.rankable_ids() == []

    def test_status_requires_matching_pair(self):
        registry, _ = two_item_setup()
        with pytest.raises(UnknownItemError):
            registry.status("l1a", "sofa-1")
        with pytest.raises(UnknownItemError):
            registry.record_validation("l1a", "sofa-1", SIMILAR)

    def test_generation_counts_validations(self):
        registry = FurnitureRegistry(
            [FurnitureItem("a", "sofa", ("img1",), None)])
        assert registry.generation == 0
        registry.record_validation("img1", "a", SIMILAR)
        registry.record_validation("img1", "a", NOT_SIMILAR)
        assert registry.generation == 2

    def test_bad_status_rejected(self):
        registry, _ = two_item_setup()
        with pytest.raises(ValueError, match="status"):
            registry.record_validation("s1a", "sofa-1", "maybe")

    def test_roundtrip_preserves_statuses_and_generation(self, tmp_path):
        registry, _ = two_item_setup()
        registry.record_validation("s1b", "sofa-1", NOT_SIMILAR)
        path = tmp_path / "registry.json"
        save_registry(registry, path)
        loaded = load_registry(path)
        assert loaded.status("s1b", "sofa-1") == NOT_SIMILAR
        assert loaded.status("s1a", "sofa-1") == SIMILAR
        assert loaded.item("lamp-1").thumbnail == "/t/lamp.png"
        assert loaded.item("sofa-1").thumbnail is None
        assert loaded.validations() == registry.validations()

    def test_reload_does_not_advance_generation(self, tmp_path):
        # restoring judgments from disk is not new evidence
        registry, _ = two_item_setup()
        path = tmp_path / "registry.json"
        save_registry(registry, path)
        assert load_registry(path).generation == 0

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "unexpected"}))
        with pytest.raises(FormatError):
            load_registry(path)

    def test_validation_for_foreign_image_rejected_on_load(self, tmp_path):
        registry, _ = two_item_setup()
        path = tmp_path / "registry.json"
        save_registry(registry, path)
        payload = json.loads(path.read_text())
        payload["validations"].append(
            {"image": "ghost", "furniture": "sofa-1", "status": SIMILAR})
        path.write_text(json.dumps(payload))
        with pytest.raises(FormatError, match="ghost"):
            load_registry(path)


class TestDistances:
    def test_pythagorean_triple(self):
        a = np.array([0.0, 0.0], dtype=np.float32)
        b = np.array([3.0, 4.0], dtype=np.float32)
        assert embedding_distance(a, b) == 5.0

    def test_furniture_distance_is_min_over_cross_pairs(self):
        registry, table = two_item_setup()
        index = build_index(registry, table)
        # closest cross pair is s1a vs l1a at distance 5
        assert index.distance("sofa-1", "lamp-1") == 5.0

    def test_single_image_items_reduce_to_embedding_distance(self):
        registry = FurnitureRegistry([
            FurnitureItem("a", "sofa", ("ia",), None),
            FurnitureItem("b", "lamp", ("ib",), None),
        ])
        registry.record_validation("ia", "a", SIMILAR)
        registry.record_validation("ib", "b", SIMILAR)
        rng = np.random.default_rng(0)
        vecs = rng.standard_normal((2, 16)).astype(np.float32)
        table = FeatureTable(["ia", "ib"], vecs)
        index = build_index(registry, table)
        assert index.distance("a", "b") == embedding_distance(vecs[0], vecs[1])

    def test_self_distance_zero_and_symmetry(self):
        index, _, _ = random_index(6, seed=3)
        ids = index.item_ids
        assert index.distance(ids[0], ids[0]) == 0.0
        for a, b in itertools.combinations(ids, 2):
            assert index.distance(a, b) == index.distance(b, a)

    def test_index_matches_on_demand_recomputation_bitwise(self):
        index, registry, table = random_index(8, seed=4)
        for a, b in itertools.combinations(index.item_ids, 2):
            assert index.distance(a, b) == furniture_distance(index, a, b)

    def test_triangle_inequality_can_fail(self):
        # item-level min-distance is not a metric: item b bridges two far
        # apart items through two very different photos
        registry = FurnitureRegistry([
            FurnitureItem("a", "sofa", ("a0",), None),
            FurnitureItem("b", "sofa", ("b0", "b1"), None),
            FurnitureItem("c", "sofa", ("c0",), None),
        ])
        for img, fid in (("a0", "a"), ("b0", "b"), ("b1", "b"), ("c0", "c")):
            registry.record_validation(img, fid, SIMILAR)
        table = FeatureTable(
            ["a0", "b0", "b1", "c0"],
            np.array([[0.0], [0.1], [9.9], [10.0]], dtype=np.float32))
        index = build_index(registry, table)
        assert index.distance("a", "c") > \
            index.distance("a", "b") + index.distance("b", "c")

    def test_missing_embedding_fails_build(self):
        registry, table = two_item_setup()
        extra = FurnitureRegistry(list(registry.items.values()) +
                                  [FurnitureItem("rug-1", "rug", ("r1a",), None)])
        for img, fid, status in registry.validations():
            extra.record_validation(img, fid, status)
        extra.record_validation("r1a", "rug-1", SIMILAR)
        with pytest.raises(UnknownItemError, match="r1a"):
            build_index(extra, table)

    def test_distances_are_float32_values(self):
        index, _, _ = random_index(5, seed=9)
        for a, b in itertools.combinations(index.item_ids, 2):
            d = index.distance(a, b)
            assert d == np.float32(d)


def with_unvalidated_rug(table_too: bool = False):
    registry, table = two_item_setup()
    items = list(registry.items.values()) + [
        FurnitureItem("rug-1", "rug", ("r1a",), None)]
    extra = FurnitureRegistry(items)
    for img, fid, status in registry.validations():
        extra.record_validation(img, fid, status)
    return extra, table


class TestIndexStructure:
    def test_unvalidated_items_are_listed_but_unrankable(self):
        registry, table = with_unvalidated_rug()
        index = build_index(registry, table)
        assert index.has_item("rug-1")
        assert not index.is_rankable("rug-1")
        assert index.unrankable == ("rug-1",)
        assert index.item_ids == ("lamp-1", "sofa-1")

    def test_not_similar_images_are_excluded(self):
        registry, table = two_item_setup()
        registry.record_validation("s1a", "sofa-1", NOT_SIMILAR)
        index = build_index(registry, table)
        # only s1b remains for the sofa, so the 10,10,10 row decides
        expected = embedding_distance(
            np.array([10, 10, 10], dtype=np.float32),
            np.array([0, 3, 4], dtype=np.float32))
        assert index.distance("sofa-1", "lamp-1") == expected

    def test_items_of_class(self):
        index, _, _ = random_index(8, seed=5, n_classes=3)
        for name in index.class_names():
            members = index.items_of_class(name)
            assert members == sorted(members)
            for m in members:
                assert index.classes[m] == name
        with pytest.raises(UnknownItemError, match="class"):
            index.items_of_class("no-such-class")

    def test_unknown_and_unrankable_errors(self):
        registry, table = with_unvalidated_rug()
        index = build_index(registry, table)
        with pytest.raises(UnknownItemError):
            index.distance("ghost", "sofa-1")
        with pytest.raises(UnrankableItemError):
            index.distance("rug-1", "sofa-1")

    def test_generation_recorded(self):
        registry, table = two_item_setup()
        index = build_index(registry, table)
        assert index.generation == registry.generation
        registry.record_validation("s1a", "sofa-1", SIMILAR)
        assert build_index(registry, table).generation == index.generation + 1


def brute_force_single(index: CompatibilityIndex, seed_id: str,
                       class_name: str, k: int):
    pairs = sorted((index.distance(seed_id, c), c)
                   for c in index.items_of_class(class_name) if c != seed_id)
    return [(c, d) for d, c in pairs[:k]]


class TestRanking:
    def test_single_seed_matches_brute_force(self):
        index, _, _ = random_index(12, seed=6, n_classes=2)
        for seed_id in index.item_ids[:4]:
            for cls in index.class_names():
                got = rank_single_seed(index, seed_id, cls, k=7)
                assert got == brute_force_single(index, seed_id, cls, 7)

    def test_k_larger_than_class(self):
        index, _, _ = random_index(4, seed=7, n_classes=1)
        got = rank_single_seed(index, index.item_ids[0], "class-0", k=100)
        assert len(got) == 3

    def test_k_must_be_positive(self):
        index, _, _ = random_index(3, seed=8)
        with pytest.raises(ValueError):
            rank_single_seed(index, index.item_ids[0], "class-0", k=0)

    def test_ties_break_by_id(self):
        vec = np.ones(4, dtype=np.float32)
        ids = ["z-item", "m-item", "a-item", "seed"]
        registry = FurnitureRegistry(
            [FurnitureItem(fid, "sofa", (fid + "-img",), None) for fid in ids])
        rows = []
        for fid in ids:
            registry.record_validation(fid + "-img", fid, SIMILAR)
            rows.append(np.zeros(4, dtype=np.float32) if fid == "seed" else vec)
        table = FeatureTable([f + "-img" for f in ids],
                             np.stack(rows).astype(np.float32))
        got = rank_single_seed(build_index(registry, table), "seed", "sofa", k=3)
        assert [fid for fid, _ in got] == ["a-item", "m-item", "z-item"]
        assert len({d for _, d in got}) == 1

    def test_seed_class_may_differ_from_candidate_class(self):
        registry, table = two_item_setup()
        index = build_index(registry, table)
        got = rank_single_seed(index, "sofa-1", "lamp", k=5)
        assert got == [("lamp-1", 5.0)]

    def test_unknown_seed_and_class(self):
        index, _, _ = random_index(3, seed=10)
        with pytest.raises(UnknownItemError):
            rank_single_seed(index, "ghost", "class-0", k=1)
        with pytest.raises(UnknownItemError):
            rank_single_seed(index, index.item_ids[0], "ghost-class", k=1)

    def test_multi_seed_sums_over_scene(self):
        index, _, _ = random_index(9, seed=11, n_classes=2)
        scene = list(index.item_ids[:3])
        got = rank_multi_seed(index, scene, "class-0", k=4)
        expected = sorted(
            (sum(index.distance(s, c) for s in scene), c)
            for c in index.items_of_class("class-0") if c not in set(scene))
        assert got == [(c, d) for d, c in expected[:4]]

    def test_multi_seed_counts_duplicates_twice(self):
        index, _, _ = random_index(6, seed=12, n_classes=1)
        a = index.item_ids[0]
        single = rank_multi_seed(index, [a], "class-0", k=3)
        doubled = rank_multi_seed(index, [a, a], "class-0", k=3)
        for (fid1, d1), (fid2, d2) in zip(single, doubled):
            assert fid2 == fid1
            assert d2 == pytest.approx(2 * d1, rel=1e-6)

    def test_singleton_scene_equals_single_seed(self):
        index, _, _ = random_index(7, seed=13, n_classes=2)
        a = index.item_ids[2]
        multi = rank_multi_seed(index, [a], "class-1", k=5)
        single = rank_single_seed(index, a, "class-1", k=5)
        assert multi == single

    def test_empty_scene_rejected(self):
        index, _, _ = random_index(3, seed=14)
        with pytest.raises(ValueError, match="empty"):
            rank_multi_seed(index, [], "class-0", k=3)

    def test_unknown_scene_member(self):
        index, _, _ = random_index(3, seed=15)
        with pytest.raises(UnknownItemError):
            rank_multi_seed(index, ["ghost"], "class-0", k=1)


class TestSceneEnergy:
    def test_small_scenes_have_zero_energy(self):
        index, _, _ = random_index(4, seed=16)
        assert scene_energy(index, []) == 0.0
        assert scene_energy(index, [index.item_ids[0]]) == 0.0

    def test_matches_pairwise_sum(self):
        index, _, _ = random_index(8, seed=17)
        scene = list(index.item_ids[:4])
        expected = sum(index.distance(a, b)
                       for a, b in itertools.combinations(scene, 2))
        assert scene_energy(index, scene) == pytest.approx(expected, rel=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 1000), perm_seed=st.integers(0, 1000))
    def test_order_invariant(self, seed, perm_seed):
        index, _, _ = random_index(5, seed=seed % 7)
        scene = list(index.item_ids[:4])
        rng = np.random.default_rng(perm_seed)
        shuffled = [scene[i] for i in rng.permutation(len(scene))]
        assert scene_energy(index, shuffled) == \
            pytest.approx(scene_energy(index, scene), rel=1e-6)


class TestIndexFiles:
    def test_roundtrip_is_byte_stable(self, tmp_path):
        index, _, _ = random_index(10, seed=18)
        p1, p2 = tmp_path / "a.styx", tmp_path / "b.styx"
        save_index(index, p1)
        loaded = load_index(p1)
        save_index(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(loaded.triangle, index.triangle)
        assert loaded.item_ids == index.item_ids
        assert loaded.classes == index.classes
        assert loaded.thumbnails == index.thumbnails
        assert loaded.validated == index.validated
        assert loaded.generation == index.generation

    def test_loaded_distances_identical(self, tmp_path):
        index, _, _ = random_index(7, seed=19)
        path = tmp_path / "x.styx"
        save_index(index, path)
        loaded = load_index(path)
        for a, b in itertools.combinations(index.item_ids, 2):
            assert loaded.distance(a, b) == index.distance(a, b)
            assert furniture_distance(loaded, a, b) == index.distance(a, b)

    def test_unrankable_survive_roundtrip(self, tmp_path):
        registry, table = with_unvalidated_rug()
        index = build_index(registry, table)
        path = tmp_path / "x.styx"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.unrankable == ("rug-1",)
        assert loaded.classes["rug-1"] == "rug"

    def test_manifest_sidecar(self, tmp_path):
        index, _, _ = random_index(5, seed=20)
        path = tmp_path / "x.styx"
        save_index(index, path)
        manifest = json.loads((tmp_path / "x.styx.manifest.json").read_text())
        assert manifest["generation"] == index.generation
        assert manifest["rankable_items"] == index.n_items
        assert manifest["embedding_dim"] == index.embeddings.d
        assert manifest["classes"] == index.class_names()

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.styx"
        path.write_bytes(b"NOPE" + b"\x00" * 60)
        with pytest.raises(FormatError, match="not a compatibility index"):
            load_index(path)

    def test_truncation(self, tmp_path):
        index, _, _ = random_index(5, seed=21)
        path = tmp_path / "x.styx"
        save_index(index, path)
        clipped = tmp_path / "t.styx"
        clipped.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="truncated"):
            load_index(clipped)

    def test_trailing_bytes(self, tmp_path):
        index, _, _ = random_index(5, seed=22)
        path = tmp_path / "x.styx"
        save_index(index, path)
        path.write_bytes(path.read_bytes() + b"zz")
        with pytest.raises(FormatError, match="trailing"):
            load_index(path)


class TestStaleness:
    def test_generation_check(self):
        index, _, _ = random_index(4, seed=23)
        compat.check_generation(index, index.generation)
        with pytest.raises(StaleIndexError):
            compat.check_generation(index, index.generation + 1)

    def test_none_skips_check(self):
        index, _, _ = random_index(3, seed=24)
        compat.check_generation(index, None)
