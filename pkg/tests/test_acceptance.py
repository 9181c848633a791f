"""Top-level acceptance checks, one test per release criterion.

Each test pins its own tolerances and runtime budget and is written
against independent oracles (finite differences, closed-form
identities, brute-force recomputation, committed fixtures) rather than
the code paths it certifies.
"""

from __future__ import annotations

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import BufferCapture, random_index, run_pipeline, store_from_counts
from stylerank import cli, comparisons, compat, evaluation, stylenet, synthetic
from stylerank.comparisons import ComparisonConfig, ComparisonLabel
from stylerank.dataset import ValidationSetSpec
from stylerank.evaluation import QueryResult
from stylerank.service import create_app
from stylerank.stylenet import StyleHead, TrainConfig, batch_gradient

FIXTURES = json.loads(
    (Path(__file__).parent / "data" / "metric_fixtures.json").read_text())


# --- 1. analytic gradients vs central finite differences ---------------

def _fd_instance(rng, d, batch, n_styles=4):
    """A random head/batch pair whose hidden pre-activations stay clear
    of the ReLU kink, where finite differences are meaningless."""
    while True:
        head = StyleHead.initialize(d, n_styles, rng)
        xi = rng.standard_normal((batch, d))
        xj = rng.standard_normal((batch, d))
        pre = np.concatenate([xi @ head.w1 + head.b1, xj @ head.w1 + head.b1])
        if np.abs(pre).min() > 1e-3:
            styles = rng.integers(0, n_styles, size=batch)
            ys = rng.choice([-1, 1], size=batch)
            return head, xi, xj, styles, ys


def test_gradient_oracle_matches_finite_differences():
    started = time.monotonic()
    rng = np.random.default_rng(20240801)
    h = 1e-5
    worst = 0.0
    for instance in range(25):
        head, xi, xj, styles, ys = _fd_instance(rng, d=5, batch=8)
        for l2 in (0.0, 1e-3):
            analytic, _ = batch_gradient(head, xi, xj, styles, ys, l2=l2)
            for name, param in head.blocks().items():
                grad = np.zeros_like(param)
                flat_p, flat_g = param.ravel(), grad.ravel()
                for idx in range(flat_p.size):
                    keep = flat_p[idx]
                    flat_p[idx] = keep + h
                    _, up = batch_gradient(head, xi, xj, styles, ys, l2=l2)
                    flat_p[idx] = keep - h
                    _, down = batch_gradient(head, xi, xj, styles, ys, l2=l2)
                    flat_p[idx] = keep
                    flat_g[idx] = (up - down) / (2 * h)
                block = getattr(analytic, name)
                scale = max(np.linalg.norm(block), np.linalg.norm(grad), 1e-12)
                rel = float(np.linalg.norm(block - grad) / scale)
                worst = max(worst, rel)
                assert rel <= 1e-5, (instance, l2, name, rel)
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"


# --- 2. closed-form loss identities -------------------------------------

def test_loss_identities():
    assert abs(stylenet.bt_loss(1, 0.0) - np.log(2.0)) <= 1e-12
    assert abs(stylenet.bt_loss(-1, 0.0) - np.log(2.0)) <= 1e-12
    # with per-style strengths s = exp(f), the probability that i beats j
    # is s_i / (s_i + s_j); the loss must be its exact negative log
    rng = np.random.default_rng(20240802)
    for _ in range(1000):
        fi, fj = rng.normal(scale=3.0, size=2)
        marginal = np.exp(fi) / (np.exp(fi) + np.exp(fj))
        assert abs(np.exp(-stylenet.bt_loss(1, fi - fj)) - marginal) <= 1e-12


# --- 3. comparison generation vs brute force ----------------------------

def _brute_force_pairs(store, t):
    """All eligible comparisons recomputed straight from label counts."""
    images = store.images()
    out = set()
    for i, j in itertools.combinations(images, 2):
        ci, cj = store.label_counts(i), store.label_counts(j)
        for style in range(store.num_styles):
            if ci[style] < 1 or cj[style] < 1:
                continue
            if ci[style] - cj[style] > t:
                out.add((i, j, style, 1))
            elif cj[style] - ci[style] > t:
                out.add((i, j, style, -1))
    return out


def test_comparison_generation_oracle():
    started = time.monotonic()
    corpus = synthetic.generate_corpus(50, seed=20240803, n_experts=10,
                                       d=None, concentration=0.5,
                                       label_noise=0.4)
    store = corpus.store()
    universes = {}
    for t in (1, 2, 3):
        brute = _brute_force_pairs(store, t)
        enumerated = {(l.i, l.j, l.style, l.y)
                      for style in range(store.num_styles)
                      for l in comparisons.enumerate_comparisons(store, style, t)}
        assert enumerated == brute
        # antisymmetry: swapping the two images flips the judgment
        for i, j, style, y in enumerated:
            ci, cj = store.label_counts(i), store.label_counts(j)
            assert comparisons.eligible_pair(ci, cj, style, t) == y
            assert comparisons.eligible_pair(cj, ci, style, t) == -y
        n_sample = min(200, len(enumerated))
        sampled = comparisons.sample_comparisons(
            store, ComparisonConfig(t=t, n_c=n_sample, seed=7, split=None))
        assert len(sampled) == n_sample
        assert len(set(sampled)) == n_sample
        assert {(l.i, l.j, l.style, l.y) for l in sampled} <= enumerated
        universes[t] = enumerated
    # raising the margin can only shrink the labeled universe
    assert universes[3] <= universes[2] <= universes[1]
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"comparison oracle took {elapsed:.1f}s"


# --- 4. synthetic style recovery ----------------------------------------

def _pair_ordering_accuracy(head, data, labels):
    feats = data.features
    hits = 0
    for lab in labels:
        pred = stylenet.comparison_predict(
            head, feats.vector(lab.i).astype(np.float64),
            feats.vector(lab.j).astype(np.float64), lab.style)
        if np.sign(pred) == lab.y:
            hits += 1
    return hits / len(labels)


def _train_comparison_head(data, t, n_c, seeds, max_epochs=40):
    s_train, s_sample = seeds
    config = TrainConfig(seed=s_train, learning_rate=1e-3, l2=2e-4,
                         batch_size=256, max_epochs=max_epochs,
                         early_stop_patience=10)
    labels = comparisons.sample_comparisons(
        data.annotations,
        ComparisonConfig(t=t, n_c=n_c, seed=s_sample, split="train"),
        splits=data.splits)
    return stylenet.train(data, labels, config), config


def test_synthetic_recovery():
    started = time.monotonic()

    # part one: a mildly noisy corpus; the trained head must order at
    # least 90% of unseen same-style comparisons correctly
    corpus = synthetic.generate_corpus(2000, seed=1001, d=None,
                                       concentration=0.3, label_noise=0.25,
                                       feature_noise=0.05)
    data = corpus.dataset(seed=1002)
    result, _ = _train_comparison_head(data, t=3, n_c=6000, seeds=(1003, 1004))
    held_out = comparisons.sample_comparisons(
        data.annotations,
        ComparisonConfig(t=3, n_c=1000, seed=1005, split="test"),
        splits=data.splits)
    ordering = _pair_ordering_accuracy(result.head, data, held_out)
    assert ordering >= 0.90, f"held-out pair ordering {ordering:.3f}"

    # part two: under heavy annotator disagreement the comparison route
    # must beat a plain discrete-label classifier on the high-agreement
    # test subset, for every seed
    for base_seed in (11, 12, 13):
        ss = np.random.SeedSequence(base_seed)
        s_corpus, s_split, s_train, s_sample = (int(v) for v in
                                                ss.generate_state(4))
        noisy = synthetic.generate_corpus(2000, seed=s_corpus, d=None,
                                          concentration=0.5,
                                          label_noise=0.45,
                                          feature_noise=0.05)
        noisy_data = noisy.dataset(seed=s_split)
        comp_result, config = _train_comparison_head(
            noisy_data, t=3, n_c=6000, seeds=(s_train, s_sample))
        memberships = set()
        for img in noisy_data.split_images("train"):
            counts = noisy_data.annotations.label_counts(img)
            winners = np.flatnonzero(counts == counts.max())
            if len(winners) == 1:
                memberships.add((img, int(winners[0])))
        disc_result = evaluation.baseline_train_discrete(
            noisy_data, memberships, config)
        x, y, ids = noisy_data.clean_truth("test", ValidationSetSpec((6, 6, 6, 6)))
        assert len(ids) >= 50
        comp_acc = evaluation.classification_accuracy(comp_result.head, x, y)
        disc_acc = evaluation.classification_accuracy(disc_result.head, x, y)
        assert comp_acc > disc_acc, (
            f"seed {base_seed}: comparison {comp_acc:.3f} "
            f"vs discrete {disc_acc:.3f}")

    elapsed = time.monotonic() - started
    assert elapsed < 300.0, f"synthetic recovery took {elapsed:.1f}s"


# --- 5. ranking functions vs brute force --------------------------------

def test_ranking_oracles():
    index, registry, table = random_index(20, seed=20240805, max_images=5,
                                          n_classes=3)

    def brute_distance(a, b):
        best = np.inf
        for ia in registry.validated_images(a):
            for ib in registry.validated_images(b):
                d = compat.embedding_distance(table.vector(ia), table.vector(ib))
                best = min(best, d)
        return best

    ids = index.item_ids
    for a, b in itertools.combinations(ids, 2):
        expected = brute_distance(a, b)
        assert index.distance(a, b) == expected
        assert compat.furniture_distance(index, a, b) == expected

    for seed_id in ids:
        for cls in index.class_names():
            k = 7
            got = compat.rank_single_seed(index, seed_id, cls, k)
            brute = sorted((index.distance(seed_id, c), c)
                           for c in index.items_of_class(cls) if c != seed_id)
            assert got == [(c, d) for d, c in brute[:k]]

    scene = list(ids[:4])
    for cls in index.class_names():
        got = compat.rank_multi_seed(index, scene, cls, 6)
        brute = sorted((sum(index.distance(m, c) for m in scene), c)
                       for c in index.items_of_class(cls)
                       if c not in set(scene))
        assert got == [(c, d) for d, c in brute[:6]]

    assert compat.scene_energy(index, scene) == pytest.approx(
        sum(index.distance(a, b) for a, b in itertools.combinations(scene, 2)),
        rel=1e-9)
    lone = ids[5]
    assert compat.scene_energy(index, [lone]) == 0.0
    for cls in index.class_names():
        assert compat.rank_multi_seed(index, [lone], cls, 10) == \
            compat.rank_single_seed(index, lone, cls, 10)


# --- 6. retrieval metrics vs committed fixtures -------------------------

def test_metric_oracles():
    fix = FIXTURES["three_item"]
    run = QueryResult("q", tuple(fix["relevance"]), fix["n_relevant"])
    assert evaluation.average_precision(run) == fix["average_precision"]
    assert evaluation.ndcg(run) == fix["ndcg"]
    assert evaluation.recall_at_k([run], fix["k"]) == fix["recall"]

    fix = FIXTURES["ten_item"]
    run = QueryResult("q", tuple(fix["relevance"]), fix["n_relevant"])
    assert evaluation.average_precision(run) == fix["average_precision_full"]
    assert evaluation.average_precision(run, 5) == fix["average_precision_at_5"]
    assert evaluation.ndcg(run) == fix["ndcg_full"]
    assert evaluation.ndcg(run, 5) == fix["ndcg_at_5"]
    assert evaluation.recall_at_k([run], 1) == fix["recall_at_1"]
    assert evaluation.recall_at_k([run], 2) == fix["recall_at_2"]

    fix = FIXTURES["ten_item_miss"]
    run = QueryResult("q", tuple(fix["relevance"]), fix["n_relevant"])
    assert evaluation.average_precision(run, 5) == fix["average_precision_at_5"]
    assert evaluation.recall_at_k([run], 5) == fix["recall_at_5"]
    assert evaluation.recall_at_k([run], 9) == fix["recall_at_9"]

    rng = np.random.default_rng(20240806)
    for _ in range(100):
        depth = int(rng.integers(1, 15))
        flags = rng.random(depth) < 0.4
        n_rel = max(int(flags.sum()), 1)
        run = QueryResult("q", tuple(bool(f) for f in flags), n_rel)
        series = [evaluation.recall_at_k([run], k) for k in range(1, depth + 1)]
        assert all(a <= b for a, b in zip(series, series[1:]))


# --- 7. annotator-agreement formula --------------------------------------

def test_agreement_formula():
    # 46 shared images, 100 in the union: distinctness is exactly 0.54
    counts = {}
    for k in range(110):
        row = [0, 0, 0, 0]
        if k < 60:
            row[0] = 1
        if 14 <= k < 100:
            row[1] = 1
        if row == [0, 0, 0, 0]:
            row[2] = 1
        counts[f"img{k:03d}"] = tuple(row)
    matrix = evaluation.expert_agreement_matrix(store_from_counts(counts))
    assert matrix[0, 1] == 0.54
    assert matrix[1, 0] == 0.54

    rng = np.random.default_rng(20240807)
    for _ in range(25):
        rand_counts = {
            f"i{k}": tuple(int(c) for c in rng.integers(0, 3, size=4))
            for k in range(int(rng.integers(1, 15)))}
        rand_counts = {k: v for k, v in rand_counts.items() if any(v)}
        if not rand_counts:
            continue
        m = evaluation.expert_agreement_matrix(store_from_counts(rand_counts))
        assert (m >= 0.0).all() and (m <= 1.0).all()
        np.testing.assert_array_equal(np.diag(m), 0.0)
        np.testing.assert_array_equal(m, m.T)


# --- 8. end-to-end determinism -------------------------------------------

def test_pipeline_determinism(tmp_path):
    artifacts = {}
    suggest_outputs = {}
    for run in ("first", "second"):
        root = tmp_path / run
        root.mkdir()
        with BufferCapture() as cap:
            paths = run_pipeline(root, cap)
            index = compat.load_index(paths["index"])
            seed_item = index.item_ids[0]
            class_name = index.classes[index.item_ids[1]]
            code = cli.main(["suggest", "--index", str(paths["index"]),
                             "--seed-item", seed_item,
                             "--class", class_name, "--k", "10"])
            captured = cap.readouterr()
            assert code == 0, captured.err
        artifacts[run] = {name: p.read_bytes() for name, p in paths.items()}
        suggest_outputs[run] = captured.out
    assert set(artifacts["first"]) == set(artifacts["second"])
    for name in artifacts["first"]:
        assert artifacts["first"][name] == artifacts["second"][name], name
    assert suggest_outputs["first"] == suggest_outputs["second"]
    assert suggest_outputs["first"].startswith("rank,furniture_id,distance")


# --- 9. suggestion latency ------------------------------------------------

def test_service_latency():
    index, _, _ = random_index(1148, seed=20240809, max_images=1,
                               n_classes=8, dim=16)
    app = create_app(index)
    with TestClient(app) as tc:
        for _ in range(10):  # warm up routing and serialization
            tc.get("/v1/suggest/single",
                   params={"seed": index.item_ids[0], "class": "class-0",
                           "k": 150})
        rng = np.random.default_rng(20240810)
        picks = rng.integers(0, len(index.item_ids), size=200)
        timings = []
        for pick in picks:
            seed_id = index.item_ids[int(pick)]
            params = {"seed": seed_id, "class": f"class-{int(pick) % 8}",
                      "k": 150}
            t0 = time.perf_counter()
            response = tc.get("/v1/suggest/single", params=params)
            timings.append((time.perf_counter() - t0) * 1000.0)
            assert response.status_code == 200
    timings.sort()
    p50 = timings[len(timings) // 2]
    p99 = timings[int(len(timings) * 0.99) - 1]
    assert p50 < 10.0, f"p50 {p50:.2f} ms"
    assert p99 < 50.0, f"p99 {p99:.2f} ms"
