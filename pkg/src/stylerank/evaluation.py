"""Classification and retrieval evaluation, annotator-agreement
measurement, and the discrete-label training baseline.

Retrieval treats every labeled image as a query against the rest of the
corpus; an item is relevant iff it carries the query's ground-truth
style. Queries with nothing relevant to find are excluded and counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import stylenet
from .dataset import (AnnotationStore, Dataset, FeatureTable,
                      ValidationSetSpec, build_style_set)
from .stylenet import (Gradients, StyleHead, TrainConfig, TrainResult,
                       batch_gradient)


def classify(head: StyleHead, x: np.ndarray):
    """Predicted style index (argmax of the softmax scores; ties go to
    the lowest index). Batches come back as an int array."""
    probs = stylenet.forward(head, x).probs
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=1)


def classification_accuracy(head: StyleHead, x: np.ndarray,
                            y: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot score an empty evaluation set")
    preds = np.atleast_1d(classify(head, x))
    if preds.shape != y.shape:
        raise ValueError("prediction and truth lengths differ")
    return float(np.mean(preds == y))


def retrieve_nearest(table: FeatureTable, query_id: str, k: int
                     ) -> list[tuple[str, float]]:
    """The k nearest images by Euclidean embedding distance, query
    excluded, distance ties broken by image id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(table) < 2:
        raise ValueError("retrieval needs at least two images")
    q = table.vector(query_id).astype(np.float64)
    diffs = table.matrix.astype(np.float64) - q
    dists = np.sqrt((diffs * diffs).sum(axis=1))
    scored = sorted((float(dists[r]), table.ids[r])
                    for r in range(len(table)) if table.ids[r] != query_id)
    return [(image_id, dist) for dist, image_id in scored[:k]]


@dataclass(frozen=True)
class QueryResult:
    """Ranked binary relevance for one retrieval query.

    ``n_relevant`` counts relevant items in the whole corpus (query
    excluded), which bounds the ideal ranking for NDCG and recall.
    """

    query_id: str
    relevance: tuple[bool, ...]
    n_relevant: int

    def __post_init__(self):
        if self.n_relevant < 1:
            raise ValueError("queries with nothing relevant must be excluded")


def recall_at_k(runs: Sequence[QueryResult], k: int) -> float:
    """Fraction of queries with at least one relevant item in the top k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not runs:
        raise ValueError("no queries to score")
    return float(np.mean([any(run.relevance[:k]) for run in runs]))


def average_precision(run: QueryResult, k: int | None = None) -> float:
    """Mean of the precisions at each relevant rank inside the top k
    (the full ranking when k is None); 0.0 if nothing relevant shows."""
    if k is not None and k < 1:
        raise ValueError("k must be at least 1")
    flags = run.relevance if k is None else run.relevance[:k]
    precisions = []
    hits = 0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return 0.0
    return float(np.mean(precisions))


def mean_average_precision(runs: Sequence[QueryResult],
                           k: int | None = None) -> float:
    if not runs:
        raise ValueError("no queries to score")
    return float(np.mean([average_precision(run, k) for run in runs]))


def ndcg(run: QueryResult, k: int | None = None) -> float:
    """Binary-gain NDCG with 1/log2(rank+1) discounts; the ideal ranking
    packs all relevant items at the front."""
    if k is not None and k < 1:
        raise ValueError("k must be at least 1")
    flags = run.relevance if k is None else run.relevance[:k]
    depth = len(flags)
    dcg = sum(1.0 / np.log2(rank + 1)
              for rank, flag in enumerate(flags, start=1) if flag)
    ideal_hits = min(run.n_relevant, depth if k is None else k)
    idcg = sum(1.0 / np.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    if idcg == 0.0:
        return 0.0
    return float(dcg / idcg)


def mean_ndcg(runs: Sequence[QueryResult], k: int | None = None) -> float:
    if not runs:
        raise ValueError("no queries to score")
    return float(np.mean([ndcg(run, k) for run in runs]))


@dataclass
class RetrievalReport:
    """Aggregate retrieval metrics over all usable queries."""

    n_queries: int
    skipped_queries: int        # queries with zero relevant items
    recall: dict[int, float]
    mean_ap: float              # over the full ranking
    mean_ap_at: dict[int, float]
    ndcg_full: float
    ndcg_at: dict[int, float]


def build_query_results(table: FeatureTable, labels: Mapping[str, int]
                        ) -> tuple[list[QueryResult], int]:
    """One ranked relevance run per labeled image present in the table.

    Returns the runs plus the count of skipped zero-relevant queries.
    """
    ids = sorted(i for i in labels if i in table)
    sub = table.subset(ids) if len(ids) >= 2 else None
    runs: list[QueryResult] = []
    skipped = 0
    for query in ids:
        n_relevant = sum(1 for other in ids
                         if other != query and labels[other] == labels[query])
        if n_relevant == 0:
            skipped += 1
            continue
        ranked = retrieve_nearest(sub, query, k=len(ids) - 1)
        flags = tuple(labels[other] == labels[query] for other, _ in ranked)
        runs.append(QueryResult(query, flags, n_relevant))
    return runs, skipped


def evaluate_retrieval(table: FeatureTable, labels: Mapping[str, int],
                       ks: Sequence[int] = (1, 5)) -> RetrievalReport:
    """Run every labeled image as a query against the others."""
    if not ks or any(k < 1 for k in ks):
        raise ValueError("cutoffs must be positive")
    runs, skipped = build_query_results(table, labels)
    if not runs:
        raise ValueError("no usable retrieval queries")
    return RetrievalReport(
        n_queries=len(runs),
        skipped_queries=skipped,
        recall={k: recall_at_k(runs, k) for k in ks},
        mean_ap=mean_average_precision(runs),
        mean_ap_at={k: mean_average_precision(runs, k) for k in ks},
        ndcg_full=mean_ndcg(runs),
        ndcg_at={k: mean_ndcg(runs, k) for k in ks},
    )


def expert_agreement_matrix(store: AnnotationStore) -> np.ndarray:
    """Style-distinctness matrix from label co-occurrence.

    Cell (a, b) is 1 - |I_a intersect I_b| / |I_a union I_b| over the
    image sets carrying at least one label of each style. An empty union
    counts as fully distinct (1.0); the diagonal is 0 by definition.
    """
    n_styles = store.num_styles
    sets: list[set[str]] = [set() for _ in range(n_styles)]
    for image_id in store.images():
        counts = store.label_counts(image_id)
        for style in np.flatnonzero(counts >= 1):
            sets[int(style)].add(image_id)
    out = np.zeros((n_styles, n_styles), dtype=np.float64)
    for a in range(n_styles):
        for b in range(n_styles):
            if a == b:
                continue
            union = sets[a] | sets[b]
            if not union:
                out[a, b] = 1.0
            else:
                out[a, b] = 1.0 - len(sets[a] & sets[b]) / len(union)
    return out


def baseline_train_discrete(dataset: Dataset,
                            memberships: set[tuple[str, int]],
                            config: TrainConfig, *,
                            clean_spec: ValidationSetSpec | None = None,
                            val_data: tuple[np.ndarray, np.ndarray] | None = None,
                            metrics_path=None) -> TrainResult:
    """Train the same head architecture with plain cross-entropy on
    discrete (image, style) memberships.

    Each membership is one sample, so a multi-labeled image contributes
    once per style. Initialization, optimizer, batching, and early
    stopping all match the comparison training loop, which makes the two
    routes directly comparable.
    """
    pairs = sorted(memberships)
    if not pairs:
        raise ValueError("membership set is empty")
    try:
        rows = np.array([dataset.features.row(i) for i, _ in pairs], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"membership references an image without features: {exc}") from None
    targets = np.array([s for _, s in pairs], dtype=np.int64)
    n_styles = dataset.annotations.num_styles
    if targets.min() < 0 or targets.max() >= n_styles:
        raise ValueError("style index out of range")
    x_all = np.asarray(dataset.features.matrix, dtype=np.float64)
    if val_data is None:
        val_data = stylenet._validation_data(dataset, clean_spec)
    rng = np.random.default_rng(config.seed)
    head = StyleHead.initialize(dataset.features.d, n_styles, rng)

    def grad_for(current: StyleHead, sel: np.ndarray) -> tuple[Gradients, float]:
        return _cross_entropy_gradient(current, x_all[rows[sel]], targets[sel],
                                       config.l2)

    head, history, best_epoch = stylenet._fit(head, len(pairs), grad_for,
                                              config, rng, val_data)
    result = TrainResult(head=head, history=history, best_epoch=best_epoch)
    if metrics_path is not None:
        stylenet.write_metrics(result.history, metrics_path)
    return result


def _cross_entropy_gradient(head: StyleHead, x: np.ndarray, y: np.ndarray,
                            l2: float) -> tuple[Gradients, float]:
    """Mean softmax cross-entropy plus the same L2 term as the
    comparison objective."""
    n = len(y)
    grads = Gradients.zeros_like(head)
    loss = 0.0
    if n:
        hidden, logits, probs = stylenet._forward_batch(head, x)
        rows = np.arange(n)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_norm - shifted[rows, y]))
        g_logits = probs.copy()
        g_logits[rows, y] -= 1.0
        g_logits /= n
        grads.w2 += hidden.T @ g_logits
        grads.b2 += g_logits.sum(axis=0)
        g_hidden = (g_logits @ head.w2.T) * (hidden > 0)
        grads.w1 += x.T @ g_hidden
        grads.b1 += g_hidden.sum(axis=0)
    if l2:
        for name, param in head.blocks().items():
            block = getattr(grads, name)
            block += 2.0 * l2 * param
            loss += l2 * float((param * param).sum())
    return grads, loss


def evaluation_report(head: StyleHead, dataset: Dataset, *,
                      split: str = "test",
                      ks: Sequence[int] = (1, 5),
                      clean_spec: ValidationSetSpec | None = None) -> dict:
    """Full evaluation as one JSON-ready document.

    Covers overall, per-style, and macro-averaged classification
    accuracy on the split's single-label truth, retrieval quality over
    the learned embeddings, and the annotator-agreement matrix.
    """
    x, y, ids = dataset.clean_truth(split, clean_spec)
    if not ids:
        raise ValueError(f"split {split!r} has no usable labeled images")
    styles = dataset.annotations.styles
    preds = np.atleast_1d(classify(head, x))
    per_style: dict[str, float | None] = {}
    accs = []
    for idx, name in enumerate(styles):
        mask = y == idx
        if mask.any():
            acc = float(np.mean(preds[mask] == idx))
            per_style[name] = acc
            accs.append(acc)
        else:
            per_style[name] = None
    embeddings = FeatureTable(
        ids, stylenet.extract_embedding(head, x).astype(np.float32))
    labels = {image_id: int(style) for image_id, style in zip(ids, y)}
    retrieval = evaluate_retrieval(embeddings, labels, ks)
    agreement = expert_agreement_matrix(dataset.annotations)
    return {
        "split": split,
        "n_images": len(ids),
        "styles": list(styles),
        "accuracy": {
            "overall": float(np.mean(preds == y)),
            "macro": float(np.mean(accs)) if accs else None,
            "per_style": per_style,
        },
        "retrieval": {
            "n_queries": retrieval.n_queries,
            "skipped_queries": retrieval.skipped_queries,
            "recall": {str(k): v for k, v in retrieval.recall.items()},
            "map": retrieval.mean_ap,
            "map_at": {str(k): v for k, v in retrieval.mean_ap_at.items()},
            "ndcg": retrieval.ndcg_full,
            "ndcg_at": {str(k): v for k, v in retrieval.ndcg_at.items()},
        },
        "agreement": agreement.tolist(),
    }


def report_csv_rows(report: dict) -> list[tuple[str, object]]:
    """Flatten a report into (metric, value) rows for plotting."""
    rows: list[tuple[str, object]] = [
        ("split", report["split"]),
        ("n_images", report["n_images"]),
        ("accuracy.overall", report["accuracy"]["overall"]),
        ("accuracy.macro", report["accuracy"]["macro"]),
    ]
    for name, value in report["accuracy"]["per_style"].items():
        rows.append((f"accuracy.{name}", value))
    retrieval = report["retrieval"]
    rows.append(("retrieval.n_queries", retrieval["n_queries"]))
    rows.append(("retrieval.skipped_queries", retrieval["skipped_queries"]))
    for k, value in retrieval["recall"].items():
        rows.append((f"recall@{k}", value))
    rows.append(("map", retrieval["map"]))
    for k, value in retrieval["map_at"].items():
        rows.append((f"map@{k}", value))
    rows.append(("ndcg", retrieval["ndcg"]))
    for k, value in retrieval["ndcg_at"].items():
        rows.append((f"ndcg@{k}", value))
    styles = report["styles"]
    for a, row in zip(styles, report["agreement"]):
        for b, value in zip(styles, row):
            rows.append((f"agreement.{a}.{b}", value))
    return rows


def write_report_csv(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("metric", "value"))
        writer.writerows(report_csv_rows(report))
