"""Command-line pipeline driver.

Every option can also come from a ``STYLERANK_<NAME>`` environment
variable or a ``key=value`` config file (precedence: flag, environment,
config, built-in default), and every stochastic command demands an
explicit seed. Failures print a machine-readable JSON error to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import compat, comparisons, dataset, evaluation, stylenet, synthetic
from .errors import StyleRankError


class CliError(StyleRankError):
    pass


def _csv_ints(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in str(raw).split(",") if part.strip())


def _csv_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in str(raw).split(",") if part.strip())


def _csv_strs(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in str(raw).split(",") if part.strip())


def _load_config(path) -> dict[str, str]:
    """Parse a key=value config file; '#' starts a comment and keys may
    be scoped to one command as command.option."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


class Options:
    """Layered option lookup: flag, then STYLERANK_<NAME> environment
    variable, then config file (command-scoped key first), then default."""

    def __init__(self, args: argparse.Namespace, config: dict[str, str]):
        self._args = vars(args)
        self._config = config
        self.command = args.command

    def get(self, name: str, default=None, cast=None, required: bool = False):
        value = self._args.get(name)
        if value is None:
            value = os.environ.get("STYLERANK_" + name.upper())
        if value is None:
            value = self._config.get(f"{self.command}.{name}",
                                     self._config.get(name))
        if value is None:
            if required:
                raise CliError(
                    f"missing required option --{name.replace('_', '-')} "
                    f"(or STYLERANK_{name.upper()})")
            return default
        if cast is not None and isinstance(value, str):
            try:
                return cast(value)
            except ValueError as exc:
                raise CliError(f"bad value for --{name.replace('_', '-')}: {exc}") from exc
        return value

    def seed(self) -> int:
        value = self.get("seed", cast=int, required=True)
        if value < 0:
            raise CliError("--seed must be a nonnegative integer")
        return value


def _add(parser: argparse.ArgumentParser, *names, **kwargs) -> None:
    # defaults stay None so the layered lookup can see absent flags
    kwargs.setdefault("default", None)
    parser.add_argument(*names, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylerank",
        description="Style-compatibility ranking pipeline")
    parser.add_argument("--config", default=None,
                        help="key=value config file merged below flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add(p, "--n", type=int, help="number of images")
    _add(p, "--seed", type=int)
    _add(p, "--out-dir", dest="out_dir")
    _add(p, "--d", type=int, help="feature dimension (default 512)")
    _add(p, "--experts", type=int)
    _add(p, "--concentration", type=float)
    _add(p, "--label-noise", dest="label_noise", type=float)
    _add(p, "--feature-noise", dest="feature_noise", type=float)
    _add(p, "--images-per-item", dest="images_per_item", type=int)

    p = sub.add_parser("ingest", help="ingest annotations and assign splits")
    _add(p, "--annotations")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--fractions")
    _add(p, "--styles")

    p = sub.add_parser("gen-comparisons", help="sample comparison labels")
    _add(p, "--store")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--t", type=int)
    _add(p, "--n", type=int, help="requested comparison count")
    _add(p, "--split")

    p = sub.add_parser("train", help="train the style head on comparisons")
    _add(p, "--store")
    _add(p, "--features")
    _add(p, "--comparisons")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--l2", type=float)
    _add(p, "--learning-rate", dest="learning_rate", type=float)
    _add(p, "--batch-size", dest="batch_size", type=int)
    _add(p, "--epochs", type=int)
    _add(p, "--patience", type=int)
    _add(p, "--metrics", help="optional per-epoch metrics JSONL")
    _add(p, "--clean-thresholds", dest="clean_thresholds",
         help="per-style minimum counts for the validation truth")
    _add(p, "--on-logits", dest="on_logits", action="store_const", const=True,
         help="compare pre-softmax scores instead of softmax outputs")

    p = sub.add_parser("grid-search", help="sweep l2, t, and comparison count")
    _add(p, "--store")
    _add(p, "--features")
    _add(p, "--out")
    _add(p, "--table", help="optional JSON results table")
    _add(p, "--seed", type=int)
    _add(p, "--lambdas")
    _add(p, "--thresholds")
    _add(p, "--counts")
    _add(p, "--learning-rate", dest="learning_rate", type=float)
    _add(p, "--batch-size", dest="batch_size", type=int)
    _add(p, "--epochs", type=int)
    _add(p, "--patience", type=int)
    _add(p, "--clean-thresholds", dest="clean_thresholds")

    p = sub.add_parser("embed", help="export style embeddings for images")
    _add(p, "--model")
    _add(p, "--features")
    _add(p, "--out")

    p = sub.add_parser("build-index", help="precompute the compatibility index")
    _add(p, "--registry")
    _add(p, "--embeddings")
    _add(p, "--out")

    p = sub.add_parser("eval", help="write the evaluation report")
    _add(p, "--model")
    _add(p, "--features")
    _add(p, "--store")
    _add(p, "--out")
    _add(p, "--csv")
    _add(p, "--split")
    _add(p, "--ks")
    _add(p, "--clean-thresholds", dest="clean_thresholds")

    p = sub.add_parser("suggest", help="rank compatible items for a seed")
    _add(p, "--index")
    _add(p, "--seed-item", dest="seed_item")
    _add(p, "--class", dest="class_name")
    _add(p, "--k", type=int)

    p = sub.add_parser("serve", help="run the HTTP suggestion service")
    _add(p, "--index")
    _add(p, "--scenes")
    _add(p, "--host")
    _add(p, "--port", type=int)
    _add(p, "--ui", help="directory with the built scene-builder frontend")

    return parser


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _cmd_synth(opts: Options) -> int:
    import pathlib

    n = opts.get("n", cast=int, required=True)
    seed = opts.seed()
    out_dir = pathlib.Path(opts.get("out_dir", required=True))
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = synthetic.generate_corpus(
        n, seed,
        n_experts=opts.get("experts", 10, cast=int),
        d=opts.get("d", 512, cast=int),
        concentration=opts.get("concentration", 0.3, cast=float),
        label_noise=opts.get("label_noise", 0.25, cast=float),
        feature_noise=opts.get("feature_noise", 0.05, cast=float),
        images_per_item=opts.get("images_per_item", 3, cast=int))
    dataset.save_annotations(corpus.store(), out_dir / "annotations.jsonl")
    dataset.save_features(corpus.features, out_dir / "features.styf")
    compat.save_registry(corpus.registry(), out_dir / "registry.json")
    _emit({"command": "synth", "images": n, "items": len(corpus.furniture),
           "experts": opts.get("experts", 10, cast=int),
           "out_dir": str(out_dir)})
    return 0


def _cmd_ingest(opts: Options) -> int:
    path = opts.get("annotations", required=True)
    out = opts.get("out", required=True)
    seed = opts.seed()
    fractions = opts.get("fractions", dataset.DEFAULT_FRACTIONS, cast=_csv_floats)
    styles = opts.get("styles", dataset.DEFAULT_STYLES, cast=_csv_strs)
    store = dataset.load_annotations(path, styles)
    splits = dataset.assign_splits(store.images(), fractions, seed)
    dataset.save_store(store, splits, out, seed=seed, fractions=fractions)
    sizes = {s: sum(1 for v in splits.values() if v == s) for s in dataset.SPLITS}
    _emit({"command": "ingest", "images": len(store.images()),
           "annotations": len(store), "experts": store.num_experts,
           "splits": sizes, "out": str(out)})
    return 0


def _cmd_gen_comparisons(opts: Options) -> int:
    store, splits = dataset.load_store(opts.get("store", required=True))
    out = opts.get("out", required=True)
    config = comparisons.ComparisonConfig(
        t=opts.get("t", comparisons.DEFAULT_THRESHOLD, cast=int),
        n_c=opts.get("n", cast=int, required=True),
        seed=opts.seed(),
        split=opts.get("split", "train"))
    labels = comparisons.sample_comparisons(store, config, splits)
    comparisons.save_comparisons(labels, store.styles, out)
    _emit({"command": "gen-comparisons", "requested": config.n_c,
           "written": len(labels), "t": config.t, "split": config.split,
           "out": str(out)})
    return 0


def _clean_spec(opts: Options) -> dataset.ValidationSetSpec | None:
    raw = opts.get("clean_thresholds", cast=_csv_ints)
    if raw is None:
        return None
    return dataset.ValidationSetSpec(raw)


def _train_config(opts: Options, seed: int, l2: float) -> stylenet.TrainConfig:
    return stylenet.TrainConfig(
        seed=seed,
        learning_rate=opts.get("learning_rate", 1e-4, cast=float),
        l2=l2,
        batch_size=opts.get("batch_size", 256, cast=int),
        max_epochs=opts.get("epochs", 100, cast=int),
        early_stop_patience=opts.get("patience", 10, cast=int),
        on_logits=bool(opts.get("on_logits", False)))


def _load_dataset(opts: Options) -> dataset.Dataset:
    store, splits = dataset.load_store(opts.get("store", required=True))
    features = dataset.load_features(opts.get("features", required=True))
    return dataset.Dataset(features, store, splits)


def _cmd_train(opts: Options) -> int:
    data = _load_dataset(opts)
    labels = comparisons.load_comparisons(
        opts.get("comparisons", required=True), data.annotations.styles)
    seed = opts.seed()
    config = _train_config(opts, seed, opts.get("l2", 0.0, cast=float))
    result = stylenet.train(data, labels, config,
                            clean_spec=_clean_spec(opts),
                            metrics_path=opts.get("metrics"))
    out = opts.get("out", required=True)
    stylenet.save_checkpoint(result.head, out, seed=seed, config=config)
    last = result.history[-1] if result.history else None
    _emit({"command": "train", "comparisons": len(labels),
           "epochs_run": len(result.history),
           "best_epoch": result.best_epoch,
           "final_train_loss": last.train_loss if last else None,
           "final_val_acc": last.val_accuracy if last else None,
           "out": str(out)})
    return 0


def _cmd_grid_search(opts: Options) -> int:
    data = _load_dataset(opts)
    seed = opts.seed()
    grid = stylenet.GridSpec(
        lambdas=opts.get("lambdas", (0.002, 0.0002, 0.00002), cast=_csv_floats),
        thresholds=opts.get("thresholds", (1, 2, 3), cast=_csv_ints),
        comparison_counts=opts.get("counts", cast=_csv_ints, required=True))
    base = _train_config(opts, seed, 0.0)
    result = stylenet.grid_search(data, grid, base, clean_spec=_clean_spec(opts))
    out = opts.get("out", required=True)
    stylenet.save_checkpoint(result.head, out, seed=seed, config=base)
    table = [{"l2": c.l2, "t": c.t, "n_c": c.n_c, "seed": c.seed,
              "val_accuracy": c.val_accuracy, "error": c.error}
             for c in result.table]
    table_path = opts.get("table")
    if table_path:
        with open(table_path, "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _emit({"command": "grid-search", "cells": len(table),
           "failed": sum(1 for c in result.table if c.error),
           "best": {"l2": result.best.l2, "t": result.best.t,
                    "n_c": result.best.n_c,
                    "val_accuracy": result.best.val_accuracy},
           "out": str(out)})
    return 0


def _cmd_embed(opts: Options) -> int:
    head, _ = stylenet.load_checkpoint(opts.get("model", required=True))
    features = dataset.load_features(opts.get("features", required=True))
    out = opts.get("out", required=True)
    hidden = stylenet.extract_embedding(
        head, np.asarray(features.matrix, dtype=np.float64))
    table = dataset.FeatureTable(features.ids, hidden.astype(np.float32))
    dataset.save_features(table, out)
    _emit({"command": "embed", "images": len(table), "dim": table.d,
           "out": str(out)})
    return 0


def _cmd_build_index(opts: Options) -> int:
    registry = compat.load_registry(opts.get("registry", required=True))
    embeddings = dataset.load_features(opts.get("embeddings", required=True))
    out = opts.get("out", required=True)
    index = compat.build_index(registry, embeddings)
    compat.save_index(index, out)
    _emit({"command": "build-index", "rankable": index.n_items,
           "unrankable": len(index.unrankable),
           "generation": index.generation, "out": str(out)})
    return 0


def _cmd_eval(opts: Options) -> int:
    head, _ = stylenet.load_checkpoint(opts.get("model", required=True))
    data = _load_dataset(opts)
    report = evaluation.evaluation_report(
        head, data,
        split=opts.get("split", "test"),
        ks=opts.get("ks", (1, 5), cast=_csv_ints),
        clean_spec=_clean_spec(opts))
    out = opts.get("out", required=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = opts.get("csv")
    if csv_path:
        evaluation.write_report_csv(report, csv_path)
    _emit({"command": "eval", "split": report["split"],
           "accuracy": report["accuracy"]["overall"],
           "map": report["retrieval"]["map"], "out": str(out)})
    return 0


def _cmd_suggest(opts: Options) -> int:
    index = compat.load_index(opts.get("index", required=True))
    ranked = compat.rank_single_seed(
        index,
        opts.get("seed_item", required=True),
        opts.get("class_name", required=True),
        opts.get("k", 150, cast=int))
    print("rank,furniture_id,distance")
    for rank, (fid, dist) in enumerate(ranked, start=1):
        print(f"{rank},{fid},{dist!r}")
    return 0


def _cmd_serve(opts: Options) -> int:
    import uvicorn

    from .service import SceneStore, create_app

    index = compat.load_index(opts.get("index", required=True))
    scenes = SceneStore(opts.get("scenes", "scenes.jsonl"))
    app = create_app(index, scenes, ui_dir=opts.get("ui"))
    uvicorn.run(app,
                host=opts.get("host", "127.0.0.1"),
                port=opts.get("port", 8000, cast=int))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "gen-comparisons": _cmd_gen_comparisons,
    "train": _cmd_train,
    "grid-search": _cmd_grid_search,
    "embed": _cmd_embed,
    "build-index": _cmd_build_index,
    "eval": _cmd_eval,
    "suggest": _cmd_suggest,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config) if args.config else {}
        opts = Options(args, config)
        return _COMMANDS[args.command](opts)
    except (StyleRankError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
