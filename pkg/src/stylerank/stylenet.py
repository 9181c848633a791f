"""Trainable style head and its comparison-based training loop.

The head is a pair of fully connected layers: a 16-wide ReLU hidden
layer (whose activations double as the style embedding) followed by a
softmax over the styles. Training consumes signed pairwise comparisons
with a Bradley-Terry negative log-likelihood; both images of a pair run
through the same weights and the loss sees only the difference of their
per-style outputs. All math is float64 numpy, gradients are analytic,
and every run is deterministic for a fixed seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import comparisons as comparisons_mod
from .comparisons import ComparisonConfig, ComparisonLabel
from .dataset import Dataset, FeatureTable, ValidationSetSpec
from .errors import DivergenceError, FormatError, StyleRankError

EMBEDDING_DIM = 16
_CHECKPOINT_FORMAT = "stylerank-head"
_CHECKPOINT_VERSION = 1
_BLOCKS = ("w1", "b1", "w2", "b2")


@dataclass
class StyleHead:
    """Parameters of the two fully connected layers."""

    w1: np.ndarray  # (d, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, n_styles)
    b2: np.ndarray  # (n_styles,)

    def __post_init__(self):
        for name in _BLOCKS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("weight blocks must be matrices")
        if self.b1.shape != (self.w1.shape[1],):
            raise ValueError("b1 shape does not match w1")
        if self.w2.shape[0] != self.w1.shape[1]:
            raise ValueError("w2 rows must match the hidden width")
        if self.b2.shape != (self.w2.shape[1],):
            raise ValueError("b2 shape does not match w2")
        for name in _BLOCKS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"parameter block {name} contains non-finite values")

    @property
    def d(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def n_styles(self) -> int:
        return int(self.w2.shape[1])

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _BLOCKS}

    def copy(self) -> "StyleHead":
        return StyleHead(*(getattr(self, name).copy() for name in _BLOCKS))

    @classmethod
    def zeros(cls, d: int, n_styles: int = 4,
              hidden_dim: int = EMBEDDING_DIM) -> "StyleHead":
        return cls(np.zeros((d, hidden_dim)), np.zeros(hidden_dim),
                   np.zeros((hidden_dim, n_styles)), np.zeros(n_styles))

    @classmethod
    def initialize(cls, d: int, n_styles: int, rng: np.random.Generator,
                   hidden_dim: int = EMBEDDING_DIM) -> "StyleHead":
        """Uniform Glorot weights (limit sqrt(6/(fan_in+fan_out))), zero biases."""
        lim1 = np.sqrt(6.0 / (d + hidden_dim))
        lim2 = np.sqrt(6.0 / (hidden_dim + n_styles))
        return cls(rng.uniform(-lim1, lim1, (d, hidden_dim)),
                   np.zeros(hidden_dim),
                   rng.uniform(-lim2, lim2, (hidden_dim, n_styles)),
                   np.zeros(n_styles))


@dataclass(frozen=True)
class ForwardResult:
    """Hidden activations (the embedding) and softmax style scores."""

    hidden: np.ndarray
    probs: np.ndarray


def _forward_batch(head: StyleHead, batch: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(hidden, logits, probs) for a 2-D batch."""
    hidden = np.maximum(batch @ head.w1 + head.b1, 0.0)
    logits = hidden @ head.w2 + head.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=1, keepdims=True)
    return hidden, logits, probs


def forward(head: StyleHead, x: np.ndarray) -> ForwardResult:
    """Run the head on one feature vector or a batch of them.

    The softmax subtracts the row max first, so scores stay finite for
    any finite input.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = np.atleast_2d(x)
    if batch.ndim != 2 or batch.shape[1] != head.d:
        raise ValueError(f"expected feature dimension {head.d}, got shape {x.shape}")
    hidden, _, probs = _forward_batch(head, batch)
    if single:
        return ForwardResult(hidden[0], probs[0])
    return ForwardResult(hidden, probs)


def extract_embedding(head: StyleHead, x: np.ndarray) -> np.ndarray:
    """Post-ReLU hidden activations; all components are nonnegative."""
    return forward(head, x).hidden


def comparison_predict(head: StyleHead, x_i: np.ndarray, x_j: np.ndarray,
                       style: int, on_logits: bool = False) -> float:
    """Predicted comparison score: the style's output for image i minus
    the same output for image j (softmax scores by default)."""
    if not 0 <= style < head.n_styles:
        raise ValueError(f"style index {style} out of range")
    batch = np.asarray([x_i, x_j], dtype=np.float64)
    if batch.shape[1] != head.d:
        raise ValueError(f"expected feature dimension {head.d}")
    _, logits, probs = _forward_batch(head, batch)
    source = logits if on_logits else probs
    return float(source[0, style] - source[1, style])


def bt_loss(y: int, y_hat: float) -> float:
    """Bradley-Terry negative log-likelihood log(1 + exp(-y * y_hat)),
    evaluated via logaddexp so large magnitudes cannot overflow."""
    if y not in (1, -1):
        raise ValueError("y must be +1 or -1")
    return float(np.logaddexp(0.0, -y * float(y_hat)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Gradients:
    """Per-block gradients, same shapes as the head."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _BLOCKS}

    @classmethod
    def zeros_like(cls, head: StyleHead) -> "Gradients":
        return cls(*(np.zeros_like(getattr(head, name)) for name in _BLOCKS))


# overflow inside the gradient math surfaces as inf/nan and the finiteness
# guards turn it into DivergenceError; the numpy warnings are just noise
@np.errstate(over="ignore", invalid="ignore")
def batch_gradient(head: StyleHead, x_i: np.ndarray, x_j: np.ndarray,
                   styles: np.ndarray, ys: np.ndarray, l2: float = 0.0,
                   on_logits: bool = False) -> tuple[Gradients, float]:
    """Objective and analytic gradients for one comparison batch.

    The objective is mean softplus(-y * y_hat) plus ``l2`` times the sum
    of squared parameters over all four blocks; both siamese branches
    contribute to the shared weights. An empty batch leaves only the
    regularizer. Raises DivergenceError on a non-finite result.
    """
    if l2 < 0:
        raise ValueError("l2 must be nonnegative")
    styles = np.asarray(styles, dtype=np.int64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    n = len(styles)
    if len(ys) != n:
        raise ValueError("styles and ys must have equal length")
    grads = Gradients.zeros_like(head)
    loss = 0.0
    if n:
        xi = np.atleast_2d(np.asarray(x_i, dtype=np.float64))
        xj = np.atleast_2d(np.asarray(x_j, dtype=np.float64))
        if xi.shape != (n, head.d) or xj.shape != (n, head.d):
            raise ValueError("feature batches must have shape (len(ys), d)")
        if not np.all(np.isin(ys, (-1.0, 1.0))):
            raise ValueError("every y must be +1 or -1")
        if styles.min() < 0 or styles.max() >= head.n_styles:
            raise ValueError("style index out of range")
        hi, li, pi = _forward_batch(head, xi)
        hj, lj, pj = _forward_batch(head, xj)
        rows = np.arange(n)
        if on_logits:
            y_hat = li[rows, styles] - lj[rows, styles]
        else:
            y_hat = pi[rows, styles] - pj[rows, styles]
        z = ys * y_hat
        loss = float(np.mean(np.logaddexp(0.0, -z)))
        g_hat = -ys * _sigmoid(-z) / n  # d(mean loss)/d(y_hat)
        if on_logits:
            gi = np.zeros_like(li)
            gi[rows, styles] = g_hat
            gj = np.zeros_like(lj)
            gj[rows, styles] = -g_hat
        else:
            # softmax jacobian against the selected style's output
            sel_i = g_hat * pi[rows, styles]
            gi = -sel_i[:, None] * pi
            gi[rows, styles] += sel_i
            sel_j = -g_hat * pj[rows, styles]
            gj = -sel_j[:, None] * pj
            gj[rows, styles] += sel_j
        grads.w2 += hi.T @ gi + hj.T @ gj
        grads.b2 += gi.sum(axis=0) + gj.sum(axis=0)
        ghi = (gi @ head.w2.T) * (hi > 0)  # ReLU subgradient at 0 is 0
        ghj = (gj @ head.w2.T) * (hj > 0)
        grads.w1 += xi.T @ ghi + xj.T @ ghj
        grads.b1 += ghi.sum(axis=0) + ghj.sum(axis=0)
    if l2:
        for name, param in head.blocks().items():
            block = getattr(grads, name)
            block += 2.0 * l2 * param
            loss += l2 * float((param * param).sum())
    if not np.isfinite(loss):
        raise DivergenceError("objective is not finite")
    for name, block in grads.blocks().items():
        if not np.all(np.isfinite(block)):
            raise DivergenceError(f"gradient block {name} is not finite")
    return grads, loss


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule knobs; the seed is mandatory."""

    seed: int
    learning_rate: float = 1e-4
    l2: float = 0.0
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 100
    early_stop_patience: int = 10
    on_logits: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must sit strictly inside (0, 1)")
        if self.rmsprop_epsilon <= 0:
            raise ValueError("rmsprop_epsilon must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be at least 1")


@dataclass
class RmsPropState:
    """Running mean of squared gradients, one cache per block."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _BLOCKS}

    @classmethod
    def zeros_like(cls, head: StyleHead) -> "RmsPropState":
        return cls(*(np.zeros_like(getattr(head, name)) for name in _BLOCKS))


def rmsprop_step(head: StyleHead, grads: Gradients, state: RmsPropState,
                 config: TrainConfig) -> tuple[StyleHead, RmsPropState]:
    """One RMSProp update; inputs are left untouched.

    cache <- decay * cache + (1 - decay) * grad^2
    param <- param - lr * grad / (sqrt(cache) + epsilon)
    """
    new_params: dict[str, np.ndarray] = {}
    new_cache: dict[str, np.ndarray] = {}
    for name, param in head.blocks().items():
        grad = getattr(grads, name)
        cache = (config.rmsprop_decay * getattr(state, name)
                 + (1.0 - config.rmsprop_decay) * grad * grad)
        new_cache[name] = cache
        new_params[name] = param - config.learning_rate * grad / (np.sqrt(cache)
                                                                  + config.rmsprop_epsilon)
    return StyleHead(**new_params), RmsPropState(**new_cache)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float | None


@dataclass
class TrainResult:
    """Final head plus the per-epoch history.

    ``best_epoch`` names the epoch whose parameters were kept when
    validation-based early stopping was active, else None.
    """

    head: StyleHead
    history: list[EpochStats]
    best_epoch: int | None


def _accuracy(head: StyleHead, x: np.ndarray, y: np.ndarray) -> float:
    preds = forward(head, x).probs.argmax(axis=1)
    return float(np.mean(preds == y))


def _validation_data(dataset: Dataset, spec: ValidationSetSpec | None
                     ) -> tuple[np.ndarray, np.ndarray] | None:
    x, y, ids = dataset.clean_truth("validation", spec)
    if not ids:
        return None
    return x, y


def _fit(head: StyleHead, n_samples: int,
         grad_for: Callable[[StyleHead, np.ndarray], tuple[Gradients, float]],
         config: TrainConfig, rng: np.random.Generator,
         val_data: tuple[np.ndarray, np.ndarray] | None
         ) -> tuple[StyleHead, list[EpochStats], int | None]:
    """Shared epoch loop: shuffled mini-batches, RMSProp, and optional
    early stopping on validation accuracy (strict improvements only)."""
    state = RmsPropState.zeros_like(head)
    history: list[EpochStats] = []
    best_head = head
    best_acc = -np.inf
    best_epoch: int | None = None
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, config.batch_size):
            sel = order[start:start + config.batch_size]
            try:
                grads, loss = grad_for(head, sel)
                head, state = rmsprop_step(head, grads, state, config)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            except ValueError as exc:
                # parameter overflow surfaces as a head-construction error
                if "finite" in str(exc):
                    raise DivergenceError(f"epoch {epoch}: {exc}") from exc
                raise
            total += loss * len(sel)
        train_loss = total / n_samples
        val_acc = None
        if val_data is not None:
            val_acc = _accuracy(head, *val_data)
            if val_acc > best_acc:
                best_acc = val_acc
                best_head = head.copy()
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
        history.append(EpochStats(epoch, train_loss, val_acc))
        if val_data is not None and stale >= config.early_stop_patience:
            break
    if best_epoch is not None:
        head = best_head
    return head, history, best_epoch


def _comparison_indices(labels: Sequence[ComparisonLabel], features: FeatureTable
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    try:
        ii = np.array([features.row(c.i) for c in labels], dtype=np.int64)
        jj = np.array([features.row(c.j) for c in labels], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"comparison references an image without features: {exc}") from None
    styles = np.array([c.style for c in labels], dtype=np.int64)
    ys = np.array([c.y for c in labels], dtype=np.float64)
    return ii, jj, styles, ys


def train(dataset: Dataset, labels: Sequence[ComparisonLabel],
          config: TrainConfig, *,
          clean_spec: ValidationSetSpec | None = None,
          val_data: tuple[np.ndarray, np.ndarray] | None = None,
          metrics_path=None) -> TrainResult:
    """Train a freshly initialized head on comparison labels.

    Validation accuracy (on ``val_data`` or, by default, the plurality
    single-label truth of the dataset's validation split) drives early
    stopping; the best-epoch parameters are what comes back. Without any
    validation images all ``max_epochs`` epochs run and the final head
    is returned. ``max_epochs=0`` returns the initialization untouched.
    """
    if not labels:
        raise ValueError("comparison set is empty")
    x_all = np.asarray(dataset.features.matrix, dtype=np.float64)
    ii, jj, styles, ys = _comparison_indices(labels, dataset.features)
    for label in labels:
        if not 0 <= label.style < dataset.annotations.num_styles:
            raise ValueError(f"style index {label.style} out of range")
    if val_data is None:
        val_data = _validation_data(dataset, clean_spec)
    rng = np.random.default_rng(config.seed)
    head = StyleHead.initialize(dataset.features.d,
                                dataset.annotations.num_styles, rng)

    def grad_for(current: StyleHead, sel: np.ndarray) -> tuple[Gradients, float]:
        return batch_gradient(current, x_all[ii[sel]], x_all[jj[sel]],
                              styles[sel], ys[sel], l2=config.l2,
                              on_logits=config.on_logits)

    head, history, best_epoch = _fit(head, len(labels), grad_for, config,
                                     rng, val_data)
    result = TrainResult(head=head, history=history, best_epoch=best_epoch)
    if metrics_path is not None:
        write_metrics(result.history, metrics_path)
    return result


def write_metrics(history: Iterable[EpochStats], path) -> None:
    """Per-epoch metrics as JSON Lines: {"epoch", "train_loss", "val_acc"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for stats in history:
            fh.write(json.dumps({"epoch": stats.epoch,
                                 "train_loss": stats.train_loss,
                                 "val_acc": stats.val_accuracy},
                                sort_keys=True) + "\n")


@dataclass(frozen=True)
class GridSpec:
    """Axes of the hyperparameter sweep."""

    lambdas: tuple[float, ...] = (0.002, 0.0002, 0.00002)
    thresholds: tuple[int, ...] = (1, 2, 3)
    comparison_counts: tuple[int, ...] = (1000,)

    def __post_init__(self):
        if not (self.lambdas and self.thresholds and self.comparison_counts):
            raise ValueError("every grid axis needs at least one value")


@dataclass(frozen=True)
class GridCell:
    l2: float
    t: int
    n_c: int
    seed: int
    val_accuracy: float | None
    error: str | None


@dataclass
class GridSearchResult:
    table: list[GridCell]
    best: GridCell
    head: StyleHead


def _cell_rank(cell: GridCell) -> tuple:
    # ties prefer stronger regularization at lower cost
    return (-cell.val_accuracy, cell.l2, cell.n_c, cell.t)


def grid_search(dataset: Dataset, grid: GridSpec, base_config: TrainConfig, *,
                split: str = "train",
                clean_spec: ValidationSetSpec | None = None) -> GridSearchResult:
    """Sweep (l2, t, n_c) cells, each with freshly sampled comparisons.

    Every cell derives its own child seed from the base seed so adding
    cells never perturbs the others. Cells whose sampling or training
    fails are recorded with the error and skipped; the best cell by
    validation accuracy (ties to smaller l2, then n_c, then t) wins.
    """
    val_data = _validation_data(dataset, clean_spec)
    if val_data is None:
        raise ValueError("grid search requires validation-split images "
                         "with usable labels")
    table: list[GridCell] = []
    best_cell: GridCell | None = None
    best_head: StyleHead | None = None
    idx = 0
    for lam in grid.lambdas:
        for t in grid.thresholds:
            for n_c in grid.comparison_counts:
                seq = np.random.SeedSequence(base_config.seed, spawn_key=(idx,))
                cell_seed = int(seq.generate_state(1, dtype=np.uint64)[0])
                idx += 1
                try:
                    sample = comparisons_mod.sample_comparisons(
                        dataset.annotations,
                        ComparisonConfig(t=t, n_c=n_c, seed=cell_seed, split=split),
                        splits=dataset.splits)
                    result = train(dataset, sample,
                                   replace(base_config, l2=lam, seed=cell_seed),
                                   val_data=val_data)
                    acc = _accuracy(result.head, *val_data)
                except (StyleRankError, ValueError) as exc:
                    table.append(GridCell(lam, t, n_c, cell_seed, None, str(exc)))
                    continue
                cell = GridCell(lam, t, n_c, cell_seed, acc, None)
                table.append(cell)
                if best_cell is None or _cell_rank(cell) < _cell_rank(best_cell):
                    best_cell = cell
                    best_head = result.head
    if best_cell is None or best_head is None:
        raise StyleRankError("every grid cell failed")
    return GridSearchResult(table, best_cell, best_head)


def save_checkpoint(head: StyleHead, path, *, seed: int | None = None,
                    config: TrainConfig | None = None) -> None:
    """Write a checkpoint: one JSON header line, then the four parameter
    blocks as raw little-endian float32 in a fixed order."""
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "d": head.d,
        "hidden_dim": head.hidden_dim,
        "n_styles": head.n_styles,
        "seed": seed,
        "config": dataclasses.asdict(config) if config is not None else None,
        "blocks": list(_BLOCKS),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for param in head.blocks().values():
            fh.write(np.ascontiguousarray(param, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[StyleHead, dict]:
    """Read a checkpoint back; returns the head and the raw header."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("checkpoint header is not valid JSON") from exc
        if not isinstance(header, dict) or header.get("format") != _CHECKPOINT_FORMAT:
            raise FormatError("not a stylerank checkpoint")
        if header.get("version") != _CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {header.get('version')}")
        try:
            d = int(header["d"])
            hidden = int(header["hidden_dim"])
            n_styles = int(header["n_styles"])
        except (KeyError, TypeError, ValueError):
            raise FormatError("checkpoint header is missing dimensions") from None
        shapes = {"w1": (d, hidden), "b1": (hidden,),
                  "w2": (hidden, n_styles), "b2": (n_styles,)}
        blocks: dict[str, np.ndarray] = {}
        for name in _BLOCKS:
            count = int(np.prod(shapes[name]))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise FormatError(f"checkpoint truncated in block {name}")
            blocks[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64
                                                                  ).reshape(shapes[name])
        if fh.read(1):
            raise FormatError("trailing bytes after the last checkpoint block")
    try:
        return StyleHead(**blocks), header
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
