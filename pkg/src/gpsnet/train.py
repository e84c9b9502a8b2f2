"""Optimization loop: AdamW, warmup-cosine schedule, losses, metrics."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Value
from .encodings import EncodingSet, batch_encodings, compute_encodings
from .graph import Graph, batch_graphs

LOSS_KINDS = ("l1", "cross_entropy", "weighted_ce")
METRICS = ("mae", "accuracy")
CSV_FIELDS = ("epoch", "lr", "train_loss", "train_metric", "val_metric", "test_metric",
              "wall_seconds")


class TrainingError(FloatingPointError):
    pass


# -- optimizer and schedule -------------------------------------------------

def adamw_step(params: ParamStore, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """One AdamW update of every parameter that holds a gradient.

    Weight decay is applied to the parameter first and is not routed
    through the moment estimates.
    """
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    params.step += 1
    t = params.step
    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m, v = params.moments.get(name, (None, None))
        if m is None:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        params.moments[name] = (m, v)
        data = p.data
        if weight_decay:
            data = data - lr * weight_decay * data
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def warmup_cosine_lr(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("need 0 <= warmup_steps < total_steps")
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


# -- losses and metrics -----------------------------------------------------

def loss(pred: Value, target, kind: str = "l1") -> Value:
    """Scalar training loss.

    ``l1`` takes a float target of the same shape as ``pred``. The two
    cross-entropy kinds take integer class labels, one per row of ``pred``;
    ``weighted_ce`` weights each class by its inverse frequency in the
    batch, normalized so the weights of present classes average to one.
    """
    target = np.asarray(target)
    if kind == "l1":
        target = target.astype(np.float64).reshape(pred.shape) \
            if target.size == pred.data.size else target
        if target.shape != pred.shape:
            raise ValueError(f"l1 target shape {target.shape} != prediction {pred.shape}")
        return ad.mean(ad.absolute(pred - target))
    if kind not in ("cross_entropy", "weighted_ce"):
        raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    labels = target.reshape(-1).astype(np.int64)
    n, c = pred.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} prediction rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"class labels must lie in [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    if kind == "weighted_ce":
        counts = np.bincount(labels, minlength=c).astype(np.float64)
        present = counts > 0
        w = np.zeros(c)
        w[present] = 1.0 / counts[present]
        w *= present.sum() / w[present].sum() if present.any() else 1.0
        rows = w[labels]
        weights = onehot * (rows / rows.sum())[:, None]
        return -ad.total(ad.log_softmax_rows(pred) * weights)
    return -ad.total(ad.log_softmax_rows(pred) * (onehot / n))


def metric_value(pred: np.ndarray, target: np.ndarray, metric: str) -> float:
    if metric == "mae":
        return float(np.mean(np.abs(pred.reshape(-1) - np.asarray(target, float).reshape(-1))))
    if metric == "accuracy":
        return float(np.mean(np.argmax(pred, axis=1) == np.asarray(target).reshape(-1)))
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


# -- data -------------------------------------------------------------------

@dataclass
class Dataset:
    """Graphs with their precomputed encodings (``encs`` may be None)."""

    graphs: list
    encs: list | None = None

    def __len__(self):
        return len(self.graphs)

    def batch(self, idx: Sequence[int]):
        gs = [self.graphs[i] for i in idx]
        b = batch_graphs(gs)
        enc = batch_encodings([self.encs[i] for i in idx], b) if self.encs else None
        return b, enc

    def subset(self, idx) -> "Dataset":
        return Dataset([self.graphs[i] for i in idx],
                       [self.encs[i] for i in idx] if self.encs else None)


def make_dataset(graphs: Sequence[Graph], lap_k: int | None = None, rwse_m: int | None = None,
                 rel: bool = False) -> Dataset:
    if not (lap_k or rwse_m):
        return Dataset(list(graphs))
    encs = [compute_encodings(g, lap_k=lap_k, rwse_m=rwse_m, rel=rel) for g in graphs]
    return Dataset(list(graphs), encs)


def _targets(batch, task: str, loss_kind: str):
    y = batch.graph_targets() if task == "graph" else batch.node_targets()
    if loss_kind == "l1":
        return np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    return np.asarray(y).reshape(-1).astype(np.int64)


# -- loop -------------------------------------------------------------------

@dataclass
class BestRecord:
    epoch: int = -1
    val_metric: float = math.nan
    snapshot: dict | None = None


@dataclass
class TrainState:
    model: object
    step: int = 0
    epoch: int = 0
    rngs: dict = field(default_factory=dict)
    best: BestRecord = field(default_factory=BestRecord)

    @property
    def params(self) -> ParamStore:
        return self.model.store

    def rng(self, name: str) -> np.random.Generator:
        return ad.rng_stream(self.model.cfg.seed, name, self.epoch)


@dataclass
class TrainSettings:
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 100
    warmup_epochs: int = 5
    loss: str = "l1"
    metric: str = "mae"
    eval_batch_size: int = 256
    train_eval_every: int = 1
    redraw_features: bool = False

    def steps_per_epoch(self, n: int) -> int:
        return -(-n // self.batch_size)

    def total_steps(self, n: int) -> int:
        return self.epochs * self.steps_per_epoch(n)

    def warmup_steps(self, n: int) -> int:
        return self.warmup_epochs * self.steps_per_epoch(n)


def evaluate(model, dataset: Dataset, metric: str = "mae", batch_size: int = 256) -> float:
    """Eval-mode metric over a whole dataset."""
    if len(dataset) == 0:
        return math.nan
    preds, ys = predict(model, dataset, batch_size)
    return metric_value(preds, ys, metric)


def predict(model, dataset: Dataset, batch_size: int = 256):
    task = model.cfg.task
    preds, ys = [], []
    for start in range(0, len(dataset), batch_size):
        b, enc = dataset.batch(range(start, min(len(dataset), start + batch_size)))
        preds.append(model.forward(b, enc, training=False).data)
        ys.append(b.graph_targets() if task == "graph" else b.node_targets())
    return np.concatenate(preds), np.concatenate([np.asarray(y).reshape(len(y), -1) for y in ys])


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_metric: float
    seconds: float


def train_epoch(state: TrainState, dataset: Dataset, settings: TrainSettings) -> EpochMetrics:
    """Shuffle, then one optimizer step per mini-batch.

    The reported ``train_metric`` is an eval-mode pass over the training
    set after the last step. It is computed every ``train_eval_every``
    epochs and at the final epoch, and is NaN otherwise.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    t0 = time.perf_counter()
    model, store = state.model, state.params
    n = len(dataset)
    total = settings.total_steps(n)
    warm = settings.warmup_steps(n)
    if settings.redraw_features:
        model.redraw_features(state.rng("features"))
    order = state.rng("shuffle").permutation(n)
    drop_rng = state.rng("dropout")
    losses, weights = [], []
    lr = 0.0
    for bi, start in enumerate(range(0, n, settings.batch_size)):
        idx = order[start:start + settings.batch_size]
        batch, enc = dataset.batch(idx)
        lr = warmup_cosine_lr(min(state.step, total), settings.lr, warm, total)
        store.zero_grads()
        out = model.forward(batch, enc, training=True, rng=drop_rng)
        lval = loss(out, _targets(batch, model.cfg.task, settings.loss), settings.loss)
        if not np.isfinite(lval.data):
            raise TrainingError(f"non-finite loss at epoch {state.epoch}, batch {bi}")
        lval.backward()
        adamw_step(store, lr, weight_decay=settings.weight_decay)
        state.step += 1
        losses.append(float(lval.data))
        weights.append(len(idx))
    train_loss = float(np.average(losses, weights=weights))
    state.epoch += 1
    k = settings.train_eval_every
    due = state.epoch == settings.epochs or (k > 0 and state.epoch % k == 0)
    train_metric = (evaluate(model, dataset, settings.metric, settings.eval_batch_size)
                    if due else math.nan)
    return EpochMetrics(state.epoch, lr, train_loss, train_metric, time.perf_counter() - t0)


def is_better(metric: str, new: float, old: float) -> bool:
    if math.isnan(old):
        return not math.isnan(new)
    return new < old if metric == "mae" else new > old


def fit(state: TrainState, train: Dataset, val: Dataset | None, test: Dataset | None,
        settings: TrainSettings, on_epoch=None) -> list[dict]:
    """Train for ``settings.epochs`` epochs, keeping the best-validation snapshot.

    Returns one CSV-ready row per epoch. ``on_epoch(row)`` is called after
    each epoch. The model holds the best-validation parameters on return.
    """
    rows = []
    t_start = time.perf_counter()
    for _ in range(settings.epochs):
        em = train_epoch(state, train, settings)
        t_eval = time.perf_counter()
        val_m = evaluate(state.model, val, settings.metric, settings.eval_batch_size) if val else math.nan
        test_m = evaluate(state.model, test, settings.metric, settings.eval_batch_size) if test else math.nan
        if is_better(settings.metric, val_m, state.best.val_metric) or state.best.snapshot is None:
            state.best = BestRecord(em.epoch, val_m, state.params.snapshot())
        row = {"epoch": em.epoch, "lr": em.lr, "train_loss": em.train_loss,
               "train_metric": em.train_metric, "val_metric": val_m, "test_metric": test_m,
               "wall_seconds": time.perf_counter() - t_start,
               "train_seconds": em.seconds, "eval_seconds": time.perf_counter() - t_eval}
        rows.append(row)
        if on_epoch:
            on_epoch(row)
    if state.best.snapshot is not None:
        state.params.restore(state.best.snapshot)
    return rows
