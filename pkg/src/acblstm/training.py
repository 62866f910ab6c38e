"""Epoch loop, evaluation and model selection."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import EncodedDataset
from .errors import ContractError, NumericError
from .gan import SemiSupervised, semisup_train_step
from .model import AcBlstmModel, predict
from .optim import RMSprop, clip_global, collect_grads


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    sum_norm_mean: float
    sum_norm_max: float
    loss_g: float = float("nan")
    val_acc: float | None = None
    seconds: float = 0.0


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def make_optimizer(cfg: TrainConfig) -> RMSprop:
    return RMSprop(cfg.learning_rate, cfg.rho, cfg.rms_eps)


def train_step(model: AcBlstmModel, x: np.ndarray, y: np.ndarray, optimizer: RMSprop,
               cfg: TrainConfig):
    """Forward, loss, backward, clip, update. Returns (loss, pre-clip norm, correct)."""
    params = model.parameters()
    T.zero_grads(params.values())
    logits = model.forward(x, mode="train")
    loss = T.softmax_cross_entropy(logits, y)
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    T.backward(loss)
    grads, norm = clip_global(collect_grads(params), cfg.clip_threshold, cfg.clip_mode)
    optimizer.step(params, grads)
    k = model.config.num_classes
    correct = int((logits.data[:, :k].argmax(axis=1) == y).sum())
    return float(loss.data), norm, correct


def _batches(order: np.ndarray, size: int, drop_last: bool):
    n = len(order)
    if n < size:
        if drop_last and n < 2:
            raise ContractError("need at least two examples to train")
        yield order
        return
    stop = n - n % size if drop_last else n
    for start in range(0, stop, size):
        yield order[start:start + size]


def train_epoch(model: AcBlstmModel, data: EncodedDataset, cfg: TrainConfig,
                optimizer: RMSprop, rng: np.random.Generator,
                gan: SemiSupervised | None = None, epoch: int = 0) -> EpochMetrics:
    """One seeded pass over shuffled mini-batches.

    The embedding table is only read. With ``gan`` set, each batch holds
    ``round(batch_size * p_g)`` generated samples and the rest real ones.
    """
    if len(data) == 0:
        raise ContractError("empty dataset")
    start = time.perf_counter()
    gen_count = gan.config.fake_count(cfg.batch_size) if gan is not None else 0
    real_size = cfg.batch_size - gen_count
    order = rng.permutation(len(data))
    losses, norms, losses_g = [], [], []
    correct = seen = 0
    for b, idx in enumerate(_batches(order, real_size, drop_last=True)):
        x, y = data.matrices(idx), data.labels[idx]
        try:
            if gan is None:
                loss, norm, ok = train_step(model, x, y, optimizer, cfg)
            else:
                step = semisup_train_step(model, gan, x, y, optimizer, cfg, gen_count)
                loss, norm, ok = step.loss_d, step.sum_norm, step.correct
                losses_g.append(step.loss_g)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
        losses.append(loss)
        norms.append(norm)
        correct += ok
        seen += len(idx)
    return EpochMetrics(
        epoch=epoch, loss=float(np.mean(losses)), train_acc=correct / seen,
        sum_norm_mean=float(np.mean(norms)), sum_norm_max=float(np.max(norms)),
        loss_g=float(np.mean(losses_g)) if losses_g else float("nan"),
        seconds=time.perf_counter() - start)


def evaluate(model: AcBlstmModel, data: EncodedDataset, batch_size: int = 100) -> EvalResult:
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    k = model.config.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for idx in _batches(np.arange(len(data)), batch_size, drop_last=False):
        pred, _ = predict(model, data.matrices(idx))
        np.add.at(confusion, (data.labels[idx], pred), 1)
    return EvalResult(float(np.trace(confusion)) / len(data), confusion)


@dataclass
class FitResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float | None = None


def fit(model: AcBlstmModel, train: EncodedDataset, cfg: TrainConfig,
        val: EncodedDataset | None = None, gan: SemiSupervised | None = None,
        on_epoch=None) -> FitResult:
    """Train for ``cfg.epochs``; keep the best-validation weights when a
    validation set is given, otherwise the final ones."""
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(cfg)
    result = FitResult()
    best_state = None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        metrics = train_epoch(model, train, cfg, optimizer, rng, gan, epoch)
        if val is not None and epoch % cfg.eval_every == 0:
            metrics.val_acc = evaluate(model, val).accuracy
            if result.best_val is None or metrics.val_acc > result.best_val:
                result.best_val, result.best_epoch = metrics.val_acc, epoch
                best_state = model.state_dict()
                stale = 0
            else:
                stale += 1
        result.history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics)
        if cfg.patience and stale >= cfg.patience:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    elif result.history:
        result.best_epoch = result.history[-1].epoch
    return result
