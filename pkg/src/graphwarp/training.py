"""Losses, metrics, the Adam optimizer, the training loop and loss-reduction ratios."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chem import DEFAULT_VOCAB, GraphBatch, MolDataset, batch, fit_supernode_scale
from .exceptions import LossError, NumericError, UndefinedMetricError
from .model import ModelConfig, ModelParams, init_params, model_forward, parameter_list

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# losses and metrics

def masked_bce_loss(logits: Tensor, labels, label_mask) -> Tensor:
    """Mean binary cross-entropy with logits over entries where ``label_mask`` is true."""
    m = np.asarray(label_mask, dtype=float)
    count = m.sum()
    if count == 0:
        raise LossError("no labelled entries in batch")
    y = np.asarray(labels, dtype=float)
    # -[y log s(x) + (1-y) log(1-s(x))] = softplus(x) - y x
    per_entry = ad.softplus(logits) - logits * y
    return ad.sum_reduce(per_entry * m) * (1.0 / count)


def masked_mse_loss(pred: Tensor, target, label_mask=None) -> Tensor:
    target = np.asarray(target, dtype=float)
    m = np.ones(target.shape) if label_mask is None else np.asarray(label_mask, dtype=float)
    count = m.sum()
    if count == 0:
        raise LossError("no labelled entries in batch")
    diff = pred - target
    return ad.sum_reduce(diff * diff * m) * (1.0 / count)


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    return float(np.mean(np.abs(pred - target)))


def roc_auc(scores, labels) -> float:
    """
    Probability that a random positive outscores a random negative, ties 0.5.

    Computed from midranks (Mann-Whitney U) in O(n log n).
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    # midranks over runs of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [scores.size]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mean_task_auc(scores, labels, label_mask) -> float:
    """Mean AUC over tasks that have both classes; NaN if none does."""
    scores, labels, label_mask = (np.atleast_2d(np.asarray(a)) for a in
                                  (scores, labels, label_mask))
    aucs = []
    for t in range(scores.shape[1]):
        m = label_mask[:, t].astype(bool)
        try:
            aucs.append(roc_auc(scores[m, t], labels[m, t]))
        except UndefinedMetricError:
            continue
    return float(np.mean(aucs)) if aucs else math.nan


def loss_reduction_ratio(vanilla: Sequence[float], augmented: Sequence[float]) -> float:
    """Mean over paired runs of (L - L+) / |L|, L being the vanilla loss."""
    if len(vanilla) != len(augmented) or len(vanilla) == 0:
        raise ValueError("need equally many (and at least one) paired losses")
    ratios = []
    for base, plus in zip(vanilla, augmented):
        if base == 0:
            raise ZeroDivisionError("vanilla loss is zero; ratio undefined")
        ratios.append((base - plus) / abs(base))
    return float(np.mean(ratios))


def loss_reduction_ratios(vanilla_train, plus_train, vanilla_test, plus_test):
    """(mean train ratio, mean test ratio)."""
    return (loss_reduction_ratio(vanilla_train, plus_train),
            loss_reduction_ratio(vanilla_test, plus_test))


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], state: AdamState, grads=None):
    """
    One bias-corrected Adam update in place.

    ``grads`` defaults to each parameter's ``.grad``. Non-finite gradients
    raise :class:`NumericError` before anything is modified.
    """
    grads = [p.grad for p in params] if grads is None else list(grads)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; Adam step aborted")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------
# training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float
    test_loss: float
    test_metric: float


@dataclass
class RunRecord:
    config: dict
    seed: int
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch - 1]

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    def summary(self) -> dict:
        best = self.best
        return {"summary": True, "seed": self.seed, "config": self.config,
                "best_epoch": self.best_epoch, "best_val_metric": best.val_metric,
                "test_metric": best.test_metric, "test_loss": best.test_loss,
                "final_train_loss": self.final.train_loss}

    def to_jsonl(self) -> str:
        """One JSON object per epoch, then the summary. Wall time is not included."""
        lines = [json.dumps(asdict(e), sort_keys=True) for e in self.epochs]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"


def higher_is_better(task: str) -> bool:
    return task == "classification"


def select_best_epoch(val_metrics: Sequence[float], task: str) -> int:
    """1-based epoch of the best validation metric; NaNs are skipped, last epoch if all NaN."""
    vals = np.asarray(val_metrics, dtype=float)
    if np.all(np.isnan(vals)):
        return len(vals)
    if higher_is_better(task):
        return int(np.nanargmax(vals)) + 1
    return int(np.nanargmin(vals)) + 1


def task_loss(config: ModelConfig, out: Tensor, b: GraphBatch) -> Tensor:
    if config.task == "classification":
        return masked_bce_loss(out, b.labels, b.label_mask)
    return masked_mse_loss(out, b.labels, b.label_mask)


def make_batches(data: MolDataset, batch_size: int, vocab, n_relations: int,
                 supernode_scale=None, order: Optional[Sequence[int]] = None) -> List[GraphBatch]:
    idx = np.arange(len(data)) if order is None else np.asarray(order)
    out = []
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        out.append(batch([data.graphs[i] for i in chunk], vocab, len(data.tasks),
                         data.labels[chunk], n_relations, supernode_scale))
    return out


def evaluate(config: ModelConfig, params: ModelParams, batches: Sequence[GraphBatch]):
    """(mean loss over labelled entries, metric, predictions) in eval mode."""
    preds, labels, masks = [], [], []
    total, count = 0.0, 0.0
    for b in batches:
        out = model_forward(config, params, b, training=False)
        n = b.label_mask.sum()
        if n:
            total += float(task_loss(config, out, b).data) * n
            count += n
        preds.append(out.data)
        labels.append(b.labels)
        masks.append(b.label_mask)
    preds, labels, masks = np.concatenate(preds), np.concatenate(labels), np.concatenate(masks)
    loss = total / count if count else math.nan
    if config.task == "classification":
        metric = mean_task_auc(preds, labels, masks)
    else:
        metric = mae(preds[masks], labels[masks]) if masks.any() else math.nan
    return loss, metric, preds


def train_loop(config: ModelConfig, train: MolDataset, val: MolDataset, test: MolDataset,
               epochs: int = 30, batch_size: int = 32, lr: float = 0.001,
               vocab=DEFAULT_VOCAB, scale_supernode: bool = True,
               params: Optional[ModelParams] = None, return_params: bool = False):
    """
    Train one model and record per-epoch losses and metrics.

    ``train_loss`` is the eval-mode loss over the whole training split at the
    end of each epoch. Minibatch order and dropout masks come from a generator
    seeded by ``config.seed``, so equal inputs give bit-identical records.
    """
    if min(len(train), len(val), len(test)) == 0:
        raise ValueError("train, val and test splits must all be nonempty")
    started = time.perf_counter()
    params = init_params(config) if params is None else params
    flat = parameter_list(params)
    state = AdamState(lr=lr)
    rng = np.random.default_rng([config.seed, 2])
    scale = fit_supernode_scale(train.graphs, vocab, config.n_relations) \
        if scale_supernode else None

    def fixed(data):
        return make_batches(data, batch_size, vocab, config.n_relations, scale)

    train_eval, val_batches, test_batches = fixed(train), fixed(val), fixed(test)
    record = RunRecord(config=_config_dict(config), seed=config.seed)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        for b in make_batches(train, batch_size, vocab, config.n_relations, scale, order):
            if not b.label_mask.any():
                continue
            ad.zero_grad(flat)
            loss = task_loss(config, model_forward(config, params, b, training=True, rng=rng), b)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            ad.backward(loss)
            adam_step(flat, state)
        train_loss, _, _ = evaluate(config, params, train_eval)
        val_loss, val_metric, _ = evaluate(config, params, val_batches)
        test_loss, test_metric, _ = evaluate(config, params, test_batches)
        if not np.isfinite(train_loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        record.epochs.append(EpochRecord(epoch, *map(float, (train_loss, val_loss, val_metric,
                                                             test_loss, test_metric))))
        logger.debug("epoch %d train %.5f val %.5f (%s %.4f)", epoch, train_loss, val_loss,
                     "auc" if config.task == "classification" else "mae", val_metric)
    record.best_epoch = select_best_epoch([e.val_metric for e in record.epochs], config.task)
    record.wall_time = time.perf_counter() - started
    return (record, params) if return_params else record


def _config_dict(config: ModelConfig) -> dict:
    return asdict(config)
