"""Deterministic fine-tuning of the trainable partition.

Optimizer: gradient descent with momentum and decoupled weight decay,
global-norm gradient clipping. Weight decay is never applied to the
gate scalars (they must be free to grow from zero). Batch order is a
pure function of the seed, so two runs with the same inputs produce
bit-identical parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError
from .lipenc import encode_batch_graph
from .model import Model, ce_loss
from .text import Tokenizer

_EXEMPT_FROM_DECAY = (".gate",)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    weight_decay: float = 0.02
    batch_size: int = 32
    epochs: int = 2
    seed: int = 0
    clip_norm: float = 1.0
    momentum: float = 0.9
    max_steps: int | None = None
    early_stop_loss: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass(eq=False)
class TrainSample:
    """One tokenized sequence: BOS + prompt + response + EOS, with the
    loss mask aligned to the shifted targets (response and EOS only)."""

    ids: np.ndarray
    loss_mask: np.ndarray
    rois: np.ndarray | None = None
    record_id: str = ""

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if self.loss_mask.shape != (self.ids.size - 1,):
            raise ValueError("loss_mask must align with the shifted targets")


@dataclass
class TrainLog:
    steps: list[tuple[int, float, float, float]] = field(default_factory=list)
    epoch_eval: list[tuple[int, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.steps[-1][1]

    def to_csv(self, path) -> None:
        lines = ["step,loss,grad_norm,seconds"]
        for step, loss, gn, secs in self.steps:
            lines.append(f"{step},{loss!r},{gn!r},{secs:.4f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_train_sample(prompt: str, response: str, tokenizer: Tokenizer,
                       rois: np.ndarray | None = None, record_id: str = "") -> TrainSample:
    prompt_ids = tokenizer.tokenize(prompt)
    response_ids = tokenizer.tokenize(response)
    ids = np.concatenate(
        [[tokenizer.bos_id], prompt_ids, response_ids, [tokenizer.eos_id]]
    ).astype(np.int64)
    mask = np.zeros(ids.size - 1, dtype=bool)
    mask[prompt_ids.size :] = True  # response tokens plus the EOS target
    return TrainSample(ids=ids, loss_mask=mask, rois=rois, record_id=record_id)


def _pad_batch(samples: list[TrainSample], pad_id: int = 0):
    width = max(s.ids.size for s in samples)
    ids = np.full((len(samples), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(samples), width - 1), dtype=bool)
    for i, s in enumerate(samples):
        ids[i, : s.ids.size] = s.ids
        mask[i, : s.loss_mask.size] = s.loss_mask
    return ids, mask


def _batch_loss(model: Model, batch: list[TrainSample]):
    """Build the loss graph for one batch; returns a scalar Tensor."""
    ids, mask = _pad_batch(batch)
    e_feat = None
    if batch[0].rois is not None:
        if any(s.rois is None for s in batch):
            raise ValueError("mixed batches (some with ROIs, some without) are not supported")
        e_feat = _encode_rois(model, [s.rois for s in batch])
    logits = model.forward_graph(ids[:, :-1], e_feat)
    return ce_loss(logits, ids[:, 1:], mask)


def _encode_rois(model: Model, rois_list):
    """Encode per-record ROI clips, batching clips of equal length."""
    from . import autodiff as ad

    groups: dict[tuple[int, int, int], list[int]] = {}
    for i, rois in enumerate(rois_list):
        groups.setdefault(rois.shape, []).append(i)
    parts = []
    order = []
    for shape in sorted(groups):
        idxs = groups[shape]
        frames = np.stack([rois_list[i] for i in idxs])
        parts.append(encode_batch_graph(model.params, frames, model.lip_config))
        order.extend(idxs)
    cat = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    inverse = np.argsort(np.asarray(order))
    if np.array_equal(inverse, np.arange(len(order))):
        return cat
    return ad.take_axis(cat, inverse, axis=0)


def train(samples: list[TrainSample], model: Model, config: TrainConfig,
          trainable=None, eval_samples=None, log_path=None,
          checkpoint_path=None, vocab=None) -> TrainLog:
    """Optimize the given partition; frozen tensors stay bit-identical.

    On a non-finite loss the model is restored to the last good state,
    a checkpoint is written if a path was given, and NumericError is
    raised.
    """
    if not samples:
        raise ValueError("training needs at least one sample")
    trainable = set(model.trainable_names() if trainable is None else trainable)
    model.set_trainable(trainable)
    names = sorted(trainable)
    velocity = {n: np.zeros_like(model.params[n].data) for n in names}
    rng = np.random.default_rng(config.seed)
    log = TrainLog()

    snap_prev = model.clone_data()
    step = 0
    stop = False
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(samples), config.batch_size):
            batch = [samples[i] for i in order[lo : lo + config.batch_size]]
            t0 = time.perf_counter()
            snap_curr = model.clone_data()

            for n in names:
                model.params[n].grad = None
            loss = _batch_loss(model, batch)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                model.load_data(snap_prev)
                if checkpoint_path is not None:
                    from .checkpoint import save_model

                    save_model(model, checkpoint_path, vocab=vocab)
                raise NumericError(
                    f"non-finite loss {loss_val} at step {step}; restored last good state"
                )
            loss.backward()

            sq = 0.0
            for n in names:
                g = model.params[n].grad
                if g is not None:
                    sq += float(np.sum(g * g))
            grad_norm = float(np.sqrt(sq))
            scale = config.clip_norm / grad_norm if grad_norm > config.clip_norm else 1.0

            lr = config.learning_rate
            for n in names:
                p = model.params[n]
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                buf = velocity[n]
                buf *= config.momentum
                buf += g * scale
                p.data = p.data - lr * buf
                if config.weight_decay and not n.endswith(_EXEMPT_FROM_DECAY):
                    p.data = p.data - lr * config.weight_decay * p.data

            snap_prev = snap_curr
            step += 1
            log.steps.append((step, loss_val, grad_norm, time.perf_counter() - t0))
            if config.max_steps is not None and step >= config.max_steps:
                stop = True
            if config.early_stop_loss is not None and loss_val < config.early_stop_loss:
                stop = True
            if stop:
                break
        eval_set = eval_samples if eval_samples is not None else samples
        log.epoch_eval.append((epoch, evaluate_loss(eval_set, model, config.batch_size)))
        if stop:
            break

    for n in names:
        model.params[n].grad = None
    if log_path is not None:
        log.to_csv(log_path)
    if checkpoint_path is not None:
        from .checkpoint import save_model

        save_model(model, checkpoint_path, vocab=vocab)
    return log


def evaluate_loss(samples: list[TrainSample], model: Model, batch_size: int = 32) -> float:
    """Mean masked CE over a sample set (no parameter updates)."""
    total = 0.0
    weight = 0
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo : lo + batch_size]
        loss = _batch_loss(model, batch)
        n = sum(int(s.loss_mask.sum()) for s in batch)
        total += float(loss.data) * n
        weight += n
    return total / max(1, weight)
