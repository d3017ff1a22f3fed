"""Optimization, schedule, loss, training loop, evaluation, checkpoints."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import (
    Checkpoint,
    CheckpointShapeError,
    read_checkpoint,
    write_checkpoint,
)
from .data import batch_iter, eval_augment, num_batches, train_augment
from .model import config_to_text, parse_config_text


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    base_lr: float = 5e-4
    weight_decay: float = 0.05
    warmup_epochs: int = 5
    min_lr: float = 1e-5
    seed: int = 0
    label_smoothing: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    augment: bool = True
    eval_train: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be below epochs ({self.epochs})")
        if self.base_lr <= 0 or self.min_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label smoothing must lie in [0, 1)")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


def decays(name, param):
    """Weight decay applies to matrices and filters, not to biases or norm affines."""
    return param.ndim > 1 and not name.endswith(".bias")


def adamw_step(params, state, lr, wd):
    """One AdamW update over ``(name, parameter)`` pairs, in place.

    Decay is decoupled (p <- p * (1 - lr * wd)) and skipped for 1-D
    parameters. Parameters without a gradient are left untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.betas
    step_size = lr * math.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for name, p in params:
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name}")
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if wd and decays(name, p):
            p.data *= 1.0 - lr * wd
        p.data -= (step_size * m / (np.sqrt(v) + state.eps)).astype(p.dtype, copy=False)
    return state


def cosine_warmup_lr(step, steps_per_epoch, cfg):
    """Linear warmup from 0 to base_lr, then cosine decay reaching min_lr
    on the final step."""
    if step < 0:
        raise ValueError("step must be non-negative")
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warm:
        return cfg.base_lr * step / warm
    span = total - 1 - warm
    if span <= 0:
        return cfg.base_lr
    progress = min((step - warm) / span, 1.0)
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


def cross_entropy(logits, labels, smoothing=0.0):
    """Mean cross-entropy with optional label smoothing."""
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    target = np.full((B, K), smoothing / K, dtype=logits.dtype)
    target[np.arange(B), labels] += 1.0 - smoothing
    logp = T.log_softmax(logits, axis=-1)
    return (logp * target).sum() * (-1.0 / B)


def predict(model, images):
    model.eval()
    with T.no_grad():
        return model(images).data


def evaluate_top1(model, records, batch_size=256, aug=None):
    """Fraction of records whose argmax logit is the label; ties resolve to
    the lowest class index."""
    if len(records) == 0:
        raise ValueError("cannot evaluate on an empty set")
    aug = aug or eval_augment(model.config.resolution)
    was_training = model.training
    correct = 0
    for images, labels in batch_iter(records, batch_size, None, aug):
        logits = predict(model, images)
        correct += int((np.argmax(logits, axis=1) == labels).sum())
    model.train(was_training)
    return correct / len(records)


def save_checkpoint(model, state, path, meta=None):
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    info = dict(meta or {})
    if state is not None:
        info["optim.step"] = state.step
        info["optim.betas"] = f"{state.betas[0]!r},{state.betas[1]!r}"
        info["optim.eps"] = repr(state.eps)
        for k, v in state.m.items():
            tensors[f"optim.m/{k}"] = v
            tensors[f"optim.v/{k}"] = state.v[k]
    write_checkpoint(path, Checkpoint(config_to_text(model.config), info, tensors))


def load_checkpoint(model, path, state=None):
    """Restore parameters (and optimizer state when given) from ``path``.

    Returns the checkpoint metadata. Shape disagreements with the model
    raise ``CheckpointShapeError``.
    """
    ckpt = read_checkpoint(path)
    own = model.state_dict()
    weights = {k[len("model/"):]: v for k, v in ckpt.tensors.items() if k.startswith("model/")}
    for name, arr in own.items():
        if name not in weights:
            raise CheckpointShapeError(f"checkpoint lacks {name}; it was saved from a different configuration")
        if weights[name].shape != arr.shape:
            raise CheckpointShapeError(
                f"{name}: checkpoint shape {weights[name].shape}, model shape {arr.shape}"
            )
    extra = set(weights) - set(own)
    if extra:
        raise CheckpointShapeError(f"checkpoint has tensors the model lacks, e.g. {sorted(extra)[0]}")
    model.load_state_dict(weights)
    if state is not None:
        state.step = int(ckpt.meta.get("optim.step", 0))
        if "optim.betas" in ckpt.meta:
            state.betas = tuple(float(b) for b in ckpt.meta["optim.betas"].split(","))
        if "optim.eps" in ckpt.meta:
            state.eps = float(ckpt.meta["optim.eps"])
        state.m = {k[len("optim.m/"):]: v.copy() for k, v in ckpt.tensors.items() if k.startswith("optim.m/")}
        state.v = {k[len("optim.v/"):]: v.copy() for k, v in ckpt.tensors.items() if k.startswith("optim.v/")}
    return ckpt.meta


def checkpoint_config(path):
    """Model configuration echoed inside a checkpoint."""
    return parse_config_text(read_checkpoint(path).config_text)


def train_epochs(model, train_records, test_records, cfg, out_dir=None,
                 log=None, aug_mean=None, aug_std=None):
    """Train for ``cfg.epochs`` epochs and return the per-epoch metrics.

    With ``out_dir`` set, metrics are appended to ``metrics.jsonl`` and the
    latest state is written to ``checkpoint.ckpt`` after every epoch.
    """
    res = model.config.resolution
    norm = {}
    if aug_mean is not None:
        norm = {"mean": aug_mean, "std": aug_std}
    aug = train_augment(res, **norm) if cfg.augment else eval_augment(res, **norm)
    test_aug = eval_augment(res, **norm)
    state = OptimizerState(betas=cfg.betas, eps=cfg.eps)
    params = list(model.named_parameters())
    spe = num_batches(len(train_records), cfg.batch_size)
    history = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.jsonl")
        open(metrics_path, "w").close()
    for epoch in range(cfg.epochs):
        t0 = time.time()
        model.train()
        losses, correct, seen = [], 0, 0
        lr = cfg.base_lr
        for images, labels in batch_iter(train_records, cfg.batch_size, cfg.seed, aug, epoch):
            lr = cosine_warmup_lr(state.step, spe, cfg)
            logits = model(images)
            loss = cross_entropy(logits, labels, cfg.label_smoothing)
            model.zero_grad()
            loss.backward()
            adamw_step(params, state, lr, cfg.weight_decay)
            losses.append(float(loss.data))
            correct += int((np.argmax(logits.data, axis=1) == labels).sum())
            seen += len(labels)
        record = {
            "epoch": epoch + 1,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "train_acc": correct / seen,
            "batch_losses": losses,
        }
        if cfg.eval_train:
            record["train_top1"] = evaluate_top1(model, train_records, aug=test_aug)
        if test_records:
            record["test_top1"] = evaluate_top1(model, test_records, aug=test_aug)
        record["seconds"] = round(time.time() - t0, 3)
        history.append(record)
        if out_dir:
            line = {k: v for k, v in record.items() if k != "batch_losses"}
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(line) + "\n")
            save_checkpoint(model, state, os.path.join(out_dir, "checkpoint.ckpt"),
                            {"epoch": epoch + 1})
        if log:
            log({k: v for k, v in record.items() if k != "batch_losses"})
    return history
