"""Adam with step decay, patient-wise folds and the mini-batch training loop."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .beats import BeatSet, Standardizer
from .dsp import RowStandardizer
from .metrics import confusion, metrics
from .selfonn import ModelConfig, SelfONNClassifier, build_model, predict

logger = logging.getLogger(__name__)


class LeakageError(RuntimeError):
    """Training and validation beats share a patient."""


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 35
    batch_size: int = 128
    base_lr: float = 0.01
    decay_factor: float = 0.1
    decay_every: int = 10
    q_order: int = 3
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "decay_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.base_lr <= 0 or self.decay_factor <= 0:
            raise ConfigError("base_lr and decay_factor must be positive")


def lr_at_epoch(epoch, cfg: TrainConfig):
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.base_lr * cfg.decay_factor ** (epoch // cfg.decay_every)


class AdamState:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state: AdamState, lr=None):
    """Bias-corrected Adam update, in place on ``params``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise nn.NonFiniteError(f"non-finite gradient for {k}")
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for k, p in params.items():
        g = grads[k].astype(p.dtype, copy=False)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


def clip_gradients(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


def make_folds(patients, k=5, seed=0):
    """Seeded shuffle, then round-robin into ``k`` patient groups."""
    patients = sorted(set(patients))
    if k > len(patients):
        raise ConfigError(f"cannot make {k} folds from {len(patients)} patients")
    order = np.random.default_rng(seed).permutation(len(patients))
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(patients[idx])
    return [sorted(f) for f in folds]


def batches(n, batch_size, rng):
    """Shuffled index batches; a trailing batch of one is merged into its
    predecessor because batch norm needs two samples."""
    order = rng.permutation(n)
    out = [order[s:s + batch_size] for s in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def fit_input_norms(train: BeatSet):
    """Scalogram-row and temporal standardizers from non-augmented training beats."""
    base = train.subset(~train.augmented) if (~train.augmented).any() else train
    return RowStandardizer.fit(base.scalograms), Standardizer.fit(base.temporal)


def evaluate_loss(model, beats: BeatSet, batch_size=512):
    if len(beats) == 0:
        return None, None
    classes, scores = predict(model, beats.scalograms, beats.temporal, batch_size)
    loss = float(-np.log(np.clip(scores[np.arange(len(beats)), beats.labels], 1e-300, None)).sum())
    return loss / len(beats), metrics(confusion(beats.labels, classes)).macro_f1


def train_model(train: BeatSet, val: BeatSet | None, cfg: TrainConfig,
                model_config: ModelConfig | None = None, dtype=np.float32):
    """Train for ``cfg.epochs`` epochs with summed cross-entropy per batch.

    Returns ``(final_model, history, best_model)``; ``best_model`` is the
    best validation macro-F1 snapshot, or None without a validation set.
    """
    if val is not None and len(val):
        overlap = set(train.patients) & set(val.patients)
        if overlap:
            raise LeakageError(f"patients in both training and validation sets: {sorted(overlap)}")
    if len(train) < 2:
        raise ConfigError("need at least two training beats")
    mcfg = copy.deepcopy(model_config) if model_config else ModelConfig()
    mcfg.q_order = cfg.q_order
    model = build_model(mcfg, seed=cfg.seed, dtype=dtype)
    model.scalogram_norm, model.temporal_norm = fit_input_norms(train)

    x_all = model.scalogram_norm.transform(train.scalograms.astype(np.float64)).astype(dtype)
    t_all = model.temporal_norm.transform(train.temporal).astype(dtype)
    y_all = train.labels

    params = model.parameters()
    state = AdamState(params, lr=cfg.base_lr)
    history = []
    best, best_f1 = None, -1.0
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        epoch_loss = 0.0
        for idx in batches(len(train), cfg.batch_size, rng):
            logits = model.forward(x_all[idx], t_all[idx], train=True)
            loss, dlogits = softmax_ce(logits, y_all[idx])
            epoch_loss += loss
            model.backward(dlogits)
            grads = model.gradients()
            if cfg.clip_norm:
                clip_gradients(grads, cfg.clip_norm)
            adam_step(params, grads, state, lr=lr)
        row = {"epoch": epoch, "lr": lr, "train_loss": epoch_loss / len(train)}
        if val is not None and len(val):
            row["val_loss"], row["val_macro_f1"] = evaluate_loss(model, val)
            if row["val_macro_f1"] > best_f1:
                best_f1, best = row["val_macro_f1"], copy.deepcopy(model)
        history.append(row)
        logger.info("epoch %d lr %.0e loss %.4f%s", epoch, lr, row["train_loss"],
                    f" val_f1 {row['val_macro_f1']:.4f}" if "val_macro_f1" in row else "")
    return model, history, best


def softmax_ce(logits, labels):
    loss, d = nn.softmax_cross_entropy(logits, labels)
    nn.check_finite(d, "loss gradient")
    return loss, d.astype(logits.dtype, copy=False)


def cross_validate(train: BeatSet, cfg: TrainConfig, model_config=None, k=5):
    """Patient-wise k-fold CV on the training split; returns fold plan and per-fold results."""
    folds = make_folds(train.patients, k=k, seed=cfg.seed)
    results = []
    for i, fold in enumerate(folds):
        val = train.for_records(fold)
        val = val.subset(~val.augmented)
        fit = train.subset(~np.isin(train.record_ids, fold))
        _, hist, _ = train_model(fit, val, cfg, model_config)
        results.append({"fold": i, "patients": fold, "history": hist,
                        "final_val_macro_f1": hist[-1].get("val_macro_f1")})
    return folds, results
