"""Optimiser, schedule, loss and the training / evaluation loops.

One optimiser step per mini-batch; the whole T-step simulation happens
inside the forward pass and neuron state starts from rest for every batch.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import config, data, model as model_mod
from . import tensor as tn
from .errors import ConfigError, NumericError, ShapeError
from .tensor import Tensor

METRIC_COLUMNS = ("epoch", "train_loss", "val_loss", "top1", "top5", "lr", "mean_spike_rate")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    base_lr: float = 1e-3
    warmup_epochs: float = 1.0
    weight_decay: float = 0.05
    batch_size: int = 32
    grad_clip_norm: float = 0.1
    label_smoothing: float = 0.1
    seed: int = 0
    checkpoint_every: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_batch_size: int = 100

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("epochs, batch_size and eval_batch_size must be >= 1")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.warmup_epochs < 0 or self.warmup_epochs > self.epochs:
            raise ConfigError(f"warmup_epochs must be in [0, epochs], got {self.warmup_epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.grad_clip_norm > 0:
            raise ConfigError(f"grad_clip_norm must be > 0, got {self.grad_clip_norm}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("need 0 <= beta1, beta2 < 1 and eps > 0")


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def zeros(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState,
               lr: float, wd, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place AdamW update. ``wd`` is one decay rate or one per parameter.

    Decay is decoupled, ``p <- p - lr*wd*p``, and applied before the adaptive
    step. ``None`` gradients count as zero.
    """
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers")
    decays = list(wd) if isinstance(wd, (list, tuple)) else [wd] * len(params)
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v, d in zip(params, grads, state.m, state.v, decays):
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise ShapeError(f"moment/grad shape mismatch for parameter of shape {p.shape}")
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if d:
            p -= (lr * d) * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    """AdamW over named parameters; decay applies to weights with ndim >= 2 only."""

    def __init__(self, named_params, weight_decay: float = 0.05, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.names, self.params = zip(*named_params) if named_params else ((), ())
        self.decay = [weight_decay if p.ndim >= 2 else 0.0 for p in self.params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState.zeros([p.data for p in self.params])

    def step(self, lr: float) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state, lr,
                   self.decay, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, m, v in zip(self.names, self.state.m, self.state.v):
            out[f"adam_m.{name}"] = m
            out[f"adam_v.{name}"] = v
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step: int) -> None:
        for i, name in enumerate(self.names):
            self.state.m[i][...] = tensors[f"adam_m.{name}"]
            self.state.v[i][...] = tensors[f"adam_v.{name}"]
        self.state.step = step


# ---------------------------------------------------------------- schedule, loss, clipping


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warmup from 0, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warmup = int(round(total_steps * cfg.warmup_epochs / cfg.epochs))
    if step < warmup:
        return cfg.base_lr * step / warmup
    span = total_steps - warmup
    if span == 0:
        return cfg.base_lr
    progress = (step - warmup) / span
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def smoothed_ce(logits: Tensor, labels: np.ndarray, eps: float = 0.0) -> Tensor:
    """``(1 - eps) * CE + eps * mean over classes of -log p``, averaged over the batch."""
    N, C = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (N,) or labels.min() < 0 or labels.max() >= C:
        raise ShapeError(f"labels {labels.shape} invalid for logits {logits.shape}")
    target = np.full((N, C), eps / C, dtype=logits.dtype)
    target[np.arange(N), labels] += 1.0 - eps
    return tn.scale(tn.sum(tn.mul_const(tn.log_softmax(logits, axis=-1), target)), -1.0 / N)


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale all grads jointly so their global L2 norm is at most ``max_norm``; returns the factor."""
    if not max_norm > 0:
        raise ConfigError(f"max_norm must be > 0, got {max_norm}")
    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        raise NumericError(f"non-finite gradient norm {norm}")
    if norm <= max_norm:
        return 1.0
    factor = max_norm / (norm + 1e-6)
    for p in params:
        if p.grad is not None:
            p.grad = p.grad * np.asarray(factor, dtype=p.grad.dtype)
    return factor


# ---------------------------------------------------------------- loops


def mean_spike_rate(model) -> float:
    rates = [r for _, r in model_mod.spike_rate_report(model)]
    return float(np.mean(rates)) if rates else float("nan")


def _nan_report(model, what: str, step: int) -> NumericError:
    rows = model_mod.spike_rate_report(model)
    return NumericError(f"{what} at step {step}; firing rates per SPK site:\n{model_mod.format_rate_report(rows)}")


@dataclass
class EpochResult:
    loss: float
    lr: float
    spike_rate: float
    steps: int
    seconds: float


def train_epoch(model, optimizer: AdamW, batches, cfg: TrainConfig, step: int, total_steps: int,
                should_stop: Callable[[], bool] | None = None) -> EpochResult:
    t0 = time.perf_counter()
    losses, rates, lr = [], [], 0.0
    n = 0
    for images, labels in batches:
        lr = lr_at(cfg, min(step, total_steps), total_steps)
        optimizer.zero_grad()
        loss = smoothed_ce(model(images), labels, cfg.label_smoothing)
        value = float(loss.data)
        if not math.isfinite(value):
            raise _nan_report(model, f"non-finite loss {value}", step)
        tn.backward(loss)
        clip_grad_norm(optimizer.params, cfg.grad_clip_norm)
        optimizer.step(lr)
        losses.append(value * len(labels))
        n += len(labels)
        rates.append(mean_spike_rate(model))
        step += 1
        if should_stop is not None and should_stop():
            break
    rate = float(np.mean(rates)) if rates and not all(math.isnan(r) for r in rates) else float("nan")
    return EpochResult(sum(losses) / max(n, 1), lr, rate, step, time.perf_counter() - t0)


def predict(model, ds: data.Dataset, stats: data.Normalization, batch_size: int = 100) -> np.ndarray:
    """Logits for every image, in dataset order, without augmentation."""
    out = []
    with tn.no_grad():
        for images, _ in data.BatchIterator(ds, batch_size, stats, None, shuffle=False, dtype=model.dtype):
            out.append(model(images).data)
    return np.concatenate(out)


def metrics_from_logits(logits: np.ndarray, labels: np.ndarray) -> dict:
    labels = np.asarray(labels)
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    order = np.argsort(-logits, axis=1, kind="stable")
    top1 = float(np.mean(order[:, 0] == labels) * 100.0)
    k = min(5, logits.shape[1])
    top5 = float(np.mean((order[:, :k] == labels[:, None]).any(axis=1)) * 100.0)
    return {"top1": top1, "top5": top5, "loss": loss}


def write_logits_csv(path, logits: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label"] + [f"logit{j}" for j in range(logits.shape[1])])
        for i, (row, y) in enumerate(zip(logits, labels)):
            w.writerow([i, int(y)] + [repr(float(v)) for v in row])


def read_logits_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    labels = np.array([int(r[1]) for r in rows])
    logits = np.array([[float(v) for v in r[2:]] for r in rows])
    return logits, labels


def evaluate(model, ds: data.Dataset, stats: data.Normalization, batch_size: int = 100,
             logits_path=None) -> dict:
    """Top-1 / top-5 accuracy in percent and mean cross-entropy; deterministic."""
    logits = predict(model, ds, stats, batch_size)
    if logits_path is not None:
        write_logits_csv(logits_path, logits, ds.labels)
    return metrics_from_logits(logits, ds.labels)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model, stats: data.Normalization, config_text: str = "",
                    optimizer: AdamW | None = None, epoch: int = 0, step: int = 0) -> None:
    tensors = {f"param.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
    meta = {"mean": list(stats.mean), "std": list(stats.std), "epoch": epoch, "step": step,
            "adam_step": optimizer.state.step if optimizer is not None else 0}
    ckpt_io.save(path, ckpt_io.Checkpoint(tensors, config_text, meta))


def load_checkpoint(path, model_config: model_mod.ModelConfig | None = None):
    """Returns ``(model, stats, checkpoint)``; the model config comes from the file unless given."""
    ck = ckpt_io.load(path)
    cfg = model_config if model_config is not None else model_mod.ModelConfig.from_text(ck.config_text)
    net = model_mod.build(cfg)
    net.load_state_dict(ck.params())
    stats = data.Normalization(tuple(ck.meta["mean"]), tuple(ck.meta["std"]))
    return net, stats, ck


# ---------------------------------------------------------------- fit


class TrainingInterrupted(Exception):
    def __init__(self, checkpoint_path: str):
        super().__init__(f"training interrupted; checkpoint written to {checkpoint_path}")
        self.checkpoint_path = checkpoint_path


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class FitResult:
    history: list = field(default_factory=list)
    stats: data.Normalization | None = None
    metrics_path: str = ""
    checkpoint_path: str = ""


def fit(net, train_ds: data.Dataset, test_ds: data.Dataset, cfg: TrainConfig, out_dir,
        augment_cfg: data.AugmentConfig | None = None, config_text: str = "",
        log: Callable[[str], None] | None = None, should_stop: Callable[[], bool] | None = None) -> FitResult:
    """Train for ``cfg.epochs`` epochs, evaluating and logging a metrics row after each.

    ``metrics.csv`` starts with ``# config_sha256=<hash>`` of ``config_text``.
    Checkpoints go to ``checkpoint.ckpt`` every ``checkpoint_every`` epochs and
    after the last one.
    """
    os.makedirs(out_dir, exist_ok=True)
    stats = data.Normalization.fit(train_ds)
    batches = data.BatchIterator(train_ds, cfg.batch_size, stats, augment_cfg, True, cfg.seed, net.dtype)
    opt = AdamW(list(net.named_parameters()), cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    total = cfg.epochs * len(batches)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    result = FitResult(stats=stats, metrics_path=metrics_path, checkpoint_path=ckpt_path)
    with open(metrics_path, "w", newline="") as fh:
        fh.write(f"# config_sha256={config.text_hash(config_text)}\n")
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        fh.flush()
        step = 0
        for epoch in range(cfg.epochs):
            batches.epoch = epoch
            ep = train_epoch(net, opt, batches, cfg, step, total, should_stop)
            step = ep.steps
            if should_stop is not None and should_stop():
                save_checkpoint(ckpt_path, net, stats, config_text, opt, epoch, step)
                raise TrainingInterrupted(ckpt_path)
            ev = evaluate(net, test_ds, stats, cfg.eval_batch_size)
            row = {"epoch": epoch + 1, "train_loss": ep.loss, "val_loss": ev["loss"], "top1": ev["top1"],
                   "top5": ev["top5"], "lr": ep.lr, "mean_spike_rate": ep.spike_rate}
            result.history.append(row)
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
            fh.flush()
            if log is not None:
                log(f"epoch {epoch + 1}/{cfg.epochs} loss {ep.loss:.4f} val {ev['loss']:.4f} "
                    f"top1 {ev['top1']:.2f}% top5 {ev['top5']:.2f}% lr {ep.lr:.2e} "
                    f"rate {ep.spike_rate:.3f} ({ep.seconds:.1f}s)")
            last = epoch + 1 == cfg.epochs
            if last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
                save_checkpoint(ckpt_path, net, stats, config_text, opt, epoch + 1, step)
    return result
