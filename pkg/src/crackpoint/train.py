"""Mini-batch training loop, optimizers, evaluation, and run logs."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .checkpoint import save_checkpoint, write_kv
from .dataset_io import DatasetFile
from .labels import KeypointBox, mask_to_keypoints
from .losses import get_loss, huber, mae, mse
from .metrics import DEFAULT_THRESHOLDS, EvalReport, binned_report
from .model import Model, raw_to_box
from .util import make_rng


class DivergedError(RuntimeError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: loss = {value}")
        self.epoch = epoch
        self.step = step


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.9
    seed: int = 0
    loss: str = "mse"
    huber_delta: float = 1.0
    checkpoint_every: int = 0
    patience: int = 0            # early stop on validation loss; 0 = off
    val_fraction: float = 0.2
    grad_clip: float = 5.0
    max_steps: int = 0           # total optimizer-step cap; 0 = off
    target_train_loss: float = 0.0  # stop once epoch train loss < target; 0 = off

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "epochs", "batch_size", "optimizer", "learning_rate", "beta1", "beta2",
            "adam_eps", "momentum", "seed", "loss", "huber_delta", "checkpoint_every",
            "patience", "val_fraction", "grad_clip", "max_steps", "target_train_loss")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kw = {}
        ints = ("epochs", "batch_size", "seed", "checkpoint_every", "patience", "max_steps")
        floats = ("learning_rate", "beta1", "beta2", "adam_eps", "momentum", "huber_delta",
                  "val_fraction", "grad_clip", "target_train_loss")
        for k, v in d.items():
            if k in ints:
                kw[k] = int(v)
            elif k in floats:
                kw[k] = float(v)
            elif k in ("optimizer", "loss"):
                kw[k] = str(v)
        return cls(**kw)


@dataclass
class TrainLog:
    epochs: list[tuple[int, float, float, float]] = field(default_factory=list)
    total_time: float = 0.0
    first_epoch_time: float = 0.0
    trainable_params: int = 0
    non_trainable_params: int = 0
    n_layer_nodes: int = 0
    steps_run: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,seconds"]
        for e, tr, vl, sec in self.epochs:
            vs = "" if np.isnan(vl) else f"{vl:.8f}"
            lines.append(f"{e},{tr:.8f},{vs},{sec:.3f}")
        return "\n".join(lines) + "\n"


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        self.v = [np.zeros_like(p, dtype=np.float64) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m[...] = self.b1 * m + (1 - self.b1) * g
            v[...] = self.b2 * v + (1 - self.b2) * (g.astype(np.float64) ** 2)
            upd = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p -= upd.astype(p.dtype)


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, g, v in zip(self.params, grads, self.vel):
            v[...] = self.momentum * v - self.lr * g
            p += v


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return SGDMomentum(params, cfg.learning_rate, cfg.momentum)


def clip_gradients(grads, max_norm: float) -> float:
    if max_norm <= 0:
        return 0.0
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def refresh_norm_stats(model: Model, x: np.ndarray, batch_size: int = 16) -> None:
    """Recompute batch-norm inference statistics for the current weights.

    Moving averages accumulated while the weights were still changing lag the
    final weights, so inference can disagree badly with the fitted training
    behavior. One extra pass over the data (dropout disabled, incremental-mean
    statistics update) replaces them with statistics of the final model.
    """
    norms = [l for l in model.sub_layers() if isinstance(l, L.BatchNorm)]
    if not norms or x.shape[0] == 0:
        return
    drops = [l for l in model.sub_layers() if isinstance(l, L.Dropout)]
    saved_m = [n.momentum for n in norms]
    saved_r = [d.rate for d in drops]
    try:
        for d in drops:
            d.rate = 0.0
        for j, s in enumerate(range(0, x.shape[0], batch_size), start=1):
            for n in norms:
                # momentum 1 - 1/j turns the moving average into the plain
                # mean of the per-batch statistics seen so far
                n.momentum = 1.0 - 1.0 / j
            model.forward(x[s:s + batch_size], training=True)
    finally:
        for n, m in zip(norms, saved_m):
            n.momentum = m
        for d, r in zip(drops, saved_r):
            d.rate = r


def dataset_arrays(ds: DatasetFile) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fields, targets, sizes) for samples whose mask yields a box."""
    keep, targets = [], []
    for i in range(ds.n_samples):
        box = mask_to_keypoints(ds.masks[i])
        if box is None:
            continue
        keep.append(i)
        targets.append(box.as_array())
    if not keep:
        raise ValueError("dataset contains no samples with a crack label")
    keep = np.array(keep)
    return ds.fields[keep], np.array(targets, dtype=np.float32), ds.sizes[keep]


def split_indices(n: int, val_fraction: float, seed: int):
    order = make_rng(seed, stream=77).permutation(n)
    n_val = int(round(n * val_fraction))
    return order[n_val:], order[:n_val]


@dataclass
class TrainResult:
    best_path: str
    final_path: str
    log: TrainLog
    train_indices: np.ndarray
    val_indices: np.ndarray


def train(model: Model, ds: DatasetFile, cfg: TrainConfig, out_dir) -> TrainResult:
    """Run the configured optimizer; deterministic for a fixed seed.

    Writes best-validation and final checkpoints plus a per-epoch CSV log to
    out_dir. With val_fraction = 0 the final model is also the "best" one.
    """
    os.makedirs(out_dir, exist_ok=True)
    x, y, _sizes = dataset_arrays(ds)
    tr_idx, va_idx = split_indices(x.shape[0], cfg.val_fraction, cfg.seed)
    if tr_idx.size == 0:
        raise ValueError("training split is empty")
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_va, y_va = x[va_idx], y[va_idx]

    loss_fn = get_loss(cfg.loss, cfg.huber_delta)
    params = model.parameters()
    grads = model.gradients()
    opt = make_optimizer(cfg, params)
    shuffle_rng = make_rng(cfg.seed, stream=101)

    log = TrainLog()
    log.trainable_params, log.non_trainable_params = model.count_params()
    log.n_layer_nodes = model.n_layer_nodes

    best_path = os.path.join(out_dir, "best.mcpn")
    final_path = os.path.join(out_dir, "final.mcpn")
    extras = {f"train.{k}": v for k, v in cfg.to_dict().items()}
    extras["split.n_train"] = tr_idx.size
    extras["split.n_val"] = va_idx.size

    best_val = np.inf
    stale = 0
    t_start = time.perf_counter()
    stop = False
    for epoch in range(1, cfg.epochs + 1):
        t_ep = time.perf_counter()
        order = shuffle_rng.permutation(x_tr.shape[0])
        ep_loss = 0.0
        ep_count = 0
        for s in range(0, order.size, cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            out = model.forward(x_tr[batch], training=True)
            value, gout = loss_fn(y_tr[batch], out)
            if not np.isfinite(value):
                raise DivergedError(epoch, log.steps_run, value)
            model.backward(gout.astype(out.dtype))
            clip_gradients(grads, cfg.grad_clip)
            opt.step(grads)
            ep_loss += value * batch.size
            ep_count += batch.size
            log.steps_run += 1
            if cfg.max_steps and log.steps_run >= cfg.max_steps:
                stop = True
                break
        train_loss = ep_loss / max(ep_count, 1)

        if x_va.shape[0] > 0:
            val_out = model.predict(x_va)
            val_loss, _ = loss_fn(y_va, val_out)
        else:
            val_loss = float("nan")
        seconds = time.perf_counter() - t_ep
        log.epochs.append((epoch, train_loss, val_loss, seconds))
        if epoch == 1:
            log.first_epoch_time = seconds

        monitored = val_loss if not np.isnan(val_loss) else train_loss
        if monitored < best_val:
            best_val = monitored
            stale = 0
            save_checkpoint(model, best_path, extras)
        else:
            stale += 1
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(model, os.path.join(out_dir, f"epoch{epoch:04d}.mcpn"), extras)
        if cfg.target_train_loss and train_loss < cfg.target_train_loss:
            stop = True
        if cfg.patience and stale > cfg.patience:
            stop = True
        if stop:
            break

    refresh_norm_stats(model, x_tr, cfg.batch_size)
    log.total_time = time.perf_counter() - t_start
    save_checkpoint(model, final_path, extras)
    if not os.path.exists(best_path):
        save_checkpoint(model, best_path, extras)
    with open(os.path.join(out_dir, "trainlog.csv"), "w", encoding="utf-8") as fh:
        fh.write(log.to_csv())
    write_kv(os.path.join(out_dir, "summary.txt"), format_summary(log))
    return TrainResult(best_path, final_path, log, tr_idx, va_idx)


def format_summary(log: TrainLog) -> dict:
    return {
        "Layers": log.n_layer_nodes,
        "Epochs": len(log.epochs),
        "Time taken by first Epoch": f"{log.first_epoch_time:.2f} sec",
        "Total training time": f"{log.total_time:.2f} sec",
        "Total params": log.trainable_params + log.non_trainable_params,
        "Trainable params": log.trainable_params,
        "Non-trainable params": log.non_trainable_params,
    }


def evaluate(model: Model, ds: DatasetFile, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Inference over the dataset: binned box metrics plus loss summaries."""
    x, y, sizes = dataset_arrays(ds)
    if x.shape[0] == 0:
        raise ValueError("evaluation dataset is empty")
    raw = model.predict(x)
    pairs = []
    for i in range(raw.shape[0]):
        truth = KeypointBox(*[float(v) for v in y[i]])
        pairs.append((raw_to_box(raw[i]), truth))
    report = binned_report(pairs, sizes, thresholds)
    report.mse = mse(y, raw)[0]
    report.mae = mae(y, raw)[0]
    report.huber = huber(y, raw)[0]
    return report


def constant_box_baseline(y_train: np.ndarray) -> np.ndarray:
    """The constant prediction minimizing mean training MSE: the target mean."""
    return y_train.mean(axis=0)
