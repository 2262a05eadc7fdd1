"""Adam, the reduce-on-plateau learning-rate rule, and the training loop."""
import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, TrainingAborted
from .tensor import Tensor, backward, current_tape, mse_loss, no_grad

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper):
        shapes = [np.shape(p.values if isinstance(p, Tensor) else p) for p in params]
        return cls([np.zeros(s) for s in shapes], [np.zeros(s) for s in shapes], **hyper)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on the ``params`` arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            raise ContractError("adam_step: missing gradient")
        if g.shape != p.shape:
            raise ContractError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def step(self):
        adam_step([p.values for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class PlateauSchedule:
    """Multiply the lr by ``factor`` once the best validation loss has not
    improved for ``patience`` consecutive epochs; the counter then restarts."""

    def __init__(self, lr, patience=20, factor=0.5):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 < factor < 1.0:
            raise ConfigError("decay factor must lie in (0, 1)")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def plateau_schedule(history, patience, factor, lr0):
    """Learning rate after replaying ``history`` (validation losses) from ``lr0``."""
    if not history:
        raise ContractError("plateau_schedule needs a non-empty history")
    sched = PlateauSchedule(lr0, patience, factor)
    for v in history:
        sched.step(v)
    return sched.lr


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 20
    decay: float = 0.5
    seed: int = 0
    train_fraction: float = 0.9
    val_fraction: float = 0.1

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay factor must lie in (0, 1)")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not (0 < self.train_fraction < 1 and 0 < self.val_fraction < 1):
            raise ConfigError("split fractions must lie in (0, 1)")
        if abs(self.train_fraction + self.val_fraction - 1.0) > 1e-12:
            raise ConfigError("train and validation fractions must sum to 1")
        return self

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_psnr: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf

    COLUMNS = ("epoch", "train_loss", "val_loss", "val_psnr", "lr", "seconds")

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path, timing=True):
        cols = self.COLUMNS if timing else self.COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in cols[1:]])


def split_indices(n, config):
    """Deterministic train/validation split of ``n`` samples."""
    perm = np.random.default_rng(config.seed).permutation(n)
    n_val = max(1, int(round(n * config.val_fraction)))
    if n_val >= n:
        raise ConfigError(f"dataset of {n} samples too small to split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def predict(model, inputs, batch_size=64):
    outs = []
    with no_grad():
        for i in range(0, len(inputs), batch_size):
            outs.append(model(Tensor._wrap(inputs[i:i + batch_size])).values)
    return np.concatenate(outs, axis=0)


def evaluate_mse(model, inputs, targets, batch_size=64):
    pred = predict(model, inputs, batch_size)
    return float(np.mean((pred - targets) ** 2))


def _psnr(mse):
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def train(model, dataset, config, progress=None):
    """Fit ``model`` to ``dataset`` (inputs -> targets) with Adam on MSE.

    Returns ``(history, best_state)``; the model is left holding the
    parameters of the epoch with the lowest validation loss.
    """
    config.validate()
    x_all, y_all = dataset.inputs, dataset.targets
    tr, va = split_indices(len(x_all), config)
    xv, yv = x_all[va], y_all[va]
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    sched = PlateauSchedule(config.lr, config.patience, config.decay)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    tape = current_tape()
    history = TrainHistory()
    best_state = model.state_dict()
    with no_grad():
        history.best_val_loss = evaluate_mse(model, xv, yv)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = tr[rng.permutation(len(tr))]
        total = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            tape.clear()
            opt.zero_grad()
            loss = mse_loss(model(Tensor._wrap(x_all[idx])), Tensor._wrap(y_all[idx]))
            lv = loss.item()
            if not math.isfinite(lv):
                tape.clear()
                raise TrainingAborted(f"{model.name}: non-finite loss at epoch {epoch}, batch {b}",
                                      epoch=epoch, batch=b, model=model.name)
            backward(loss)
            opt.step()
            total += lv * len(idx)
        train_loss = total / len(order)
        val_loss = evaluate_mse(model, xv, yv)
        if not math.isfinite(val_loss):
            raise TrainingAborted(f"{model.name}: non-finite validation loss at epoch {epoch}",
                                  epoch=epoch, batch=None, model=model.name)
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = model.state_dict()
        lr_now = opt.lr
        opt.lr = sched.step(val_loss)
        history.records.append(EpochRecord(epoch, train_loss, val_loss, _psnr(val_loss), lr_now,
                                           time.perf_counter() - t0))
        if progress is not None:
            progress(history.records[-1])
    model.load_state_dict(best_state)
    return history, best_state
