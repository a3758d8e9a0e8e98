"""Minibatch Adam training with early stopping, and a finite-difference gradient check."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import NetworkConfig, TinyNet
from .ordinal import NonFiniteLogitsError

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


#: Fitzpatrick fine-tuning defaults (lr 1e-4, batch 32, patience 5, up to 30 epochs).
FITZPATRICK_TRAIN = TrainConfig(learning_rate=1e-4, batch_size=32, max_epochs=30, patience=5)
#: Lab/ITA fine-tuning defaults (lr 5e-4, batch 32, patience 5, up to 50 epochs).
LAB_TRAIN = TrainConfig(learning_rate=5e-4, batch_size=32, max_epochs=50, patience=5)


@dataclass
class LabeledCorpus:
    """Preprocessed images ``(N, S, S, 3)`` with targets and subject ids."""

    images: np.ndarray
    targets: np.ndarray
    subjects: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        self.subjects = np.asarray(self.subjects).astype(str)
        if not (len(self.images) == len(self.targets) == len(self.subjects)):
            raise ValueError("images, targets and subjects must have equal length")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "LabeledCorpus":
        return LabeledCorpus(self.images[idx], self.targets[idx], self.subjects[idx])


def split_by_subject(subjects, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (train, val) holding out ``fraction`` of subjects (at least one)."""
    subjects = np.asarray(subjects).astype(str)
    uniq = np.unique(subjects)
    if fraction <= 0 or len(uniq) < 2:
        return np.arange(len(subjects)), np.arange(0)
    rng = np.random.default_rng(seed)
    n_val = min(len(uniq) - 1, max(1, int(round(fraction * len(uniq)))))
    val_subjects = rng.permutation(uniq)[:n_val]
    is_val = np.isin(subjects, val_subjects)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


class EarlyStopping:
    """Track the best validation loss; ``step`` returns True once training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.epoch = 0

    def step(self, val_loss: float) -> bool:
        self.epoch += 1
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            return False
        return self.epoch - self.best_epoch >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        lr_t = c.learning_rate * np.sqrt(1.0 - c.beta2**self.t) / (1.0 - c.beta1**self.t)
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= lr_t * self.m[k] / (np.sqrt(self.v[k]) + c.eps)


@dataclass
class TrainResult:
    net: TinyNet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    best_val_loss: float = float("nan")


def round_to_float32(net: TinyNet) -> TinyNet:
    """Round parameters to float32 precision (the checkpoint storage type)."""
    for k, v in net.params.items():
        net.params[k] = v.astype(np.float32).astype(np.float64)
    net.lab_offset = net.lab_offset.astype(np.float32).astype(np.float64)
    net.lab_scale = net.lab_scale.astype(np.float32).astype(np.float64)
    return net


def _batched_loss(net: TinyNet, data: LabeledCorpus, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        n = len(data.images[sl])
        total += net.loss(data.images[sl], data.targets[sl]) * n
    return total / len(data)


def train(net: TinyNet, data: LabeledCorpus, cfg: TrainConfig, val: LabeledCorpus | None = None) -> TrainResult:
    """Train ``net`` (a copy is returned) with Adam and validation early stopping.

    When ``val`` is not given, ``cfg.val_fraction`` of the subjects in ``data``
    is held out. The returned network carries the weights of the best
    validation epoch, rounded to float32.
    """
    if len(data) == 0:
        raise ValueError("empty training corpus")
    if val is None:
        tr_idx, val_idx = split_by_subject(data.subjects, cfg.val_fraction, cfg.seed)
        train_set, val = data.subset(tr_idx), data.subset(val_idx)
    else:
        train_set = data
    if len(train_set) == 0 or len(val) == 0:
        raise ValueError("need non-empty train and validation splits")

    net = net.copy()
    if net.config.head == "lab_regression":
        t = np.asarray(train_set.targets, dtype=np.float64)
        net.lab_offset = t.mean(axis=0)
        net.lab_scale = np.maximum(t.std(axis=0), 1.0)
    net.project()
    opt = Adam(net.params, cfg)
    stopper = EarlyStopping(cfg.patience)
    rng = np.random.default_rng(cfg.seed)
    best = net.copy()
    history: list[dict] = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = net.loss_and_grad(train_set.images[idx], train_set.targets[idx])
            except NonFiniteLogitsError:
                loss = np.nan
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, step {start // cfg.batch_size}; "
                    f"lr={cfg.learning_rate}, last finite epoch loss={history[-1]['train_loss'] if history else None}"
                )
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(net.params, grads)
            if not all(np.all(np.isfinite(v)) for v in net.params.values()):
                raise TrainingDivergedError(
                    f"non-finite weights after epoch {epoch}, step {start // cfg.batch_size}; lr={cfg.learning_rate}"
                )
            net.project()
            running += loss * len(idx)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val_loss = _batched_loss(net, val, 128)
        except NonFiniteLogitsError:
            val_loss = np.nan
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": running / len(train_set), "val_loss": val_loss})
        stop = stopper.step(val_loss)
        if stopper.improved:
            best = net.copy()
        log.debug("epoch %d train %.4f val %.4f", epoch, history[-1]["train_loss"], val_loss)
        if stop:
            break

    return TrainResult(
        net=round_to_float32(best),
        history=history,
        best_epoch=stopper.best_epoch,
        epochs_run=len(history),
        best_val_loss=float(stopper.best_loss),
    )


def grad_check(net: TinyNet, x, y, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients over all parameters.

    Relative error per entry is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    _, grads = net.loss_and_grad(x, y)
    worst = 0.0
    for name, p in net.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = net.loss(x, y)
            flat[i] = orig - h
            lm = net.loss(x, y)
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            err = abs(g[i] - num) / max(abs(g[i]) + abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def default_network(head: str, seed: int = 0, **overrides) -> TinyNet:
    return TinyNet.init(NetworkConfig(head=head, seed=seed, **overrides))
