"""Desk-scale convolutional network with ordinal, classification and Lab heads.

Architecture: ``conv(3x3, same) -> ReLU -> maxpool 2x2`` blocks, global
average pooling, one fully connected ReLU layer of width ``feature_dim``,
then a head:

* ``ordinal``: CORAL, one shared weight vector and K-1 ordered biases.
* ``classification``: K-way linear layer.
* ``lab_regression``: 3 outputs, de-normalized by fixed target statistics
  (``lab_offset + lab_scale * z``) into (L*, a*, b*).

Forward and backward passes run in float64 on NHWC batches.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .ordinal import coral_loss, decode_rank, decode_softmax, project_biases, softmax_head_loss

HEADS = ("ordinal", "classification", "lab_regression")


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 64
    conv_blocks: tuple[tuple[int, int, int], ...] = ((8, 3, 2), (16, 3, 2), (32, 3, 2))
    feature_dim: int = 64
    head: str = "ordinal"
    num_classes: int = 6
    seed: int = 0

    def __post_init__(self):
        blocks = tuple(tuple(int(v) for v in b) for b in self.conv_blocks)
        object.__setattr__(self, "conv_blocks", blocks)
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.input_size <= 0 or self.feature_dim <= 0 or self.num_classes < 2:
            raise ValueError("input_size, feature_dim must be positive and num_classes >= 2")
        size = self.input_size
        for channels, kernel, pool in blocks:
            if channels <= 0 or kernel <= 0 or kernel % 2 == 0:
                raise ValueError(f"conv block needs positive channels and odd kernel: {(channels, kernel, pool)}")
            if pool not in (1, 2):
                raise ValueError(f"only pool sizes 1 and 2 are supported, got {pool}")
            if pool == 2:
                if size % 2:
                    raise ValueError(f"spatial size {size} not divisible by pool 2")
                size //= 2

    @property
    def n_outputs(self) -> int:
        return {"ordinal": self.num_classes - 1, "classification": self.num_classes, "lab_regression": 3}[self.head]

    def architecture(self) -> dict:
        """Fields that must agree for checkpoints to be ensembled."""
        d = self.to_dict()
        d.pop("seed")
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(tuple(b) for b in d["conv_blocks"])
        return cls(**d)


@dataclass
class TinyNet:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    lab_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lab_scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    @classmethod
    def init(cls, config: NetworkConfig) -> "TinyNet":
        rng = np.random.default_rng(config.seed)
        params: dict[str, np.ndarray] = {}
        c_in = 3
        for i, (c_out, k, _) in enumerate(config.conv_blocks):
            fan_in = k * k * c_in
            params[f"conv{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, c_out))
            params[f"conv{i}.b"] = np.zeros(c_out)
            c_in = c_out
        f = config.feature_dim
        params["fc.W"] = rng.normal(0.0, np.sqrt(2.0 / c_in), (c_in, f))
        params["fc.b"] = np.zeros(f)
        if config.head == "ordinal":
            params["head.w"] = rng.normal(0.0, np.sqrt(1.0 / f), f)
            k1 = config.num_classes - 1
            params["head.b"] = np.linspace(1.0, -1.0, k1) if k1 > 1 else np.zeros(1)
        else:
            n = config.n_outputs
            params["head.W"] = rng.normal(0.0, np.sqrt(1.0 / f), (f, n))
            params["head.b"] = np.zeros(n)
        return cls(config, params)

    def copy(self) -> "TinyNet":
        return TinyNet(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.lab_offset.copy(),
            self.lab_scale.copy(),
        )

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (s, s, 3):
            raise ValueError(f"expected input of shape (N, {s}, {s}, 3), got {x.shape}")
        return x

    def forward(self, x, cache: list | None = None) -> np.ndarray:
        """Raw head outputs (logits, or normalized Lab before de-normalization)."""
        x = self._check_input(x)
        p = self.params
        for i, (c_out, k, pool) in enumerate(self.config.conv_blocks):
            n, h, w, _ = x.shape
            cols = kernels.im2col(x, k, k)
            pre = cols @ p[f"conv{i}.W"] + p[f"conv{i}.b"]
            act = np.maximum(pre, 0.0).reshape(n, h, w, c_out)
            if pool == 2:
                out, idx = kernels.maxpool_forward(act)
            else:
                out, idx = act, None
            if cache is not None:
                cache.append((x.shape, cols, pre, idx))
            x = out
        gap = x.mean(axis=(1, 2))
        hpre = gap @ p["fc.W"] + p["fc.b"]
        hid = np.maximum(hpre, 0.0)
        if self.config.head == "ordinal":
            z = (hid @ p["head.w"])[:, None] + p["head.b"][None, :]
        else:
            z = hid @ p["head.W"] + p["head.b"]
        if cache is not None:
            cache.append((x.shape, gap, hpre, hid))
        return z

    def backward(self, dz: np.ndarray, cache: list) -> dict[str, np.ndarray]:
        p = self.params
        grads: dict[str, np.ndarray] = {}
        last_shape, gap, hpre, hid = cache[-1]
        if self.config.head == "ordinal":
            grads["head.w"] = hid.T @ dz.sum(axis=1)
            grads["head.b"] = dz.sum(axis=0)
            dhid = dz.sum(axis=1)[:, None] * p["head.w"][None, :]
        else:
            grads["head.W"] = hid.T @ dz
            grads["head.b"] = dz.sum(axis=0)
            dhid = dz @ p["head.W"].T
        dhpre = dhid * (hpre > 0.0)
        grads["fc.W"] = gap.T @ dhpre
        grads["fc.b"] = dhpre.sum(axis=0)
        dgap = dhpre @ p["fc.W"].T
        n, h, w, c = last_shape
        dx = np.broadcast_to(dgap[:, None, None, :] / (h * w), last_shape)
        blocks = self.config.conv_blocks
        for i in range(len(blocks) - 1, -1, -1):
            c_out, k, pool = blocks[i]
            in_shape, cols, pre, idx = cache[i]
            dact = kernels.maxpool_backward(dx, idx) if pool == 2 else np.asarray(dx)
            dpre = dact.reshape(-1, c_out) * (pre > 0.0)
            grads[f"conv{i}.W"] = cols.T @ dpre
            grads[f"conv{i}.b"] = dpre.sum(axis=0)
            if i > 0:
                dx = kernels.col2im(dpre @ p[f"conv{i}.W"].T, in_shape, k, k)
        return grads

    # -- heads ----------------------------------------------------------------

    def lab_from_raw(self, z: np.ndarray) -> np.ndarray:
        return self.lab_offset + self.lab_scale * z

    def predict(self, x) -> np.ndarray:
        """Decoded outputs: Fitzpatrick ranks (int array) or Lab rows ``(N, 3)``."""
        z = self.forward(x)
        head = self.config.head
        if head == "ordinal":
            return decode_rank(z)
        if head == "classification":
            return decode_softmax(z)
        return self.lab_from_raw(z)

    def loss_and_grad(self, x, y) -> tuple[float, dict[str, np.ndarray]]:
        cache: list = []
        z = self.forward(x, cache)
        loss, dz = head_loss(self, z, y)
        return loss, self.backward(dz, cache)

    def loss(self, x, y) -> float:
        return head_loss(self, self.forward(x), y)[0]

    def project(self) -> None:
        """Keep CORAL biases non-increasing (rank consistency)."""
        if self.config.head == "ordinal":
            project_biases(self.params["head.b"])

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


#: Below this Delta E the loss switches to squared Delta E (the square root has no gradient at 0).
DELTA_E_EPS = 1e-12


def delta_e_loss(pred_lab: np.ndarray, target_lab: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CIE 1976 Delta E over a batch and its gradient w.r.t. ``pred_lab``."""
    diff = np.asarray(pred_lab, dtype=np.float64) - np.asarray(target_lab, dtype=np.float64)
    de = np.sqrt(np.sum(diff * diff, axis=-1))
    small = de <= DELTA_E_EPS
    per = np.where(small, de * de, de)
    grad = np.where(small[:, None], 2.0 * diff, diff / np.where(small, 1.0, de)[:, None])
    n = diff.shape[0]
    return float(per.mean()), grad / n


def head_loss(net: TinyNet, z: np.ndarray, y) -> tuple[float, np.ndarray]:
    head = net.config.head
    if head == "ordinal":
        return coral_loss(z, y, net.config.num_classes)
    if head == "classification":
        return softmax_head_loss(z, y, net.config.num_classes)
    loss, dpred = delta_e_loss(net.lab_from_raw(z), y)
    return loss, dpred * net.lab_scale
