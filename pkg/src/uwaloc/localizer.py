"""CNN range classifier, its training loop, and the Bartlett MFP baseline."""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn_core as nn
from .features import ScmFeature, stack_channels
from .labels import LabelConfig, RangeGrid, soften, quantize_range
from .ocean import Environment, compute_modes, greens_vector

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"UWAR"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Layer sizes. ReLU follows every conv and the feature linear layer."""

    input_size: int = 21
    in_channels: int = 2
    conv_channels: tuple[int, ...] = (6, 38, 40)
    kernel_sizes: tuple[int, ...] = (3, 5, 5)
    feature_dim: int = 256
    num_classes: int = 82

    @property
    def flat_dim(self) -> int:
        size = self.input_size
        for k in self.kernel_sizes:
            size -= k - 1
        if size < 1:
            raise ValueError("input too small for the conv stack")
        return self.conv_channels[-1] * size * size


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    val_fraction: float = 0.15
    lr_decay_factor: float = 0.1
    patience_decay: int = 75
    patience_stop: int = 125
    max_epochs: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.patience_stop <= self.patience_decay:
            raise ValueError("patience_stop must exceed patience_decay")


class RangeClassifier:
    """Feature extractor (conv stack + linear) followed by a bias-free linear classifier."""

    def __init__(self, arch: Architecture = Architecture(), seed: int = 0):
        self.arch = arch
        rng = np.random.default_rng(seed)
        layers: list[tuple[str, nn.Layer]] = []
        c_in = arch.in_channels
        for i, (c_out, k) in enumerate(zip(arch.conv_channels, arch.kernel_sizes), start=1):
            layers.append((f"conv{i}", nn.Conv2d(c_in, c_out, k, rng, input_grad=i > 1)))
            layers.append((f"relu{i}", nn.ReLU()))
            c_in = c_out
        layers.append(("flatten", nn.Flatten()))
        layers.append(("feature", nn.Linear(arch.flat_dim, arch.feature_dim, rng)))
        layers.append(("feature_relu", nn.ReLU()))
        self.extractor = layers
        self.classifier = nn.Linear(arch.feature_dim, arch.num_classes, rng, bias=False)
        self.classifier_frozen = False

    # parameters are exposed as flat "layer.param" names
    def named_layers(self):
        yield from ((n, l) for n, l in self.extractor if l.trainable)
        yield "classifier", self.classifier

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, l in self.named_layers() for k, v in l.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        grads = {}
        for n, l in self.named_layers():
            if n == "classifier" and self.classifier_frozen:
                continue
            grads.update({f"{n}.{k}": v for k, v in l.grads.items()})
        return grads

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            raise ValueError(f"parameter names differ: {sorted(set(own) ^ set(params))}")
        for n, l in self.named_layers():
            for k in l.params:
                src = np.asarray(params[f"{n}.{k}"], dtype=nn.DTYPE)
                if src.shape != l.params[k].shape:
                    raise ValueError(f"shape mismatch for {n}.{k}")
                l.params[k] = src.copy()

    def copy(self) -> "RangeClassifier":
        return copy.deepcopy(self)

    def features(self, x: np.ndarray) -> np.ndarray:
        h = x
        for _, layer in self.extractor:
            h = layer.forward(h)
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities for a batch of (N, 2, L, L) inputs."""
        logits = self.classifier.forward(self.features(x))
        return nn.check_finite(nn.softmax(logits), "network output")

    def backward(self, probs: np.ndarray, dprobs: np.ndarray) -> None:
        """Backpropagate a gradient w.r.t. the softmax output of the last forward."""
        g = nn.softmax_backward(probs, dprobs)
        g = self.classifier.backward(g)
        for _, layer in reversed(self.extractor):
            g = layer.backward(g)
            if g is None:
                break

    def predict(self, feats: Sequence[ScmFeature] | ScmFeature, batch_size: int = 256) -> np.ndarray:
        single = isinstance(feats, ScmFeature)
        x = stack_channels([feats] if single else feats)
        if x.shape[1:] != (self.arch.in_channels, self.arch.input_size, self.arch.input_size):
            raise ValueError(f"input shape {x.shape[1:]} does not match the architecture")
        out = np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])
        return out[0] if single else out


# -- training -----------------------------------------------------------------

def mean_jsd_loss(model: RangeClassifier, x: np.ndarray, y: np.ndarray, backward: bool = False) -> float:
    probs = model.forward(x)
    loss = float(nn.jsd(y, probs).mean())
    if backward:
        model.backward(probs, nn.jsd_grad_q(y, probs) / len(x))
    return loss


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    train_indices: np.ndarray | None = None
    val_indices: np.ndarray | None = None
    best_epoch: int = -1


def split_indices(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(dataset: Sequence[tuple[ScmFeature, np.ndarray]], cfg: TrainConfig = TrainConfig(),
          arch: Architecture = Architecture(), model: RangeClassifier | None = None) -> tuple[RangeClassifier, TrainLog]:
    """Minimize mean JSD to the soft labels with Adam and plateau-based lr decay / early stopping.

    Returns the parameters with the lowest validation loss.
    """
    if not dataset:
        raise ValueError("empty training set")
    x = stack_channels([f for f, _ in dataset])
    y = np.stack([np.asarray(lab, dtype=float) for _, lab in dataset])
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = RangeClassifier(arch, seed=int(rng.integers(2**63)))
    tr_idx, val_idx = split_indices(len(x), cfg.val_fraction, rng)
    if len(val_idx) == 0:
        val_idx = tr_idx
    state = nn.AdamState(learning_rate=cfg.learning_rate)
    history = TrainLog(train_indices=tr_idx, val_indices=val_idx)

    best_loss = np.inf
    best_params = model.parameters()
    since_best = since_decay = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(tr_idx)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss = mean_jsd_loss(model, x[batch], y[batch], backward=True)
            if not np.isfinite(loss):
                raise nn.NonFiniteError(f"non-finite training loss at epoch {epoch}")
            nn.adam_step(model.parameters(), model.gradients(), state)
            total += loss * len(batch)
        val = mean_jsd_loss(model, x[val_idx], y[val_idx])
        history.train_loss.append(total / len(tr_idx))
        history.val_loss.append(val)
        history.learning_rate.append(state.learning_rate)
        if val < best_loss:
            best_loss = val
            best_params = {k: v.copy() for k, v in model.parameters().items()}
            history.best_epoch = epoch
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
        if since_best >= cfg.patience_stop:
            log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break
        if since_decay >= cfg.patience_decay:
            state.learning_rate *= cfg.lr_decay_factor
            since_decay = 0
        if epoch % 25 == 0:
            log.info("epoch %d train %.4f val %.4f lr %.1e", epoch, history.train_loss[-1], val, state.learning_rate)
    model.load_parameters(best_params)
    return model, history


def make_training_pairs(feats: Sequence[ScmFeature], grid: RangeGrid, label_cfg: LabelConfig):
    ranges = np.array([f.true_range for f in feats])
    labels = soften(quantize_range(ranges, grid), label_cfg, grid.num_classes)
    return list(zip(feats, labels))


# -- Bartlett matched field processing -----------------------------------------

@dataclass(frozen=True)
class ReplicaTable:
    ranges: np.ndarray  # (R,)
    fields: np.ndarray  # (R, L), unit-norm rows

    def __len__(self):
        return len(self.ranges)


def training_ranges(grid: RangeGrid = RangeGrid(), step: float = 10.0) -> np.ndarray:
    n = int(round((grid.d_max - grid.d_min) / step)) + 1
    return grid.d_min + step * np.arange(n)


def build_replica_table(env: Environment, ranges: np.ndarray | None = None) -> ReplicaTable:
    ranges = training_ranges() if ranges is None else np.asarray(ranges, dtype=float)
    g = greens_vector(env, compute_modes(env), ranges)
    return ReplicaTable(ranges=ranges, fields=g / np.linalg.norm(g, axis=1, keepdims=True))


def bartlett_power(scm: np.ndarray, replicas: ReplicaTable) -> np.ndarray:
    r = replicas.fields
    return np.einsum("ri,ij,rj->r", r.conj(), scm, r).real


def bartlett_mfp(test: ScmFeature, replicas: ReplicaTable) -> float:
    if len(replicas) == 0:
        raise ValueError("empty replica table")
    return float(replicas.ranges[np.argmax(bartlett_power(test.scm, replicas))])


def bartlett_batch(feats: Sequence[ScmFeature], replicas: ReplicaTable) -> np.ndarray:
    if len(replicas) == 0:
        raise ValueError("empty replica table")
    scms = np.stack([f.scm for f in feats])
    r = replicas.fields
    power = np.einsum("ri,nij,rj->nr", r.conj(), scms, r, optimize=True).real
    return replicas.ranges[np.argmax(power, axis=1)]


# -- checkpoints --------------------------------------------------------------
# b"UWAR", u32 version, u32 tensor count; per tensor: u16 name length, name,
# u8 dtype (0 = f64), u8 ndim, u32 dims, little-endian data. A final tensor
# named "__meta__" holds the UTF-8 JSON echo of architecture/grid/config as u8.

def save_checkpoint(path: str | Path, model: RangeClassifier, meta: dict | None = None) -> None:
    tensors = dict(model.parameters())
    echo = {"architecture": asdict(model.arch), **(meta or {})}
    blob = json.dumps(echo, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors) + 1))
        for name, arr in tensors.items():
            _write_tensor(fh, name, np.ascontiguousarray(arr, dtype="<f8"), 0)
        _write_tensor(fh, "__meta__", np.frombuffer(blob, dtype=np.uint8), 1)


def _write_tensor(fh, name: str, arr: np.ndarray, dtype_code: int) -> None:
    raw = name.encode()
    fh.write(struct.pack("<H", len(raw)) + raw)
    fh.write(struct.pack("<BB", dtype_code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[RangeClassifier, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    tensors, meta = {}, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2:pos + 2 + n].decode()
        pos += 2 + n
        dtype_code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        dtype = {0: "<f8", 1: "u1"}[dtype_code]
        size = int(np.prod(dims)) * np.dtype(dtype).itemsize
        arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=pos).reshape(dims)
        pos += size
        if name == "__meta__":
            meta = json.loads(arr.tobytes().decode())
        else:
            tensors[name] = arr.astype(float)
    arch_d = meta.get("architecture", {})
    arch = Architecture(**{k: tuple(v) if isinstance(v, list) else v for k, v in arch_d.items()})
    model = RangeClassifier(arch)
    model.load_parameters(tensors)
    return model, meta
