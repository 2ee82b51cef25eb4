"""Small numpy neural-network engine: conv/linear/ReLU layers with hand-derived
backward passes, softmax, Jensen-Shannon and entropy losses, and Adam.

Everything is float64 and batched along the leading axis. Layers cache what
they need during ``forward`` and consume it in ``backward``; gradients are
written to ``layer.grads`` under the same keys as ``layer.params``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


# -- functional ops -----------------------------------------------------------

def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation.

    ``x`` is (C_in, H, W) or (N, C_in, H, W); ``kernel`` is (C_out, C_in, k, k).
    """
    single = x.ndim == 3
    xb = x[None] if single else x
    c_out, c_in, kh, kw = kernel.shape
    if xb.shape[1] != c_in:
        raise ValueError(f"input has {xb.shape[1]} channels, kernel expects {c_in}")
    if xb.shape[2] < kh or xb.shape[3] < kw:
        raise ValueError(f"input {xb.shape[2:]} smaller than kernel {(kh, kw)}")
    if bias.shape != (c_out,):
        raise ValueError("bias shape mismatch")
    win = sliding_window_view(xb, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, k, k
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, C_out
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return out[0] if single else np.ascontiguousarray(out)


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, dout: np.ndarray):
    """Gradients of a valid conv w.r.t. input, kernel and bias (batched inputs)."""
    _, _, kh, kw = kernel.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    dkernel = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # C_out, C_in, k, k
    dbias = dout.sum(axis=(0, 2, 3))
    padded = np.pad(dout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    pwin = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # N, C_out, H, W, k, k
    flipped = kernel[:, :, ::-1, ::-1]
    dx = np.tensordot(pwin, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dx), dkernel, dbias


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError("bias shape mismatch")
        out = out + bias
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _xlogy(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, y, 1.0)), 0.0)


def jsd(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Jensen-Shannon divergence in nats along the last axis."""
    s = p + q  # ratios x / m are formed as 2x / (p + q) to avoid subnormal m
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = _xlogy(p, 2 * p / s).sum(axis=-1)
        kl_q = _xlogy(q, 2 * q / s).sum(axis=-1)
    return 0.5 * (kl_p + kl_q)


def jsd_grad_q(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """d JSD(p, q) / d q = 0.5 * log(q / m)."""
    s = p + q
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, 0.5 * np.log(np.where(q > 0, 2 * q / s, 1.0)), 0.0)


def entropy(p: np.ndarray) -> np.ndarray:
    return -_xlogy(p, p).sum(axis=-1)


def entropy_grad(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(p > 0, -(np.log(np.where(p > 0, p, 1.0)) + 1.0), 0.0)


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return probs * (dprobs - (probs * dprobs).sum(axis=-1, keepdims=True))


# -- layers -------------------------------------------------------------------

class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]
    trainable = True

    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv2d(Layer):
    """Valid stride-1 convolution. The im2col matrix is cached for backward."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, input_grad: bool = True):
        super().__init__()
        bound = np.sqrt(1.0 / (c_in * k * k))
        self.params["weight"] = rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(DTYPE)
        self.params["bias"] = rng.uniform(-bound, bound, c_out).astype(DTYPE)
        self.input_grad = input_grad
        self._cols = None

    def forward(self, x):
        w = self.params["weight"]
        c_out, c_in, k, _ = w.shape
        if x.ndim != 4 or x.shape[1] != c_in:
            raise ValueError(f"expected (N, {c_in}, H, W) input, got {x.shape}")
        n, _, h, wd = x.shape
        ho, wo = h - k + 1, wd - k + 1
        win = sliding_window_view(x, (k, k), axis=(2, 3))
        self._cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c_in * k * k)
        self._in_shape = x.shape
        out = self._cols @ w.reshape(c_out, -1).T + self.params["bias"]
        return np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))

    def backward(self, dout):
        w = self.params["weight"]
        c_out, c_in, k, _ = w.shape
        n, _, ho, wo = dout.shape
        dmat = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
        self.grads["weight"] = (dmat.T @ self._cols).reshape(w.shape)
        self.grads["bias"] = dmat.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (dmat @ w.reshape(c_out, -1)).reshape(n, ho, wo, c_in, k, k)
        dx = np.zeros(self._in_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = np.sqrt(1.0 / n_in)
        self.params["weight"] = rng.uniform(-bound, bound, (n_out, n_in)).astype(DTYPE)
        if bias:
            self.params["bias"] = rng.uniform(-bound, bound, n_out).astype(DTYPE)
        self._x = None

    def forward(self, x):
        self._x = x
        return linear_forward(x, self.params["weight"], self.params.get("bias"))

    def backward(self, dout):
        self.grads["weight"] = dout.T @ self._x
        if "bias" in self.params:
            self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"]


class ReLU(Layer):
    trainable = False

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Flatten(Layer):
    trainable = False

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """In-place bias-corrected Adam update of every entry in ``grads``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
