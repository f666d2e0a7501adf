"""Differentiable building blocks with hand-written backward passes.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Param.grad`` during ``backward``.
All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class Param:
    """A named trainable array and its gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    trainable: bool = True

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Affine:
    """``y = x @ w + b``; ``x`` may be dense or scipy-sparse."""

    def __init__(self, w: Param, b: Param | None = None, input_grad: bool = True):
        self.w = w
        self.b = b
        self.input_grad = input_grad
        self._x = None

    @classmethod
    def init(cls, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
             bias: bool = True, input_grad: bool = True) -> "Affine":
        w = Param(f"{name}.W", glorot_uniform(fan_in, fan_out, rng))
        b = Param(f"{name}.b", np.zeros(fan_out)) if bias else None
        return cls(w, b, input_grad=input_grad)

    def params(self) -> list[Param]:
        return [self.w] if self.b is None else [self.w, self.b]

    def forward(self, x) -> np.ndarray:
        if x.shape[1] != self.w.shape[0]:
            raise ValueError(f"shape mismatch: {x.shape} @ {self.w.shape}")
        self._x = x
        y = np.asarray(x @ self.w.value)
        if self.b is not None:
            y = y + self.b.value
        return y

    def backward(self, upstream: np.ndarray) -> np.ndarray | None:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        x = self._x
        if sp.issparse(x):
            self.w.grad += np.asarray(x.T @ upstream)
        else:
            self.w.grad += x.T @ upstream
        if self.b is not None:
            self.b.grad += upstream.sum(axis=0)
        if not self.input_grad:
            return None
        return upstream @ self.w.value.T


class ReLU:
    """Elementwise ``max(0, x)``; the subgradient at 0 is taken as 0."""

    def __init__(self) -> None:
        self._mask = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        return np.where(self._mask, upstream, 0.0)


class Dropout:
    """Inverted dropout, active only when ``training`` is set on forward."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = rng
        self._keep = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._keep = None
            return x
        self._keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._keep

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        return upstream if self._keep is None else upstream * self._keep


def row_l2_normalize(x: np.ndarray, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Scale each row to unit L2 norm. Returns ``(y, norms)``."""
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < eps):
        raise FloatingPointError(
            f"degenerate embedding: {int(np.sum(norms < eps))} rows with norm < {eps}")
    return x / norms[:, None], norms


def row_l2_normalize_backward(upstream: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Gradient through ``y = x / |x|``: ``(g - y <y, g>) / |x|`` per row."""
    inner = np.einsum("ij,ij->i", y, upstream)
    return (upstream - y * inner[:, None]) / norms[:, None]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                          idx: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean ``-log softmax(logits)[y]`` over rows ``idx`` and its gradient.

    The gradient is ``(softmax - onehot) / len(idx)`` on the rows in ``idx``
    and zero elsewhere.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty index set")
    logp = log_softmax(logits[idx])
    y = np.asarray(labels)[idx]
    rows = np.arange(idx.size)
    loss = -logp[rows, y].mean()
    g = np.exp(logp)
    g[rows, y] -= 1.0
    grad = np.zeros_like(logits, dtype=np.float64)
    np.add.at(grad, idx, g / idx.size)
    return float(loss), grad
