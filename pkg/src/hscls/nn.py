"""Minimal differentiable layer set over float64 numpy arrays.

Layers cache what their backward pass needs on forward; gradients accumulate
into :class:`Parameter.grad` and are zeroed by the optimizer step. There is no
general autodiff tape: the two model architectures wire these layers into
fixed pipelines and call backward in reverse order themselves.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Parameter:
    """A named value tensor paired with an accumulated gradient of equal shape."""

    def __init__(self, value: np.ndarray, name: str):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Embedding:
    """Row lookup into a trainable (vocab_size x embed_dim) matrix."""

    def __init__(self, table: Parameter):
        self.table = table
        self._ids: np.ndarray | None = None

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.min() < 0 or ids.max() >= self.table.shape[0]:
            raise ValueError(
                f"token id out of range [0, {self.table.shape[0]}) in embedding lookup"
            )
        self._ids = ids
        return self.table.value[ids]

    def backward(self, grad: np.ndarray) -> None:
        # Repeated ids in one batch accumulate their gradient rows.
        np.add.at(self.table.grad, self._ids, grad)


class Conv1d:
    """Valid 1-D convolution over (batch, length, embed_dim) sequences.

    Each of the F filters is an (h x in_dim) kernel combined with its window
    by a Frobenius inner product plus a per-filter bias; activation is left to
    a separate ReLU so the pre-activation map stays inspectable.
    """

    def __init__(self, weight: Parameter, bias: Parameter):
        # weight: (filters, kernel_size, in_dim); bias: (filters,)
        self.weight = weight
        self.bias = bias
        self._windows: np.ndarray | None = None
        self._in_shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, length, in_dim = x.shape
        n_filters, h, w_dim = self.weight.shape
        if w_dim != in_dim:
            raise ValueError(f"conv input dim {in_dim} != filter dim {w_dim}")
        if length < h:
            raise ValueError(f"sequence length {length} shorter than kernel size {h}")
        n_pos = length - h + 1
        windows = np.lib.stride_tricks.sliding_window_view(x, h, axis=1)  # (n, n_pos, in_dim, h)
        windows = windows.transpose(0, 1, 3, 2)  # (n, n_pos, h, in_dim)
        self._windows = windows
        self._in_shape = x.shape
        out = np.tensordot(windows, self.weight.value, axes=([2, 3], [1, 2]))
        return out + self.bias.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n, n_pos, n_filters = grad.shape
        h = self.weight.shape[1]
        self.weight.grad += np.tensordot(grad, self._windows, axes=([0, 1], [0, 1]))
        self.bias.grad += grad.sum(axis=(0, 1))
        dx = np.zeros(self._in_shape)
        for i in range(n_pos):
            # (n, F) x (F, h, in_dim) -> (n, h, in_dim) scattered onto the window
            dx[:, i : i + h, :] += np.tensordot(grad[:, i, :], self.weight.value, axes=([1], [0]))
        return dx


class ReLU:
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0  # subgradient at 0 is 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._mask


class MaxPoolOverTime:
    """Max over the time axis of (batch, time, filters); ties keep the first index."""

    def __init__(self):
        self._argmax: np.ndarray | None = None
        self._in_shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._argmax = np.argmax(x, axis=1)
        self._in_shape = x.shape
        return np.max(x, axis=1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n, _, n_filters = self._in_shape
        dx = np.zeros(self._in_shape)
        rows = np.arange(n)[:, None]
        cols = np.arange(n_filters)[None, :]
        dx[rows, self._argmax, cols] = grad
        return dx


class Concat:
    """Concatenate (batch, features_k) blocks along the feature axis."""

    def __init__(self):
        self._widths: list[int] | None = None

    def forward(self, parts: Sequence[np.ndarray]) -> np.ndarray:
        batches = {p.shape[0] for p in parts}
        if len(batches) != 1:
            raise ValueError(f"concat inputs disagree on batch size: {sorted(batches)}")
        self._widths = [p.shape[1] for p in parts]
        return np.concatenate(parts, axis=1)

    def backward(self, grad: np.ndarray) -> list[np.ndarray]:
        splits = np.cumsum(self._widths)[:-1]
        return np.split(grad, splits, axis=1)


class Flatten:
    def __init__(self):
        self._in_shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad.reshape(self._in_shape)


class Dense:
    """Affine map: (batch, in) @ weight.T + bias with weight (out, in)."""

    def __init__(self, weight: Parameter, bias: Parameter):
        self.weight = weight
        self.bias = bias
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.weight.shape[1]:
            raise ValueError(f"dense input width {x.shape[1]} != weight width {self.weight.shape[1]}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.weight.grad += grad.T @ self._x
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value


class Dropout:
    """Inverted dropout: zero with probability ``rate`` and rescale survivors.

    Inference mode is the identity for every rate. The layer owns a seeded
    generator so a rebuilt model replays the exact same masks.
    """

    def __init__(self, rate: float, seed: int):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self._rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad
        return grad * self._mask

    def reset(self) -> None:
        self._rng = np.random.default_rng(self.seed)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(probs: np.ndarray, one_hot: np.ndarray) -> float:
    """Mean over the batch of -log(probability at the true class).

    Probabilities are clamped to >= 1e-12 before the log.
    """
    _check_one_hot(one_hot)
    picked = (probs * one_hot).sum(axis=1)
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def softmax_xent_grad(probs: np.ndarray, one_hot: np.ndarray) -> np.ndarray:
    """Per-example gradient of the cross-entropy w.r.t. the logits: probs - targets."""
    _check_one_hot(one_hot)
    return probs - one_hot


def _check_one_hot(one_hot: np.ndarray) -> None:
    ok = np.all((one_hot == 0) | (one_hot == 1)) and np.all(one_hot.sum(axis=1) == 1)
    if not ok:
        raise ValueError("targets must be one-hot rows")


def one_hot(labels: Sequence[int], n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), list(labels)] = 1.0
    return out


class SGD:
    def __init__(self, learning_rate: float):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params: Sequence[Parameter]) -> None:
        _check_finite_grads(params)
        for p in params:
            p.value -= self.learning_rate * p.grad
            p.zero_grad()
        self.step_count += 1


class Adam:
    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: Sequence[Parameter]) -> None:
        _check_finite_grads(params)
        self.step_count += 1
        t = self.step_count
        for p in params:
            m = self._m.setdefault(p.name, np.zeros_like(p.value))
            v = self._v.setdefault(p.name, np.zeros_like(p.value))
            m += (1 - self.beta1) * (p.grad - m)
            v += (1 - self.beta2) * (p.grad**2 - v)
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.value -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()


def _check_finite_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise RuntimeError(f"non-finite gradient in parameter {p.name!r}; aborting step")


def make_optimizer(kind: str, learning_rate: float) -> SGD | Adam:
    if kind == "sgd":
        return SGD(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def finite_difference_check(
    loss_fn: Callable[[], float],
    params: Sequence[Parameter],
    h: float = 1e-5,
    n_coords: int = 120,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` evaluates the scalar loss at the parameters' current values;
    the analytic gradients must already be populated in ``p.grad``. Returns
    the max relative error over ``n_coords`` sampled coordinates (spread
    across parameters proportionally to their size, at least one each).
    """
    rng = np.random.default_rng(seed)
    sizes = np.array([p.value.size for p in params], dtype=float)
    alloc = np.maximum(1, np.round(n_coords * sizes / sizes.sum()).astype(int))
    worst = 0.0
    for p, k in zip(params, alloc):
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        idxs = rng.choice(p.value.size, size=min(int(k), p.value.size), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
