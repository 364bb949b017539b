"""Dense neural-network substrate with hand-written reverse-mode gradients.

Everything is float64 and batch-first: activations have shape
(batch, features). Each layer caches the inputs of its most recent
forward(), so within one training step a layer's backward() must follow
its own forward(). Training is single-threaded by contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

Array = np.ndarray


def check_finite(arr: Array, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")


def as_matrix(x) -> Array:
    """Coerce to a 2-D float64 row-major array; 1-D input becomes one row."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected 1-D or 2-D data, got ndim={a.ndim}")
    return np.ascontiguousarray(a)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def sigmoid(x: Array) -> Array:
    """Numerically stable logistic; output in (0,1) up to float saturation."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: Array) -> Array:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


_ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu}


def activation(kind: str, x: Array) -> Array:
    """Elementwise activation by name (``sigmoid`` or ``relu``)."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def bce_from_logits(logits: Array, labels: Array) -> tuple[float, Array]:
    """Mean binary cross-entropy and its gradient w.r.t. the logits.

    Stable form: softplus(z) - z*y, with d/dz = sigmoid(z) - y. The gradient
    is already divided by the batch size.
    """
    z = logits.ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if z.shape != y.shape:
        raise DimensionError(f"logits {z.shape} vs labels {y.shape}")
    loss = float(np.mean(np.logaddexp(0.0, z) - z * y))
    grad = (sigmoid(z) - y) / z.size
    return loss, grad.reshape(logits.shape)


class LinearLayer:
    """Affine map y = x @ W + b with cached input for backward."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.weight = xavier_uniform(rng, in_dim, out_dim)
        self.bias = np.zeros((1, out_dim))
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x: Array | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Array) -> Array:
        if x.shape[1] != self.weight.shape[0]:
            raise DimensionError(
                f"linear expects {self.weight.shape[0]} inputs, got {x.shape[1]}"
            )
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_out: Array) -> Array:
        x = self._x
        self.grad_weight += x.T @ grad_out
        self.grad_bias += grad_out.sum(axis=0, keepdims=True)
        return grad_out @ self.weight.T

    def fingerprint(self) -> tuple:
        return ("dense", self.in_dim, self.out_dim)


class CrossLayer:
    """Gated residual interaction y = x0 * (xl @ W + b) + xl (square W)."""

    def __init__(self, dim: int, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.weight = xavier_uniform(rng, dim, dim)
        self.bias = np.zeros((1, dim))
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x0: Array | None = None
        self._xl: Array | None = None
        self._p: Array | None = None

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x0: Array, xl: Array) -> Array:
        d = self.weight.shape[0]
        if x0.shape[1] != d or xl.shape[1] != d:
            raise DimensionError(
                f"cross expects width {d}, got x0 {x0.shape[1]} / xl {xl.shape[1]}"
            )
        self._x0, self._xl = x0, xl
        self._p = xl @ self.weight + self.bias
        return x0 * self._p + xl

    def backward(self, grad_out: Array) -> tuple[Array, Array]:
        """Returns (grad_x0, grad_xl)."""
        gated = grad_out * self._x0
        self.grad_weight += self._xl.T @ gated
        self.grad_bias += gated.sum(axis=0, keepdims=True)
        grad_x0 = grad_out * self._p
        grad_xl = gated @ self.weight.T + grad_out
        return grad_x0, grad_xl

    def fingerprint(self) -> tuple:
        return ("cross", self.dim, self.dim)


class EmbeddingTable:
    """Dense lookup table, rows init N(0, 0.01); gradients scatter-added."""

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.rows = rng.normal(0.0, 0.01, size=(vocab, dim))
        self.grad_rows = np.zeros_like(self.rows)
        self._ids: Array | None = None

    @property
    def vocab(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def forward(self, ids: Array) -> Array:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab):
            raise IndexError(f"embedding id out of range [0, {self.vocab})")
        self._ids = ids
        return self.rows[ids]

    def backward(self, grad_out: Array) -> None:
        np.add.at(self.grad_rows, self._ids, grad_out)


@dataclass
class AdamState:
    """Per-parameter Adam slot with bias correction.

    A step with an identically-zero gradient is a no-op on both the
    parameter and the slot, so parameters untouched by a batch stay
    bitwise unchanged.
    """

    m: Array
    v: Array
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Array, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), lr=lr, **kw)


def adam_step(state: AdamState, params: Array, grads: Array) -> Array:
    """Apply one Adam update in place; returns the updated parameter array."""
    if params.shape != grads.shape:
        raise DimensionError(f"params {params.shape} vs grads {grads.shape}")
    if not np.any(grads):
        return params
    check_finite(grads, "gradients")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    check_finite(params, "parameters after adam step")
    return params


class Adam:
    """Adam over a named parameter list, one state slot per parameter."""

    def __init__(self, named_params: list[tuple[str, Array]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.slots = {
            name: AdamState.for_param(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for name, p in named_params
        }

    def step(self, named_params: list[tuple[str, Array]],
             named_grads: list[tuple[str, Array]]) -> None:
        grads = dict(named_grads)
        for name, param in named_params:
            adam_step(self.slots[name], param, grads[name])


def flatten(arrays: list[Array]) -> Array:
    if not arrays:
        return np.zeros(0)
    return np.concatenate([a.ravel() for a in arrays])


def unflatten_into(vec: Array, arrays: list[Array]) -> None:
    """Write a flat vector back into the given arrays, in order, in place."""
    offset = 0
    for a in arrays:
        n = a.size
        a[...] = vec[offset:offset + n].reshape(a.shape)
        offset += n
    if offset != vec.size:
        raise DimensionError(f"vector of size {vec.size} does not match {offset} slots")


def grad_check(loss_and_grad, theta: Array, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference grads.

    ``loss_and_grad(theta) -> (loss, grad)`` must be deterministic. The
    relative error per coordinate is |a - f| / max(|a| + |f|, 1e-8).
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size == 0:
        raise ValueError("degenerate input: closure has no parameters")
    loss, analytic = loss_and_grad(theta)
    if not np.isfinite(loss):
        raise ValueError("non-finite loss in grad_check")
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    check_finite(analytic, "analytic gradient")
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + epsilon
        lo_plus, _ = loss_and_grad(bumped)
        bumped[i] = theta[i] - epsilon
        lo_minus, _ = loss_and_grad(bumped)
        if not (np.isfinite(lo_plus) and np.isfinite(lo_minus)):
            raise ValueError("non-finite loss in grad_check")
        fd[i] = (lo_plus - lo_minus) / (2.0 * epsilon)
    denom = np.maximum(np.abs(analytic) + np.abs(fd), 1e-8)
    return float(np.max(np.abs(analytic - fd) / denom))
