"""Dense float64 math with hand-written reverse-mode gradients.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank <= 2.
Every differentiable op comes as a pair: the forward returns ``(out, cache)``
and ``<op>_backward(dout, cache)`` returns the gradients of its inputs.
Blocks chain these pairs by hand; there is no global tape.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigError, EvaluationError, ShapeError

Tensor = np.ndarray


def as_tensor(x, name: str = "tensor") -> Tensor:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"{name}: rank {arr.ndim} > 2 is not supported")
    return arr


@dataclass
class Param:
    """A trainable value with a gradient buffer of the same shape."""

    value: Tensor
    grad: Tensor = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = as_tensor(self.value).copy()
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _derive_seed(seed: int, key) -> int:
    digest = hashlib.blake2b(f"{seed}/{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RngStream:
    """Counter-based random stream (Philox keyed by ``seed``).

    ``position`` is the Philox block counter. Each draw starts at the current
    position and advances it past every block it could have consumed, so a
    given ``(seed, position)`` always yields the same numbers.
    """

    seed: int
    position: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self.seed = int(self.seed)

    def _generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed, counter=self.position))

    def uniform(self, shape) -> Tensor:
        n = int(np.prod(shape, dtype=np.int64))
        out = self._generator().random(n)
        self.position += (n + 3) // 4 + 1
        return out.reshape(shape)

    def normal(self, shape) -> Tensor:
        n = int(np.prod(shape, dtype=np.int64))
        out = self._generator().standard_normal(n)
        # ziggurat rejections may consume extra words; leave generous room
        self.position += n + 1
        return out.reshape(shape)

    def integers(self, low: int, high: int, size=None):
        gen = self._generator()
        out = gen.integers(low, high, size=size)
        n = 1 if size is None else int(np.prod(size, dtype=np.int64))
        self.position += 2 * n + 1
        return out

    def fork(self, key) -> "RngStream":
        """Independent child stream named by ``key``; does not advance self."""
        return RngStream(_derive_seed(self.seed, key), 0)


# --------------------------------------------------------------------------
# matmul

def matmul(a: Tensor, b: Tensor):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, (a, b)


def matmul_backward(dout: Tensor, cache):
    a, b = cache
    return dout @ b.T, a.T @ dout


# --------------------------------------------------------------------------
# masked softmax

def masked_softmax(logits: Tensor, mask: Tensor | None = None, axis: int = 1):
    """Softmax along ``axis`` restricted to entries where ``mask`` is true.

    Masked entries get probability exactly 0. A line with no unmasked entry
    is all zeros.
    """
    logits = as_tensor(logits)
    if mask is None:
        mask = np.ones(logits.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ShapeError(f"masked_softmax: logits {logits.shape} vs mask {mask.shape}")
    shifted = np.where(mask, logits, -np.inf)
    top = shifted.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, logits, 0.0) - top), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    p = np.divide(e, total, out=np.zeros_like(e), where=total > 0)
    return p, (p, axis)


def masked_softmax_backward(dp: Tensor, cache):
    p, axis = cache
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# layer norm

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5):
    if x.shape[-1] < 2:
        raise ShapeError(f"layer_norm: degenerate feature dimension {x.shape[-1]}")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dout: Tensor, cache):
    """Returns ``(dx, dgain, dbias)``."""
    xhat, inv, gain = cache
    d = xhat.shape[-1]
    dxhat = dout * gain
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    lead = tuple(range(dout.ndim - 1))
    return dx, (dout * xhat).sum(axis=lead), dout.sum(axis=lead)


# --------------------------------------------------------------------------
# elementwise nonlinearities

def sigmoid(x: Tensor) -> Tensor:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: Tensor):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: Tensor, cache):
    return dout * cache


# --------------------------------------------------------------------------
# dropout

def dropout(x: Tensor, p: float, rng: RngStream | None, training: bool):
    """Inverted dropout. In evaluation mode (or ``p == 0``) returns ``x`` itself."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("dropout in training mode needs an RngStream")
    scale = np.where(rng.uniform(x.shape) >= p, 1.0 / (1.0 - p), 0.0)
    return x * scale, scale


def dropout_backward(dout: Tensor, cache):
    return dout if cache is None else dout * cache


# --------------------------------------------------------------------------
# gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    n_checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return bool(self.max_rel_error <= tol)


def _as_named(params) -> dict[str, Param]:
    if isinstance(params, Mapping):
        return dict(params)
    return {str(i): p for i, p in enumerate(params)}


def grad_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, Param] | Iterable[Param],
    eps: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must run the forward and backward passes, accumulating into
    each ``Param.grad``, and return the scalar loss. Gradients are zeroed
    before each call. On return the params hold their analytic gradients.
    """
    named = _as_named(params)

    def run() -> float:
        for p in named.values():
            p.zero_grad()
        val = float(loss_fn())
        if not math.isfinite(val):
            raise EvaluationError(f"grad_check: loss evaluated to {val}")
        return val

    run()
    analytic = {k: p.grad.copy() for k, p in named.items()}
    per_param: dict[str, float] = {}
    n = 0
    for name, p in named.items():
        worst = 0.0
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = run()
            flat[i] = orig - eps
            fm = run()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
            n += 1
        per_param[name] = worst
    for name, p in named.items():
        p.grad[...] = analytic[name]
    return GradCheckReport(max(per_param.values(), default=0.0), per_param, n)
