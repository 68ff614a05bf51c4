"""Parameterised layers built from the ops in :mod:`lsanav.tensor`.

Each layer owns its :class:`Param` objects. ``forward`` returns
``(out, cache)``; ``backward(dout, cache)`` accumulates into the params'
``grad`` buffers and returns the input gradient(s).
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Param, RngStream, Tensor


class Module:
    """Minimal container: params plus named child modules."""

    def __init__(self):
        self.params: dict[str, Param] = {}
        self.children: dict[str, Module] = {}

    def __getattr__(self, name):
        children = self.__dict__.get("children", {})
        if name in children:
            return children[name]
        raise AttributeError(name)

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children.items():
            yield from child.named_params(f"{prefix}{cname}.")

    def param_dict(self) -> dict[str, Param]:
        return dict(self.named_params())

    def zero_grad(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()


def _init(rng: RngStream | None, shape, scale: float) -> Tensor:
    if rng is None:
        return np.zeros(shape)
    return rng.normal(shape) * scale


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: RngStream | None = None, scale: float | None = None):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        scale = 1.0 / np.sqrt(d_in) if scale is None else scale
        self.params["weight"] = Param(_init(rng, (d_in, d_out), scale))
        self.params["bias"] = Param(np.zeros(d_out))

    @property
    def weight(self) -> Param:
        return self.params["weight"]

    @property
    def bias(self) -> Param:
        return self.params["bias"]

    def forward(self, x: Tensor):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"Linear({self.d_in}->{self.d_out}): input shape {x.shape}")
        return x @ self.weight.value + self.bias.value, x

    def backward(self, dout: Tensor, cache) -> Tensor:
        x = cache
        self.weight.grad += x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.value.T


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        if d < 2:
            raise ShapeError(f"LayerNorm: degenerate feature dimension {d}")
        self.d, self.eps = d, eps
        self.params["gain"] = Param(np.ones(d))
        self.params["bias"] = Param(np.zeros(d))

    def forward(self, x: Tensor):
        return T.layer_norm(x, self.params["gain"].value, self.params["bias"].value, self.eps)

    def backward(self, dout: Tensor, cache) -> Tensor:
        dx, dg, db = T.layer_norm_backward(dout, cache)
        self.params["gain"].grad += dg
        self.params["bias"].grad += db
        return dx


class GRUCell(Module):
    """Three-gate GRU; gate blocks are ordered (reset, update, candidate)."""

    def __init__(self, d_in: int, d_hidden: int, rng: RngStream | None = None):
        super().__init__()
        self.d_in, self.d = d_in, d_hidden
        s = 1.0 / np.sqrt(d_hidden)
        self.params["w_ih"] = Param(_init(rng, (d_in, 3 * d_hidden), s))
        self.params["w_hh"] = Param(_init(rng, (d_hidden, 3 * d_hidden), s))
        self.params["b_ih"] = Param(np.zeros(3 * d_hidden))
        self.params["b_hh"] = Param(np.zeros(3 * d_hidden))

    def forward(self, h: Tensor, x: Tensor):
        if h.ndim != 2 or h.shape[1] != self.d or x.shape != (h.shape[0], self.d_in):
            raise ShapeError(f"GRUCell: state {h.shape} and input {x.shape} disagree")
        d = self.d
        p = self.params
        gi = x @ p["w_ih"].value + p["b_ih"].value
        gh = h @ p["w_hh"].value + p["b_hh"].value
        r = T.sigmoid(gi[:, :d] + gh[:, :d])
        z = T.sigmoid(gi[:, d:2 * d] + gh[:, d:2 * d])
        n = np.tanh(gi[:, 2 * d:] + r * gh[:, 2 * d:])
        out = (1.0 - z) * n + z * h
        return out, (h, x, r, z, n, gh[:, 2 * d:])

    def backward(self, dout: Tensor, cache):
        """Returns ``(dh, dx)``."""
        h, x, r, z, n, ghn = cache
        p = self.params
        dn = dout * (1.0 - z)
        dz = dout * (h - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgi = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        p["w_ih"].grad += x.T @ dgi
        p["b_ih"].grad += dgi.sum(axis=0)
        p["w_hh"].grad += h.T @ dgh
        p["b_hh"].grad += dgh.sum(axis=0)
        dh = dout * z + dgh @ p["w_hh"].value.T
        dx = dgi @ p["w_ih"].value.T
        return dh, dx


class MLP(Module):
    """affine -> relu -> affine, mapping width ``d`` back to ``d``."""

    def __init__(self, d: int, hidden: int | None = None, rng: RngStream | None = None):
        super().__init__()
        hidden = d if hidden is None else hidden
        self.children["fc1"] = Linear(d, hidden, rng)
        self.children["fc2"] = Linear(hidden, d, rng)

    def forward(self, x: Tensor):
        a, c1 = self.children["fc1"].forward(x)
        h, cr = T.relu(a)
        y, c2 = self.children["fc2"].forward(h)
        return y, (c1, cr, c2)

    def backward(self, dout: Tensor, cache) -> Tensor:
        c1, cr, c2 = cache
        dh = self.children["fc2"].backward(dout, c2)
        return self.children["fc1"].backward(T.relu_backward(dh, cr), c1)
