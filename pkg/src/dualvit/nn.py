"""Parameterized neural primitives: linear, layer norm, multi-head attention, FFN.

Attention is the general q/k/v form: self-attention when q is k is v,
cross-attention otherwise. All four attention projections are square d×d with
bias; heads are realized by reshaping the d-wide projection into (h, d_h).
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=None):
    """Normal(0, std) samples rejected outside ±2 std. Deterministic under rng."""
    dt = np.dtype(dtype or T.DEFAULT_DTYPE)
    draw_dt = dt if dt in (np.float32, np.float64) else np.float64
    out = rng.standard_normal(shape, dtype=draw_dt)
    flat = out.reshape(-1)
    idx = np.flatnonzero(np.abs(flat) > 2.0)
    while idx.size:
        redraw = rng.standard_normal(idx.size, dtype=draw_dt)
        flat[idx] = redraw
        idx = idx[np.abs(redraw) > 2.0]
    out *= std
    return out.astype(dt, copy=False)


class Module:
    """Minimal parameter container: children discovered by attribute scan."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=None):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Tensor(trunc_normal(rng, (d_in, d_out), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype or T.DEFAULT_DTYPE), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(
                f"linear expects last dim {self.d_in}, got input shape {x.shape}"
            )
        return T.add(T.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=None, eps: float = 1e-6):
        self.dim = dim
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=dtype or T.DEFAULT_DTYPE), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype or T.DEFAULT_DTYPE), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """MHA(q, k, v) = Concat(head_1..head_h) W_O with scaled dot-product heads."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=None):
        if dim % heads != 0:
            raise ConfigError(f"channel dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = Linear(dim, dim, rng, dtype)
        self.k_proj = Linear(dim, dim, rng, dtype)
        self.v_proj = Linear(dim, dim, rng, dtype)
        self.o_proj = Linear(dim, dim, rng, dtype)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return T.transpose(T.reshape(x, (b, n, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        if q.shape[-1] != self.dim or k.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise DimensionError(
                f"attention expects channel dim {self.dim}; got "
                f"q {q.shape}, k {k.shape}, v {v.shape}"
            )
        if k.shape[-2] != v.shape[-2]:
            raise DimensionError(
                f"key/value token counts differ: {k.shape[-2]} vs {v.shape[-2]}"
            )
        b, n_q, _ = q.shape
        qh = self._split_heads(self.q_proj(q))
        kh = self._split_heads(self.k_proj(k))
        vh = self._split_heads(self.v_proj(v))
        scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))),
                         1.0 / math.sqrt(self.head_dim))
        weights = T.softmax_lastdim(scores)
        mixed = T.matmul(weights, vh)
        merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, n_q, self.dim))
        return self.o_proj(merged)

    def attention_weights(self, q: Tensor, k: Tensor) -> Tensor:
        """Per-head attention matrix, exposed for the convexity property tests."""
        qh = self._split_heads(self.q_proj(q))
        kh = self._split_heads(self.k_proj(k))
        scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))),
                         1.0 / math.sqrt(self.head_dim))
        return T.softmax_lastdim(scores)


class FeedForward(Module):
    """Token-wise expand -> GELU -> contract. No token mixing."""

    def __init__(self, dim: int, ratio: int, rng: np.random.Generator, dtype=None):
        self.dim = dim
        self.ratio = ratio
        self.expand = Linear(dim, ratio * dim, rng, dtype)
        self.contract = Linear(ratio * dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.contract(T.gelu(self.expand(x)))
