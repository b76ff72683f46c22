"""Dense n-dimensional float tensors with reverse-mode automatic differentiation.

Storage is a flat row-major numpy buffer (float32 by default, float64 for
gradient checking). Every differentiable op records its inputs and a backward
rule on the output tensor; ``Tensor.backward()`` walks the recorded graph in
reverse topological order and accumulates gradients additively, so fan-out is
handled correctly and repeated backward calls without ``zero_grad`` accumulate.

The token axis is the second-to-last axis throughout (``concat``/``split``
default to it). All forward results are deterministic functions of their
inputs.
"""

from __future__ import annotations

import math
import os
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float32

_debug_checks = bool(int(os.environ.get("DUALVIT_DEBUG", "0")))


def set_debug(enabled: bool) -> None:
    """Toggle the NaN/Inf sentinel that runs after every forward op."""
    global _debug_checks
    _debug_checks = enabled


def debug_enabled() -> bool:
    return _debug_checks


class Tensor:
    """A numpy-backed array participating in the gradient tape.

    ``grad`` is lazily allocated and always matches ``data`` in shape.
    ``node_id`` (the object id) identifies the tensor in the recorded graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def node_id(self) -> int:
        return id(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it.

        The loss must be a scalar. Gradients accumulate additively across
        fan-out and across repeated calls.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by forward op")
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# primitive differentiable ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy-style leading batch broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul requires >=2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    out = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise addition with broadcasting (used for residuals and biases)."""
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}") from exc

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul shapes incompatible: {a.shape} * {b.shape}") from exc

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return _make(out, (a,), backward)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Numerically stabilized softmax along the last axis."""
    if a.data.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError(f"softmax needs a non-empty last dimension, got {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            inner = (g * out).sum(axis=-1, keepdims=True)
            a.accumulate_grad(out * (g - inner))

    return _make(out, (a,), backward)


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-token standardization over the last axis, then affine."""
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layernorm affine params must have shape ({d},), got "
            f"gamma {gamma.shape}, beta {beta.shape}"
        )
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    out = gamma.data * normed + beta.data

    def backward(g: np.ndarray) -> None:
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * normed).reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gy = g * gamma.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * normed).mean(axis=-1, keepdims=True)
            a.accumulate_grad(inv_std * (gy - m1 - normed * m2))

    return _make(out, (a, gamma, beta), backward)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(√(2/π)(x + 0.044715 x³)))."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            a.accumulate_grad(g * local)

    return _make(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -2) -> Tensor:
    if not tensors:
        raise DimensionError("concat requires at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g: np.ndarray) -> None:
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis if axis >= 0 else g.ndim + axis] = slice(offset, offset + size)
                t.accumulate_grad(g[tuple(idx)])
            offset += size

    return _make(out, tuple(tensors), backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = -2) -> list[Tensor]:
    ax = axis if axis >= 0 else a.data.ndim + axis
    if sum(sizes) != a.shape[ax]:
        raise DimensionError(
            f"split sizes {list(sizes)} do not cover axis extent {a.shape[ax]}"
        )
    pieces: list[Tensor] = []
    offset = 0
    for size in sizes:
        idx = [slice(None)] * a.data.ndim
        idx[ax] = slice(offset, offset + size)
        idx_t = tuple(idx)
        piece_data = a.data[idx_t].copy()

        def backward(g: np.ndarray, idx_t=idx_t) -> None:
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[idx_t] = g
                a.accumulate_grad(full)

        pieces.append(_make(piece_data, (a,), backward))
        offset += size
    return pieces


def mean(a: Tensor, axis: int) -> Tensor:
    ax = axis if axis >= 0 else a.data.ndim + axis
    n = a.shape[ax]
    out = a.data.mean(axis=ax)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.expand_dims(g, ax) / n * np.ones_like(a.data))

    return _make(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.ones_like(a.data) * g)

    return _make(out, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _make(out, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inverse))

    return _make(out, (a,), backward)


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``logits`` of shape (B, C)."""
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be 2-d (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    batch, num_classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch size {batch}"
        )
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ContractError("labels out of range for logits width")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1)) + logits.data.max(axis=-1)
    nll = logsumexp - logits.data[np.arange(batch), labels]
    out = np.asarray(nll.mean())

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            probs = np.exp(shifted)
            probs /= probs.sum(axis=-1, keepdims=True)
            probs[np.arange(batch), labels] -= 1.0
            logits.accumulate_grad(probs * (g / batch))

    return _make(out, (logits,), backward)
