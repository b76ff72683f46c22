"""Toy-scale supervised training and the finite-difference gradient checker.

The optimizer is AdamW with decoupled weight decay: the decay factor is
applied to the parameter before the bias-corrected moment update. The
schedule is cosine decay from the base learning rate to zero, no warmup.

Gradient checking runs in 64-bit: central differences with step 1e-5 on a
random subsample of parameters, relative error against the analytic gradient
with denominator max(|analytic|, |numeric|, 1e-8).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .blocks import DualBlock, FeatureMap, MergeBlock, SemanticTokens, TransformerBlock
from .errors import ContractError
from .model import DualViT, build_model, preset_config
from .tensor import Tensor


class AdamW:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.05):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ContractError(
                    f"gradient shape {g.shape} does not match parameter {p.data.shape}"
                )
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** t)
            v_hat = self.v[i] / (1.0 - b2 ** t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    frac = min(step / total_steps, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    num_checked: int
    tolerance: float
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def gradcheck(loss_fn: Callable[[], Tensor],
              named_params: list[tuple[str, Tensor]],
              tolerance: float = 1e-4,
              samples: int = 200,
              step: float = 1e-5,
              seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild the forward graph from scratch on every call
    (parameters are perturbed in place between calls). Checks a random
    subsample of ``samples`` scalar parameters across all tensors.
    """
    for _, p in named_params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named_params}

    flat_index = [(name, p, i) for name, p in named_params for i in range(p.data.size)]
    rng = np.random.default_rng(seed)
    if len(flat_index) > samples:
        chosen = rng.choice(len(flat_index), size=samples, replace=False)
        flat_index = [flat_index[i] for i in chosen]

    report = GradCheckReport(max_rel_error=0.0, num_checked=len(flat_index),
                             tolerance=tolerance)
    for name, p, i in flat_index:
        orig = p.data.flat[i]
        p.data.flat[i] = orig + step
        plus = loss_fn().item()
        p.data.flat[i] = orig - step
        minus = loss_fn().item()
        p.data.flat[i] = orig
        numeric = (plus - minus) / (2.0 * step)
        ana = float(analytic[name].flat[i])
        err = _rel_error(ana, numeric)
        if err > report.max_rel_error:
            report.max_rel_error = err
        if err > tolerance:
            report.failures.append((name, i, ana, numeric, err))
    return report


def _block_loss(outputs: list[Tensor], probes: list[np.ndarray]) -> Tensor:
    """Scalar loss: fixed random projection of all block outputs.

    Kept at magnitude O(0.1): central differences on a larger loss carry
    float64 cancellation noise above the 1e-8 relative-error floor, which
    would falsely flag parameters whose true gradient is exactly zero.
    """
    total = None
    for out, probe in zip(outputs, probes):
        term = T.sum_all(T.mul(out, Tensor(probe / (8 * probe.size))))
        total = term if total is None else T.add(total, term)
    return total


def gradcheck_block(kind: str, tolerance: float = 1e-4, samples: int = 200,
                    seed: int = 0) -> GradCheckReport:
    """Gradcheck one block type (or the full tiny model) at desk-scale shapes."""
    rng = np.random.default_rng(seed)
    dt = np.float64
    if kind == "model":
        cfg = preset_config("tiny", seed=seed)
        model = build_model(cfg, dtype=dt)
        images = rng.random((2, cfg.resolution, cfg.resolution, 3))
        labels = rng.integers(0, cfg.num_classes, size=2)

        def loss_fn() -> Tensor:
            # scaled down for the same finite-difference noise reason as above
            ce = T.cross_entropy_with_logits(model(Tensor(images, dtype=dt)), labels)
            return T.scale(ce, 1.0 / 128.0)

        params = list(model.named_parameters())
        return gradcheck(loss_fn, params, tolerance, samples, seed=seed)

    dim, heads, n, m = 16, 2, 16, 4
    block_rng = np.random.default_rng(seed + 1)
    if kind == "dual":
        block = DualBlock(dim, heads, 4, 2, block_rng, dt)
    elif kind == "merge":
        block = MergeBlock(dim, heads, 4, 2, block_rng, dt)
    elif kind == "transformer":
        block = TransformerBlock(dim, heads, 4, block_rng, dt)
    else:
        raise ContractError(f"unknown gradcheck target {kind!r}")
    _randomize(block, block_rng)
    x = rng.standard_normal((1, n, dim))
    z = rng.standard_normal((1, m, dim))
    probes = [rng.standard_normal((1, n, dim)), rng.standard_normal((1, m, dim))]

    def loss_fn() -> Tensor:
        if kind == "transformer":
            out = block(Tensor(x, dtype=dt))
            return _block_loss([out], probes[:1])
        fm, st = block(FeatureMap(Tensor(x, dtype=dt), 4, 4),
                       SemanticTokens(Tensor(z, dtype=dt)))
        return _block_loss([fm.tokens, st.tokens], probes)

    return gradcheck(loss_fn, list(block.named_parameters()), tolerance, samples,
                     seed=seed)


def _randomize(module, rng: np.random.Generator, scale: float = 0.2) -> None:
    """Give every parameter (incl. LN affines and biases) a generic value."""
    for _, p in module.named_parameters():
        p.data += scale * rng.standard_normal(p.data.shape)


# ---------------------------------------------------------------------------
# toy training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    steps: list[tuple[int, float, float]]  # (step, loss, lr)
    final_accuracy: float
    wall_clock: float
    aborted: bool = False

    @property
    def losses(self) -> list[float]:
        return [loss for _, loss, _ in self.steps]


def evaluate(model: DualViT, dataset, batch_size: int = 16) -> float:
    """Top-1 accuracy of ``model`` on ``dataset``."""
    correct = 0
    n = len(dataset.labels)
    for start in range(0, n, batch_size):
        batch = dataset.images[start:start + batch_size]
        logits = model(batch).data
        correct += int((logits.argmax(axis=-1) == dataset.labels[start:start + batch_size]).sum())
    return correct / n


def train_toy(model: DualViT, dataset, steps: int, batch_size: int = 16,
              lr: float = 1e-3, weight_decay: float = 0.05,
              seed: int = 0) -> TrainReport:
    """Cross-entropy training with cosine decay; aborts on non-finite loss.

    Deterministic under ``seed``: batch order comes from a seeded permutation
    stream, and all arithmetic is single-threaded numpy.
    """
    t0 = time.perf_counter()
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    n = len(dataset.labels)
    order = rng.permutation(n)
    cursor = 0
    history: list[tuple[int, float, float]] = []
    last_good = [p.data.copy() for p in opt.params]
    aborted = False
    for step in range(steps):
        if cursor + batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + batch_size]
        cursor += batch_size
        logits = model(dataset.images[idx])
        loss = T.cross_entropy_with_logits(logits, dataset.labels[idx])
        loss_val = loss.item()
        step_lr = cosine_lr(lr, step, steps)
        history.append((step, loss_val, step_lr))
        if not math.isfinite(loss_val):
            for p, saved in zip(opt.params, last_good):
                p.data[...] = saved
            aborted = True
            break
        last_good = [p.data.copy() for p in opt.params]
        opt.zero_grad()
        loss.backward()
        opt.step(lr=step_lr)
    acc = evaluate(model, dataset, batch_size)
    return TrainReport(steps=history, final_accuracy=acc,
                       wall_clock=time.perf_counter() - t0, aborted=aborted)
