"""Full four-stage backbones: stage specs, named presets, forward pass, ablations.

Stages 1-2 stack DualBlocks (threading the semantic tokens block to block),
stages 3-4 stack MergeBlocks. Every stage starts with a patch embedding;
stage boundaries also project the semantic tokens to the new channel width.
Classification pools over the concatenated pixel+semantic output tokens,
then LN, then a linear head.

Preset channel/head/depth/ratio tables follow the published S/B/L variants;
``tiny`` is a desk-scale config for tests. The default input resolution is
224: the cumulative patch stride is 32, so the resolution must be a multiple
of it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .blocks import (DUAL_VARIANTS, DualBlock, FeatureMap, MergeBlock,
                     PatchEmbed, SemanticTokens, SemanticTransition)
from .errors import ConfigError, InputError
from .nn import LayerNorm, Linear, Module, trunc_normal
from .tensor import Tensor


@dataclass
class StageSpec:
    depth: int
    heads: int
    channels: int
    ffn_ratio_pixel: int
    ffn_ratio_semantic: int
    patch_size: int
    kind: str = "dual"  # "dual" or "merge"

    def validate(self, index: int) -> None:
        if self.channels % self.heads != 0:
            raise ConfigError(
                f"stage {index + 1}: channels {self.channels} not divisible by "
                f"{self.heads} heads"
            )
        expected = "dual" if index < 2 else "merge"
        if self.kind != expected:
            raise ConfigError(
                f"stage {index + 1} must use {expected} blocks, got {self.kind!r}"
            )


@dataclass
class ModelConfig:
    stages: list[StageSpec]
    m: int = 32
    num_classes: int = 1000
    resolution: int = 224
    pos_embed: bool = True
    seed: int = 0

    def validate(self) -> None:
        if len(self.stages) != 4:
            raise ConfigError(f"expected 4 stages, got {len(self.stages)}")
        for i, s in enumerate(self.stages):
            s.validate(i)
        stride = 1
        for s in self.stages:
            stride *= s.patch_size
        if self.resolution % stride != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by cumulative "
                f"stride {stride}"
            )
        if self.m < 1:
            raise ConfigError("m must be >= 1")

    def total_stride(self) -> int:
        stride = 1
        for s in self.stages:
            stride *= s.patch_size
        return stride

    def token_counts(self, resolution: int | None = None) -> list[int]:
        res = resolution if resolution is not None else self.resolution
        counts = []
        for s in self.stages:
            res //= s.patch_size
            counts.append(res * res)
        return counts

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        stages = [StageSpec(**s) for s in d["stages"]]
        rest = {k: v for k, v in d.items() if k != "stages"}
        return cls(stages=stages, **rest)


def _stages(depths, heads, channels, ex, ez, patches):
    kinds = ["dual", "dual", "merge", "merge"]
    return [
        StageSpec(d, h, c, x, z, p, k)
        for d, h, c, x, z, p, k in zip(depths, heads, channels, ex, ez, patches, kinds)
    ]


def preset_config(name: str, **overrides) -> ModelConfig:
    key = name.lower()
    if key == "s":
        cfg = ModelConfig(_stages((3, 4, 6, 3), (2, 4, 10, 14), (64, 128, 320, 448),
                                  (8, 8, 4, 3), (4, 4, 2, 2), (4, 2, 2, 2)))
    elif key == "b":
        cfg = ModelConfig(_stages((3, 4, 15, 3), (2, 4, 10, 16), (64, 128, 320, 512),
                                  (8, 8, 4, 3), (4, 4, 2, 2), (4, 2, 2, 2)))
    elif key == "l":
        cfg = ModelConfig(_stages((3, 6, 21, 3), (3, 6, 12, 16), (96, 192, 384, 512),
                                  (8, 8, 4, 3), (4, 4, 2, 2), (4, 2, 2, 2)))
    elif key == "tiny":
        cfg = ModelConfig(_stages((1, 1, 1, 1), (2, 2, 4, 4), (16, 32, 48, 64),
                                  (4, 4, 4, 4), (2, 2, 2, 2), (4, 2, 2, 2)),
                          m=4, num_classes=8, resolution=32)
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESET_NAMES)}")
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown config field {k!r}")
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


PRESET_NAMES = ("S", "B", "L", "tiny")


class DualViT(Module):
    def __init__(self, config: ModelConfig, variant: str = "D", dtype=None):
        if variant not in DUAL_VARIANTS:
            raise ConfigError(f"unknown ablation variant {variant!r}")
        config.validate()
        self.config = config
        self.variant = variant
        dt = dtype or T.DEFAULT_DTYPE
        rng = np.random.default_rng(config.seed)

        self.patch_embeds: list[PatchEmbed] = []
        self.transitions: list[SemanticTransition] = []
        self.stage_blocks: list[list[Module]] = []
        in_ch = 3
        res = config.resolution
        for i, spec in enumerate(config.stages):
            self.patch_embeds.append(PatchEmbed(in_ch, spec.patch_size, spec.channels, rng, dt))
            res //= spec.patch_size
            if i == 0:
                self.z0 = Tensor(trunc_normal(rng, (1, config.m, spec.channels), dtype=dt),
                                 requires_grad=True)
                if config.pos_embed:
                    self.pos_embed = Tensor(
                        trunc_normal(rng, (1, res * res, spec.channels), dtype=dt),
                        requires_grad=True)
            else:
                self.transitions.append(SemanticTransition(in_ch, spec.channels, rng, dt))
            blocks: list[Module] = []
            for _ in range(spec.depth):
                if spec.kind == "dual":
                    blocks.append(DualBlock(spec.channels, spec.heads,
                                            spec.ffn_ratio_pixel, spec.ffn_ratio_semantic,
                                            rng, dt, variant=variant))
                else:
                    blocks.append(MergeBlock(spec.channels, spec.heads,
                                             spec.ffn_ratio_pixel, spec.ffn_ratio_semantic,
                                             rng, dt))
            self.stage_blocks.append(blocks)
            in_ch = spec.channels
        self.head_norm = LayerNorm(in_ch, dt)
        self.head = Linear(in_ch, config.num_classes, rng, dt)
        self._dtype = dt

    def named_parameters(self, prefix: str = ""):
        # explicit ordering: stable paths for checkpoints and cost breakdowns
        yield prefix + "z0", self.z0
        if self.config.pos_embed:
            yield prefix + "pos_embed", self.pos_embed
        for i, pe in enumerate(self.patch_embeds):
            yield from pe.named_parameters(f"{prefix}stages.{i}.patch_embed.")
        for i, tr in enumerate(self.transitions):
            yield from tr.named_parameters(f"{prefix}stages.{i + 1}.transition.")
        for i, blocks in enumerate(self.stage_blocks):
            for j, blk in enumerate(blocks):
                yield from blk.named_parameters(f"{prefix}stages.{i}.blocks.{j}.")
        yield from self.head_norm.named_parameters(prefix + "head_norm.")
        yield from self.head.named_parameters(prefix + "head.")

    def features(self, images) -> tuple[FeatureMap, SemanticTokens]:
        """Run the stage pipeline, returning final pixel and semantic tokens."""
        x = images if isinstance(images, Tensor) else Tensor(images, dtype=self._dtype)
        if x.data.ndim != 4 or x.shape[-1] != 3:
            raise InputError(f"expected images of shape (B, H, W, 3), got {x.shape}")
        b, h, w, _ = x.shape
        if h != self.config.resolution or w != self.config.resolution:
            raise InputError(
                f"model built for {self.config.resolution}x{self.config.resolution} "
                f"input, got {h}x{w}"
            )
        fm = FeatureMap(T.reshape(x, (b, h * w, 3)), h, w)
        z: SemanticTokens | None = None
        for i in range(4):
            fm = self.patch_embeds[i](fm)
            if i == 0:
                if self.config.pos_embed:
                    fm = FeatureMap(T.add(fm.tokens, self.pos_embed), fm.height, fm.width)
                z = SemanticTokens(_tile_batch(self.z0, b))
            else:
                z = self.transitions[i - 1](z)
            for blk in self.stage_blocks[i]:
                fm, z = blk(fm, z)
        return fm, z

    def __call__(self, images) -> Tensor:
        fm, z = self.features(images)
        pooled = T.mean(T.concat([fm.tokens, z.tokens], axis=-2), axis=-2)
        return self.head(self.head_norm(pooled))


def _tile_batch(t: Tensor, batch: int) -> Tensor:
    """Broadcast a (1, m, d) parameter across the batch, keeping gradients."""
    zeros = Tensor(np.zeros((batch,) + t.shape[1:], dtype=t.data.dtype))
    return T.add(t, zeros)


def build_model(config: ModelConfig, variant: str = "D", dtype=None) -> DualViT:
    return DualViT(config, variant=variant, dtype=dtype)
