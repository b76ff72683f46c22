"""The three block types of the backbone plus stage-boundary plumbing.

- TransformerBlock: pre-LN self-attention + pre-LN FFN, both residual.
- DualBlock: a semantic pathway (self-attention over m semantic tokens, then
  cross-attention pulling from the pixel tokens, then FFN) feeding a pixel
  pathway (cross-attention of pixel tokens against the updated semantic
  tokens, then FFN). The pixel pathway consumes the UPDATED semantic tokens.
- MergeBlock: joint self-attention over the concatenated pixel+semantic
  sequence with two separate per-pathway FFNs.

All token tensors are batched: (B, tokens, channels). Each normalization site
in the block equations has its own LayerNorm instance, including the ones
that re-normalize a tensor already normalized elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, InputError
from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention
from .tensor import Tensor

DUAL_VARIANTS = ("A", "B", "C", "D")


@dataclass
class FeatureMap:
    """Pixel-pathway tokens with their spatial extent (tokens = height*width)."""

    tokens: Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.tokens.shape[-2] != self.height * self.width:
            raise DimensionError(
                f"feature map has {self.tokens.shape[-2]} tokens but "
                f"{self.height}x{self.width} spatial extent"
            )

    @property
    def channels(self) -> int:
        return self.tokens.shape[-1]


@dataclass
class SemanticTokens:
    """The m compressed semantic tokens."""

    tokens: Tensor

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]

    @property
    def channels(self) -> int:
        return self.tokens.shape[-1]


class TransformerBlock(Module):
    def __init__(self, dim: int, heads: int, ffn_ratio: int,
                 rng: np.random.Generator, dtype=None):
        self.norm_attn = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm_ffn = LayerNorm(dim, dtype)
        self.ffn = FeedForward(dim, ffn_ratio, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        xn = self.norm_attn(x)
        x = T.add(self.attn(xn, xn, xn), x)
        return T.add(self.ffn(self.norm_ffn(x)), x)


class DualBlock(Module):
    """Two-pathway block; ``variant`` selects the semantic-pathway rewrite.

    D: full block. A: no semantic self-attention. B: no semantic FFN.
    C: cross-attention before self-attention.
    """

    def __init__(self, dim: int, heads: int, pixel_ratio: int, semantic_ratio: int,
                 rng: np.random.Generator, dtype=None, variant: str = "D"):
        if variant not in DUAL_VARIANTS:
            raise ConfigError(f"unknown dual-block variant {variant!r}")
        self.variant = variant
        # semantic pathway
        self.norm_x_sem = LayerNorm(dim, dtype)
        if variant != "A":
            self.norm_z = LayerNorm(dim, dtype)
            self.sem_self = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm_z_mid = LayerNorm(dim, dtype)
        self.sem_cross = MultiHeadAttention(dim, heads, rng, dtype)
        if variant != "B":
            self.norm_z_ffn = LayerNorm(dim, dtype)
            self.sem_ffn = FeedForward(dim, semantic_ratio, rng, dtype)
        # pixel pathway
        self.norm_x_pix = LayerNorm(dim, dtype)
        self.norm_z_out = LayerNorm(dim, dtype)
        self.pix_cross = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm_x_ffn = LayerNorm(dim, dtype)
        self.pix_ffn = FeedForward(dim, pixel_ratio, rng, dtype)

    def _semantic_pathway(self, x: Tensor, z: Tensor) -> Tensor:
        xn = self.norm_x_sem(x)
        if self.variant == "A":
            z_refined = z
        elif self.variant == "C":
            z_refined = T.add(self.sem_cross(self.norm_z(z), xn, xn), z)
            zm = self.norm_z_mid(z_refined)
            z_refined = T.add(self.sem_self(zm, zm, zm), z_refined)
        else:
            zn = self.norm_z(z)
            z_refined = T.add(self.sem_self(zn, zn, zn), z)
        if self.variant != "C":
            z_refined = T.add(
                self.sem_cross(self.norm_z_mid(z_refined), xn, xn), z_refined
            )
        if self.variant == "B":
            return z_refined
        return T.add(self.sem_ffn(self.norm_z_ffn(z_refined)), z_refined)

    def __call__(self, x: FeatureMap, z: SemanticTokens) -> tuple[FeatureMap, SemanticTokens]:
        if x.channels != z.channels:
            raise ConfigError(
                f"pathway channel mismatch: pixel {x.channels} vs semantic {z.channels}"
            )
        z_next = self._semantic_pathway(x.tokens, z.tokens)
        xn = self.norm_x_pix(x.tokens)
        zn = self.norm_z_out(z_next)
        x_mid = T.add(self.pix_cross(xn, zn, zn), x.tokens)
        x_next = T.add(self.pix_ffn(self.norm_x_ffn(x_mid)), x_mid)
        return FeatureMap(x_next, x.height, x.width), SemanticTokens(z_next)


class MergeBlock(Module):
    def __init__(self, dim: int, heads: int, pixel_ratio: int, semantic_ratio: int,
                 rng: np.random.Generator, dtype=None):
        self.norm_joint = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm_x = LayerNorm(dim, dtype)
        self.ffn_x = FeedForward(dim, pixel_ratio, rng, dtype)
        self.norm_z = LayerNorm(dim, dtype)
        self.ffn_z = FeedForward(dim, semantic_ratio, rng, dtype)

    def __call__(self, x: FeatureMap, z: SemanticTokens) -> tuple[FeatureMap, SemanticTokens]:
        if x.channels != z.channels:
            raise DimensionError(
                f"pathway channel mismatch: pixel {x.channels} vs semantic {z.channels}"
            )
        n, m = x.tokens.shape[-2], z.count
        joint = T.concat([x.tokens, z.tokens], axis=-2)
        yn = self.norm_joint(joint)
        mixed = T.add(self.attn(yn, yn, yn), joint)
        x_mid, z_mid = T.split(mixed, [n, m], axis=-2)
        x_next = T.add(self.ffn_x(self.norm_x(x_mid)), x_mid)
        z_next = T.add(self.ffn_z(self.norm_z(z_mid)), z_mid)
        return FeatureMap(x_next, x.height, x.width), SemanticTokens(z_next)


class PatchEmbed(Module):
    """Flatten non-overlapping p×p patches, project to the new width, LN."""

    def __init__(self, in_channels: int, patch: int, out_channels: int,
                 rng: np.random.Generator, dtype=None):
        from .nn import Linear

        self.in_channels = in_channels
        self.patch = patch
        self.out_channels = out_channels
        self.proj = Linear(patch * patch * in_channels, out_channels, rng, dtype)
        self.norm = LayerNorm(out_channels, dtype)

    def __call__(self, x: FeatureMap) -> FeatureMap:
        p = self.patch
        if x.height % p != 0 or x.width % p != 0:
            raise InputError(
                f"spatial extent {x.height}x{x.width} not divisible by patch size {p}"
            )
        b = x.tokens.shape[0]
        h_out, w_out = x.height // p, x.width // p
        c = x.channels
        grid = T.reshape(x.tokens, (b, h_out, p, w_out, p, c))
        patches = T.transpose(grid, (0, 1, 3, 2, 4, 5))
        flat = T.reshape(patches, (b, h_out * w_out, p * p * c))
        return FeatureMap(self.norm(self.proj(flat)), h_out, w_out)


class SemanticTransition(Module):
    """Carry semantic tokens across a stage boundary: linear projection + LN."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator, dtype=None):
        from .nn import Linear

        self.proj = Linear(in_channels, out_channels, rng, dtype)
        self.norm = LayerNorm(out_channels, dtype)

    def __call__(self, z: SemanticTokens) -> SemanticTokens:
        return SemanticTokens(self.norm(self.proj(z.tokens)))
