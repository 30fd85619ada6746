"""Vertex embedding and the multi-head self-attention encoder.

Blocks are post-norm: ``Y = LN(X + MHSA(X))``, ``X' = LN(Y + FFN(Y))``. No
positional encoding is used anywhere, so the encoder is equivariant to
permutations of its input rows and works for any number of vertices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .numeric_core import ConfigurationError, LayerNorm, Linear, linear, softmax_rows


@dataclass(frozen=True)
class TransformerConfig:
    emb_dim: int = 32
    heads: int = 4
    blocks: int = 2
    # per-head query/key/value width; None means emb_dim (full-width heads)
    head_dim: int | None = None
    # feed-forward hidden width; None means 4 * emb_dim
    ffn_dim: int | None = None
    dropout: float = 0.0

    def __post_init__(self):
        if self.emb_dim < 1 or self.heads < 1 or self.blocks < 0:
            raise ConfigurationError(f"invalid transformer sizes: {self}")
        if self.head_dim is not None and self.head_dim < 1:
            raise ConfigurationError("head_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.dropout != 0.0:
            raise ConfigurationError("dropout is not supported (fixed at 0)")

    @property
    def d_head(self) -> int:
        return self.emb_dim if self.head_dim is None else self.head_dim

    @property
    def d_ffn(self) -> int:
        return 4 * self.emb_dim if self.ffn_dim is None else self.ffn_dim


def embed_vertices(features: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
    """Embed each entity row with the same ``z x h`` matrix (no bias)."""
    if features.shape[-1] != emb.shape[0]:
        raise ConfigurationError(
            f"feature width {features.shape[-1]} does not match embedder width {emb.shape[0]}"
        )
    return linear(features, emb)


class VertexEmbedder(nn.Module):
    def __init__(self, n_features: int, emb_dim: int):
        super().__init__()
        self.n_features = n_features
        self.weight = Linear(n_features, emb_dim, bias=False).weight

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return embed_vertices(features, self.weight)


class TransformerBlock(nn.Module):
    """One encoder block.

    ``w_qkv`` holds every head's query, key and value matrix side by side:
    column block ``[j*m*d + i*d : j*m*d + (i+1)*d]`` is head ``i``'s query
    (j=0), key (j=1) or value (j=2) projection.
    """

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        h, m, d = cfg.emb_dim, cfg.heads, cfg.d_head
        self.heads, self.d_head = m, d
        self.w_qkv = nn.Parameter(Linear(h, 3 * m * d, bias=False).weight.data)
        self.out = Linear(m * d, h)
        self.norm1 = LayerNorm(h)
        self.ff1 = Linear(h, cfg.d_ffn)
        self.ff2 = Linear(cfg.d_ffn, h)
        self.norm2 = LayerNorm(h)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        *lead, v, _ = x.shape
        m, d = self.heads, self.d_head

        qkv = linear(x, self.w_qkv).reshape(*lead, v, 3, m, d).transpose(-2, -4)
        q, k, val = qkv.unbind(-3)  # each (..., m, v, d)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        heads = softmax_rows(scores) @ val  # (..., m, v, d)
        concat = heads.transpose(-2, -3).reshape(*lead, v, m * d)
        return self.out(concat)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm1(x + self.attention(x))
        return self.norm2(y + self.ff2(torch.relu(self.ff1(y))))


def multi_head_self_attention(x: torch.Tensor, block: TransformerBlock) -> torch.Tensor:
    if x.shape[-1] != block.w_qkv.shape[0]:
        raise ConfigurationError(f"input width {x.shape[-1]} != embedding width {block.w_qkv.shape[0]}")
    return block.attention(x)


class TransformerEncoder(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.blocks))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.emb_dim:
            raise ConfigurationError(f"input width {x.shape[-1]} != emb_dim {self.cfg.emb_dim}")
        for block in self.blocks:
            x = block(x)
        return x


def transformer_encode(x: torch.Tensor, encoder: TransformerEncoder) -> torch.Tensor:
    return encoder(x)
