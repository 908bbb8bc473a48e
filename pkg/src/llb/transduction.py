"""Transformer transduction branch.

Memory features are encoded jointly by one self-attention block; the current
frame passes its own self-attention block and then queries the memory in a
cross-attention layer whose values are the memory frames' E1 encodings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .datamodel import InputError


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, return_weights: bool = False):
    """Scaled dot-product attention over the second-to-last axis.

    q (..., Lq, E), k (..., Lk, E), v (..., Lk, Dv). Temperature is sqrt(E).
    """
    if k.shape[-2] == 0:
        raise InputError("attention needs at least one key")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise InputError(f"incompatible q/k/v shapes {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    weights = scores.softmax(dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def _split_heads(x, heads):
    b, n, c = x.shape
    return x.reshape(b, n, heads, c // heads).transpose(1, 2)


def _merge_heads(x):
    b, h, n, c = x.shape
    return x.transpose(1, 2).reshape(b, n, h * c)


def instance_norm_tokens(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Normalise each channel over all tokens of a sample: x (B, L, C)."""
    mean = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class SelfAttentionBlock(nn.Module):
    """Multi-head self-attention, residual add, then instance normalisation."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise InputError("heads must divide dim")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.norm_weight = nn.Parameter(torch.ones(dim))
        self.norm_bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        h = self.heads
        y = attention(_split_heads(self.q(x), h), _split_heads(self.k(x), h), _split_heads(self.v(x), h))
        x = x + self.out(_merge_heads(y))
        return instance_norm_tokens(x) * self.norm_weight + self.norm_bias


class CrossAttention(nn.Module):
    """Query/key projections only; values are the memory E1 tokens, split by head."""

    def __init__(self, dim, value_dim, heads, out_proj=True):
        super().__init__()
        self.heads = heads if value_dim % heads == 0 else 1
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.out = nn.Linear(value_dim, value_dim) if out_proj else None
        if self.out is not None:
            nn.init.eye_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, query, key, value, project=True):
        h = self.heads
        y = _merge_heads(attention(_split_heads(self.q(query), h), _split_heads(self.k(key), h),
                                   _split_heads(value, h)))
        if project and self.out is not None:
            y = self.out(y)
        return y


@dataclass
class EncodedMemory:
    m_sa: torch.Tensor      # (B, N*H*W, C)
    e1_flat: torch.Tensor   # (B, N*H*W, D)
    frame_indices: list[int] | None = None

    def __post_init__(self):
        if self.m_sa.shape[:2] != self.e1_flat.shape[:2]:
            raise InputError("memory keys and values have different row counts")


def flatten_maps(x: torch.Tensor) -> torch.Tensor:
    """(B, N, C, H, W) -> (B, N*H*W, C)."""
    b, n, c, h, w = x.shape
    return x.permute(0, 1, 3, 4, 2).reshape(b, n * h * w, c)


class TransductionBranch(nn.Module):
    def __init__(self, feat_dim, label_dim, heads=4, out_proj=True):
        super().__init__()
        self.feat_dim = feat_dim
        self.encoder = SelfAttentionBlock(feat_dim, heads)
        self.decoder_sa = SelfAttentionBlock(feat_dim, heads)
        self.cross = CrossAttention(feat_dim, label_dim, heads, out_proj)

    def encode_memory(self, feats: torch.Tensor, e1: torch.Tensor, frame_indices=None) -> EncodedMemory:
        """feats (B,N,C,H,W) and e1 (B,N,D,H,W); unbatched (N,...) inputs get B=1."""
        if feats.dim() == 4:
            feats, e1 = feats.unsqueeze(0), e1.unsqueeze(0)
        if feats.shape[1] == 0:
            raise InputError("memory is empty")
        if feats.shape[2] != self.feat_dim:
            raise InputError(f"memory has {feats.shape[2]} channels, expected {self.feat_dim}")
        return EncodedMemory(self.encoder(flatten_maps(feats)), flatten_maps(e1), frame_indices)

    def decode_current(self, x: torch.Tensor, mem: EncodedMemory, project=True) -> torch.Tensor:
        """x (B,C,H,W) or (C,H,W) -> E1* with the same layout and D channels."""
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        b, c, h, w = x.shape
        if c != mem.m_sa.shape[-1]:
            raise InputError(f"current frame has {c} channels, memory has {mem.m_sa.shape[-1]}")
        q = self.decoder_sa(x.flatten(2).transpose(1, 2))
        out = self.cross(q, mem.m_sa, mem.e1_flat, project=project)
        out = out.transpose(1, 2).reshape(b, -1, h, w)
        return out[0] if single else out

    def forward(self, x, feats, e1):
        return self.decode_current(x, self.encode_memory(feats, e1))
