"""Label generation: encode a background-filtered frame (or a bare mask) into
the two complementary target encodings and the learner's position weights."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .datamodel import bff_tensor
from .induction import NumericFault


def _pad16(x: torch.Tensor) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph, pw = (-h) % 16, (-w) % 16
    return F.pad(x, (0, pw, 0, ph)) if ph or pw else x


def conv_bn_relu(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(min(4, cout), cout),
        nn.ReLU(inplace=True),
    )


class TinyCNN(nn.Module):
    """Five 3x3 conv layers, four of them stride 2."""

    def __init__(self, cin, hidden):
        super().__init__()
        widths = [hidden // 4, hidden // 2, hidden, hidden]
        layers, c = [], cin
        for wd in widths:
            layers.append(conv_bn_relu(c, wd, stride=2))
            c = wd
        layers.append(conv_bn_relu(c, hidden))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class ConvAttnBlock(nn.Module):
    """Transformer block with a depthwise-conv positional branch."""

    def __init__(self, dim, heads):
        super().__init__()
        self.pos = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x):
        b, c, h, w = x.shape
        x = x + self.pos(x)
        t = x.flatten(2).transpose(1, 2)
        y = self.norm1(t)
        t = t + self.attn(y, y, y, need_weights=False)[0]
        t = t + self.mlp(self.norm2(t))
        return t.transpose(1, 2).reshape(b, c, h, w)


class TinyTransformer(nn.Module):
    """Conv stem to stride 4, 4x4 patch embedding to stride 16, two attention blocks."""

    def __init__(self, cin, hidden, heads=4, depth=2):
        super().__init__()
        self.stem = nn.Sequential(conv_bn_relu(cin, hidden // 4, 2), conv_bn_relu(hidden // 4, hidden // 2, 2))
        self.patch = nn.Conv2d(hidden // 2, hidden, 4, stride=4)
        self.blocks = nn.Sequential(*[ConvAttnBlock(hidden, heads) for _ in range(depth)])

    def forward(self, x):
        return self.blocks(self.patch(self.stem(x)))


class LabelEncoder(nn.Module):
    """Produces (E1, E2, W), each (B, D, ceil(H/16), ceil(W/16))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        hid, d = cfg.label_hidden, cfg.label_dim
        if cfg.label_encoder == "tiny_cnn":
            self.body = TinyCNN(3, hid)
        else:
            self.body = TinyTransformer(3, hid, heads=cfg.num_heads)
        self.head_e1 = nn.Conv2d(hid, d, 3, padding=1)
        self.head_e2 = nn.Conv2d(hid, d, 3, padding=1)
        self.head_w = nn.Conv2d(hid, d, 3, padding=1)
        # softplus(b) + floor == 1 at init
        nn.init.zeros_(self.head_w.weight)
        nn.init.constant_(self.head_w.bias, math.log(math.expm1(1.0 - cfg.weight_floor)))

    def prepare_input(self, frames: torch.Tensor, masks: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
        """BFF for the ``bff`` variant; the mask replicated to 3 channels for ``mask``."""
        if masks.dim() == frames.dim() - 1:
            masks = masks.unsqueeze(-3)
        if self.cfg.label_input == "bff":
            return bff_tensor(frames, masks, threshold)
        return (masks >= threshold).to(frames.dtype).expand_as(frames)

    def forward(self, x: torch.Tensor):
        feat = self.body(_pad16(x))
        e1 = self.head_e1(feat)
        e2 = self.head_e2(feat)
        w = F.softplus(self.head_w(feat)) + self.cfg.weight_floor
        if not (torch.isfinite(e1).all() and torch.isfinite(e2).all() and torch.isfinite(w).all()):
            raise NumericFault("non-finite label encoding")
        return e1, e2, w

    def encode(self, frames, masks, threshold: float = 0.5):
        return self(self.prepare_input(frames, masks, threshold))


def encode_labels(bff: torch.Tensor, encoder: LabelEncoder):
    """Encode a single BFF (3,H,W) or a batch (B,3,H,W)."""
    single = bff.dim() == 3
    e1, e2, w = encoder(bff.unsqueeze(0) if single else bff)
    if single:
        return e1[0], e2[0], w[0]
    return e1, e2, w


def complement_loss(e1: torch.Tensor, e2: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Mean over positions of |cos| between channel vectors; channels on dim -3."""
    if e1.shape != e2.shape:
        raise ValueError(f"shape mismatch {tuple(e1.shape)} vs {tuple(e2.shape)}")
    dot = (e1 * e2).sum(dim=-3)
    denom = e1.norm(dim=-3) * e2.norm(dim=-3)
    cos = dot / denom.clamp_min(eps)
    return cos.abs().mean()
