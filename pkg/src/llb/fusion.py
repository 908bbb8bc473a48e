"""Gated fusion of the two branch outputs, the segmentation decoder, and
multi-object soft aggregation."""
from __future__ import annotations

from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .datamodel import InputError


class Gate(nn.Module):
    """1x1 conv, ReLU, 1x1 conv, sigmoid: an element-wise weight map in (0, 1)."""

    def __init__(self, dim, hidden=None):
        super().__init__()
        hidden = hidden or dim
        self.fc1 = nn.Conv2d(dim, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, dim, 1)

    def forward(self, x):
        return torch.sigmoid(self.fc2(F.relu(self.fc1(x))))


def afm_fuse(e1s: torch.Tensor, e2s: torch.Tensor, gate1: Callable, gate2: Callable) -> torch.Tensor:
    # each gate sees only its own branch output
    if e1s.shape != e2s.shape:
        raise InputError(f"branch outputs differ: {tuple(e1s.shape)} vs {tuple(e2s.shape)}")
    return gate1(e1s) * e1s + gate2(e2s) * e2s


def plain_sum(e1s: torch.Tensor, e2s: torch.Tensor) -> torch.Tensor:
    if e1s.shape != e2s.shape:
        raise InputError(f"branch outputs differ: {tuple(e1s.shape)} vs {tuple(e2s.shape)}")
    return e1s + e2s


class AdaptiveFusion(nn.Module):
    def __init__(self, dim, hidden=None, enabled=True):
        super().__init__()
        self.enabled = enabled
        self.gate1 = Gate(dim, hidden)
        self.gate2 = Gate(dim, hidden)

    def forward(self, e1s, e2s):
        if not self.enabled:
            return plain_sum(e1s, e2s)
        return afm_fuse(e1s, e2s, self.gate1, self.gate2)


class SegDecoder(nn.Module):
    """Upsample x2 twice with stride-8 and stride-4 skips, then bilinear to image size."""

    def __init__(self, in_dim, skip_dims: Sequence[int], channels=(16, 8)):
        super().__init__()
        if len(skip_dims) != 2:
            raise InputError("decoder needs exactly two skip levels (stride 8 and 4)")
        c1, c2 = channels
        self.skip8 = nn.Conv2d(skip_dims[0], c1, 1)
        self.skip4 = nn.Conv2d(skip_dims[1], c2, 1)
        self.pre = nn.Sequential(nn.Conv2d(in_dim, c1, 3, padding=1), nn.ReLU(inplace=True))
        self.block8 = nn.Sequential(nn.Conv2d(2 * c1, c1, 3, padding=1), nn.ReLU(inplace=True),
                                    nn.Conv2d(c1, c2, 3, padding=1), nn.ReLU(inplace=True))
        self.block4 = nn.Sequential(nn.Conv2d(2 * c2, c2, 3, padding=1), nn.ReLU(inplace=True))
        self.head = nn.Conv2d(c2, 1, 1)

    def forward(self, e_tar, skips: Sequence[torch.Tensor], image_size):
        if skips is None or len(skips) != 2:
            raise InputError("decoder needs the stride-8 and stride-4 skip features")
        s8, s4 = skips
        x = self.pre(e_tar)
        x = F.interpolate(x, size=s8.shape[-2:], mode="bilinear", align_corners=False)
        x = self.block8(torch.cat([x, self.skip8(s8)], dim=1))
        x = F.interpolate(x, size=s4.shape[-2:], mode="bilinear", align_corners=False)
        x = self.block4(torch.cat([x, self.skip4(s4)], dim=1))
        x = self.head(x)
        return F.interpolate(x, size=tuple(image_size), mode="bilinear", align_corners=False)[:, 0]


def decode_segmentation(e_tar, skips, decoder: SegDecoder, image_size):
    return decoder(e_tar, skips, image_size)


def soft_aggregate(probs, eps: float = 1e-5) -> torch.Tensor:
    """Merge n independent object probability maps into an (n+1)-way distribution.

    Channel 0 is background. probs: sequence of (H, W) maps or an (n, H, W) tensor.
    """
    if isinstance(probs, (list, tuple)):
        if len(probs) == 0:
            raise InputError("soft_aggregate needs at least one object")
        probs = torch.stack([torch.as_tensor(p) for p in probs])
    if probs.shape[0] == 0:
        raise InputError("soft_aggregate needs at least one object")
    p = probs.clamp(eps, 1 - eps)
    bg = torch.prod(1 - p, dim=0, keepdim=True).clamp(eps, 1 - eps)
    allp = torch.cat([bg, p], dim=0)
    odds = allp / (1 - allp)
    return odds / odds.sum(dim=0, keepdim=True)
