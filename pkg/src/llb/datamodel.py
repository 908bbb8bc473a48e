"""Frames, masks, background-filtered frames and the per-object memory bank."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch


class InputError(ValueError):
    """Raised when an operation receives malformed or mismatched input."""


class MemoryOrderError(ValueError):
    pass


@dataclass
class Frame:
    pixels: np.ndarray  # H x W x 3, float in [0, 1]
    frame_index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InputError(f"frame must be HxWx3, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
            raise InputError("frame pixels must be finite and within [0, 1]")
        if self.frame_index < 0:
            raise InputError("frame_index must be non-negative")
        self.pixels = px

    @classmethod
    def from_uint8(cls, arr: np.ndarray, frame_index: int = 0) -> "Frame":
        return cls(np.asarray(arr, dtype=np.float32) / 255.0, frame_index)

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class Mask:
    values: np.ndarray  # H x W in [0, 1]
    object_id: int = 1
    is_ground_truth: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise InputError(f"mask must be HxW, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0) < 0 or v.max(initial=0) > 1:
            raise InputError("mask values must be finite and within [0, 1]")
        if self.is_ground_truth and not np.all((v == 0) | (v == 1)):
            raise InputError("ground-truth masks must be exactly {0, 1}-valued")
        if self.object_id < 1:
            raise InputError("object_id must be positive")
        self.values = v

    def binary(self, threshold: float = 0.5) -> np.ndarray:
        return self.values >= threshold


@dataclass
class BFF:
    """Background-filtered frame: frame pixels inside the mask, zero elsewhere."""

    pixels: np.ndarray


@dataclass
class FeatureMap:
    data: torch.Tensor  # c x H x W
    stride: int = 16

    def __post_init__(self):
        if self.data.dim() != 3:
            raise InputError(f"feature map must be c x H x W, got {tuple(self.data.shape)}")

    @property
    def spatial(self) -> tuple[int, int]:
        return tuple(self.data.shape[-2:])

    @staticmethod
    def grid_size(image_hw: tuple[int, int], stride: int = 16) -> tuple[int, int]:
        return math.ceil(image_hw[0] / stride), math.ceil(image_hw[1] / stride)


def make_bff(frame: Frame, mask: Mask, threshold: float = 0.5) -> BFF:
    if not 0 < threshold < 1:
        raise InputError("threshold must lie in (0, 1)")
    if frame.size != mask.values.shape:
        raise InputError(f"frame {frame.size} and mask {mask.values.shape} differ in size")
    keep = mask.binary(threshold)[..., None]
    return BFF(np.where(keep, frame.pixels, np.float32(0.0)))


def bff_tensor(frames: torch.Tensor, masks: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Batched BFF on tensors: frames (B,3,H,W), masks (B,1,H,W) or (B,H,W)."""
    if masks.dim() == frames.dim() - 1:
        masks = masks.unsqueeze(-3)
    if frames.shape[-2:] != masks.shape[-2:]:
        raise InputError("frame and mask spatial dims differ")
    keep = (masks >= threshold).to(frames.dtype)
    return frames * keep


@dataclass
class MemoryEntry:
    feature: torch.Tensor                 # C x H x W
    frame_index: int
    bff: torch.Tensor | None = None       # 3 x H_img x W_img
    e1: torch.Tensor | None = None        # D x H x W, cached at insertion
    e2: torch.Tensor | None = None        # D x H x W, learner label
    weights: torch.Tensor | None = None   # D x H x W, positive

    def __post_init__(self):
        hw = self.feature.shape[-2:]
        for name in ("e1", "e2", "weights"):
            t = getattr(self, name)
            if t is not None and t.shape[-2:] != hw:
                raise InputError(f"{name} spatial dims {tuple(t.shape[-2:])} != feature {tuple(hw)}")


@dataclass
class MemoryBank:
    capacity: int = 20
    pinned_first: bool = True
    entries: list[MemoryEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise InputError("capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def frame_indices(self) -> list[int]:
        return [e.frame_index for e in self.entries]

    def insert(self, entry: MemoryEntry) -> "MemoryBank":
        if self.entries:
            if entry.feature.shape != self.entries[0].feature.shape:
                raise InputError("entry feature shape does not match the bank")
            if entry.frame_index <= self.entries[-1].frame_index:
                raise MemoryOrderError(
                    f"frame {entry.frame_index} inserted after frame {self.entries[-1].frame_index}")
        self.entries.append(entry)
        if len(self.entries) > self.capacity:
            # oldest non-pinned entry goes; with capacity 1 the pinned frame wins
            if self.pinned_first:
                victim = 1 if self.capacity > 1 else len(self.entries) - 1
            else:
                victim = 0
            del self.entries[victim]
        return self

    def stacked(self, attr: str) -> torch.Tensor:
        """Stack one tensor attribute across entries: (N, ...)."""
        vals = [getattr(e, attr) for e in self.entries]
        if not vals or any(v is None for v in vals):
            raise InputError(f"memory entries lack {attr!r}")
        return torch.stack(vals)


def memory_insert(bank: MemoryBank, entry: MemoryEntry) -> MemoryBank:
    return bank.insert(entry)
