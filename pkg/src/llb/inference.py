"""Online inference: target-centred cropping, per-object memory and learner
state, and soft aggregation across objects."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import InferConfig, LearnerConfig
from .datamodel import InputError, MemoryBank, MemoryEntry
from .fusion import soft_aggregate
from .induction import LearnerSamples, target_model_apply


@dataclass
class CropTransform:
    box: tuple[float, float, float, float]   # x0, y0, x1, y1 in image pixels (edges)
    image_size: tuple[int, int]              # H, W
    work_size: tuple[int, int]               # W_r, H_r
    fallback: bool = False

    @property
    def is_identity(self) -> bool:
        h, w = self.image_size
        return self.box == (0.0, 0.0, float(w), float(h)) and tuple(self.work_size) == (w, h)


def mask_box(mask) -> tuple[float, float, float, float] | None:
    """Tight box around nonzero pixels, edge coordinates; None for an empty mask."""
    m = np.asarray(mask) > 0.5 if not torch.is_tensor(mask) else (mask > 0.5).cpu().numpy()
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        return None
    return float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1)


def crop_box(prev_box, image_size, scale=5.0, mode="area"):
    """Grow ``prev_box`` about its centre (area x scale, or side x scale) and clamp per axis.

    Returns ``(box, fallback)``; a missing or zero-area box falls back to the full image.
    """
    h, w = image_size
    full = (0.0, 0.0, float(w), float(h))
    if prev_box is None:
        return full, True
    x0, y0, x1, y1 = prev_box
    bw, bh = x1 - x0, y1 - y0
    if bw <= 0 or bh <= 0:
        return full, True
    f = math.sqrt(scale) if mode == "area" else scale
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    nw, nh = bw * f, bh * f
    box = (max(0.0, cx - nw / 2), max(0.0, cy - nh / 2), min(float(w), cx + nw / 2), min(float(h), cy + nh / 2))
    return box, False


def _as_chw(img) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(img) if not torch.is_tensor(img) else img, dtype=torch.float32)
    if t.dim() == 2:
        return t[None]
    if t.shape[-1] in (1, 3) and t.shape[0] not in (1, 3):
        t = t.permute(2, 0, 1)
    return t


def _sample_box(img: torch.Tensor, box, out_hw) -> torch.Tensor:
    """Bilinear sample the region ``box`` of img (C,H,W) onto an out_hw grid."""
    c, h, w = img.shape
    oh, ow = out_hw
    x0, y0, x1, y1 = box
    xs = x0 + (torch.arange(ow, dtype=torch.float32) + 0.5) * (x1 - x0) / ow
    ys = y0 + (torch.arange(oh, dtype=torch.float32) + 0.5) * (y1 - y0) / oh
    gx = 2 * xs / w - 1
    gy = 2 * ys / h - 1
    grid = torch.stack(torch.meshgrid(gy, gx, indexing="ij")[::-1], dim=-1)[None]
    return F.grid_sample(img[None], grid, mode="bilinear", padding_mode="border", align_corners=False)[0]


def crop_resize(frame, prev_box, work_size=(128, 128), scale=5.0, mode="area", use_crop=True):
    """Crop around the previous target estimate and resize to ``work_size`` (W, H).

    frame: H x W x 3 array or 3 x H x W tensor. Returns ``(patch (3,H_r,W_r), transform)``.
    """
    img = _as_chw(frame)
    h, w = img.shape[-2:]
    if use_crop:
        box, fallback = crop_box(prev_box, (h, w), scale, mode)
    else:
        box, fallback = (0.0, 0.0, float(w), float(h)), False
    t = CropTransform(box, (h, w), tuple(work_size), fallback)
    return apply_crop(img, t), t


def apply_crop(img, transform: CropTransform) -> torch.Tensor:
    img = _as_chw(img)
    if tuple(img.shape[-2:]) != tuple(transform.image_size):
        raise InputError("image size does not match the crop transform")
    if transform.is_identity:
        return img.clone()
    wr, hr = transform.work_size
    return _sample_box(img, transform.box, (hr, wr))


def paste_back(mask_patch, transform: CropTransform, image_size=None) -> torch.Tensor:
    """Inverse of crop_resize for a single-channel map; zeros outside the box."""
    patch = torch.as_tensor(mask_patch, dtype=torch.float32)
    if patch.dim() == 3:
        patch = patch[0]
    h, w = transform.image_size
    if image_size is not None and tuple(image_size) != (h, w):
        raise InputError(f"transform was made for {transform.image_size}, not {tuple(image_size)}")
    wr, hr = transform.work_size
    if tuple(patch.shape) != (hr, wr):
        raise InputError(f"patch shape {tuple(patch.shape)} does not match work size {(hr, wr)}")
    if transform.is_identity:
        return patch.clone()
    x0, y0, x1, y1 = transform.box
    ix0, iy0 = int(math.floor(x0)), int(math.floor(y0))
    ix1, iy1 = int(math.ceil(x1)), int(math.ceil(y1))
    out = torch.zeros(h, w)
    # pixel centres inside the box, mapped into patch coordinates
    xs = torch.arange(ix0, ix1, dtype=torch.float32) + 0.5
    ys = torch.arange(iy0, iy1, dtype=torch.float32) + 0.5
    u = (xs - x0) / (x1 - x0) * 2 - 1
    v = (ys - y0) / (y1 - y0) * 2 - 1
    grid = torch.stack(torch.meshgrid(v, u, indexing="ij")[::-1], dim=-1)[None]
    vals = F.grid_sample(patch[None, None], grid, mode="bilinear", padding_mode="border", align_corners=False)[0, 0]
    inside = ((xs >= x0) & (xs <= x1))[None, :] & ((ys >= y0) & (ys <= y1))[:, None]
    out[iy0:iy1, ix0:ix1] = torch.where(inside, vals, torch.zeros_like(vals))
    return out


@dataclass
class ObjectState:
    bank: MemoryBank
    tau: torch.Tensor | None = None
    prev_mask: np.ndarray | None = None
    encoded: object = None
    transform: CropTransform | None = None
    feats: tuple | None = None


@dataclass
class SequenceResult:
    labels: list[np.ndarray]            # per-frame H x W argmax map (object ids, 0 = bg)
    probs: list[torch.Tensor]           # per-frame (n+1, H, W) distribution
    object_ids: list[int]
    memory_indices: dict[int, list[int]]
    fallbacks: list[tuple[int, int]] = field(default_factory=list)


class InferenceEngine:
    def __init__(self, model, infer_cfg: InferConfig | None = None, learner_cfg: LearnerConfig | None = None):
        self.model = model
        self.cfg = infer_cfg or InferConfig()
        self.lcfg = learner_cfg or model.learner_cfg

    def _prepare(self, frame, box):
        c = self.cfg
        return crop_resize(frame, box, c.work_size, c.crop_scale, c.crop_scale_mode, c.use_crop)

    def _add_memory(self, st: ObjectState, t, patch, mask_patch, x16, n_iters):
        e1, e2, w = self.model.encode_labels(patch[None], mask_patch[None], self.cfg.bff_threshold)
        st.bank.insert(MemoryEntry(x16[0], t, e1=e1[0], e2=e2[0], weights=w[0]))
        samples = LearnerSamples.from_memory(st.bank)
        st.tau = self.model.fit_target_model(samples, st.tau, n_iters)
        st.encoded = self.model.transduction.encode_memory(st.bank.stacked("feature"), st.bank.stacked("e1"))

    def _segment(self, st: ObjectState, x16, skips):
        m = self.model
        e1s = m.transduction.decode_current(x16, st.encoded)
        e2s = target_model_apply(st.tau, x16)
        wr, hr = self.cfg.work_size
        return m.decoder(m.fusion(e1s, e2s), skips, (hr, wr))

    @torch.no_grad()
    def run(self, frames, first_masks: dict[int, np.ndarray]) -> SequenceResult:
        if len(frames) == 0:
            raise InputError("no frames to segment")
        if not first_masks:
            raise InputError("at least one object with a first-frame mask is required")
        self.model.eval()
        ids = sorted(first_masks)
        h, w = np.asarray(frames[0]).shape[:2]
        states = {o: ObjectState(MemoryBank(self.cfg.memory_capacity)) for o in ids}
        labels0 = np.zeros((h, w), dtype=np.int64)
        for o in reversed(ids):
            labels0[np.asarray(first_masks[o]) > 0.5] = o
        onehot = torch.stack([torch.as_tensor(labels0 == o, dtype=torch.float32) for o in ids])
        result = SequenceResult([labels0], [soft_aggregate(onehot)], ids, {})

        for o in ids:
            st = states[o]
            gt = np.asarray(first_masks[o], dtype=np.float32)
            patch, tr = self._prepare(frames[0], mask_box(gt))
            if tr.fallback:
                result.fallbacks.append((0, o))
            mpatch = apply_crop(gt, tr)[0]
            x16, _ = self.model.extract(patch[None])
            self._add_memory(st, 0, patch, mpatch, x16, self.lcfg.iters_infer_init)
            st.prev_mask = gt > 0.5

        for t in range(1, len(frames)):
            probs = []
            for o in ids:
                st = states[o]
                patch, tr = self._prepare(frames[t], mask_box(st.prev_mask))
                if tr.fallback:
                    result.fallbacks.append((t, o))
                x16, skips = self.model.extract(patch[None])
                logits = self._segment(st, x16, skips)
                probs.append(paste_back(torch.sigmoid(logits[0]), tr))
                st.transform, st.feats = tr, (patch, x16)
            dist = soft_aggregate(probs)
            lab_idx = dist.argmax(dim=0).numpy()
            lab = np.zeros_like(lab_idx)
            for k, o in enumerate(ids, start=1):
                lab[lab_idx == k] = o
            result.labels.append(lab)
            result.probs.append(dist)
            for o in ids:
                st = states[o]
                st.prev_mask = lab == o
                if t % self.cfg.sample_interval == 0:
                    patch, x16 = st.feats
                    mpatch = apply_crop(st.prev_mask.astype(np.float32), st.transform)[0]
                    self._add_memory(st, t, patch, mpatch, x16, self.lcfg.iters_infer_update)
        result.memory_indices = {o: states[o].bank.frame_indices for o in ids}
        return result


def infer_sequence(model, frames, first_masks, infer_cfg: InferConfig | None = None,
                   learner_cfg: LearnerConfig | None = None) -> SequenceResult:
    return InferenceEngine(model, infer_cfg, learner_cfg).run(frames, first_masks)
