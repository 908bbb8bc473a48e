"""Offline training on short mini-sequences that mimic online inference."""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .config import LLBConfig, TrainConfig
from .datamodel import InputError
from .dlgm import complement_loss
from .inference import CropTransform, apply_crop, crop_box, mask_box
from .induction import LearnerSamples
from .model import LLBModel

log = logging.getLogger(__name__)


def lovasz_hinge(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Binary Lovasz hinge, averaged over images. logits/labels (B, H, W)."""
    losses = []
    for lg, lb in zip(logits.flatten(1), labels.flatten(1)):
        signs = 2 * lb - 1
        errors = 1 - lg * signs
        errors_sorted, perm = torch.sort(errors, descending=True)
        gt_sorted = lb[perm]
        gts = gt_sorted.sum()
        inter = gts - gt_sorted.cumsum(0)
        union = gts + (1 - gt_sorted).cumsum(0)
        jac = 1 - inter / union
        jac = torch.cat([jac[:1], jac[1:] - jac[:-1]])
        losses.append(torch.dot(F.relu(errors_sorted), jac))
    return torch.stack(losses).mean()


SEG_LOSSES = {
    "bce": lambda logits, target: F.binary_cross_entropy_with_logits(logits, target),
    "lovasz_hinge": lovasz_hinge,
}


@dataclass
class MiniBatch:
    frames: torch.Tensor  # (B, Q, 3, H, W)
    masks: torch.Tensor   # (B, Q, H, W), {0, 1}


def train_step(model: LLBModel, batch: MiniBatch, cfg: TrainConfig) -> dict[str, torch.Tensor]:
    """Forward one batch of mini-sequences; returns the loss breakdown (not yet backpropagated)
    plus the detached per-frame segmentation terms under ``seg_frames``.

    Frame 0 seeds the memory with its ground truth; frames 1..Q-1 are predicted
    and supervised, and each prediction is written back to memory before the
    target model is updated.
    """
    frames, masks = batch.frames, batch.masks
    b, q = frames.shape[:2]
    if q < 2:
        raise InputError("mini-sequences need at least 2 frames")
    lcfg = model.learner_cfg
    image_size = frames.shape[-2:]
    x16, skips = model.extract(frames.flatten(0, 1))
    x16 = x16.unflatten(0, (b, q))
    skips = [s.unflatten(0, (b, q)) for s in skips]

    e1, e2, w = model.encode_labels(frames[:, 0], masks[:, 0])
    mem_f, mem_e1, mem_e2, mem_w = [x16[:, 0]], [e1], [e2], [w]
    cos_terms = [complement_loss(e1, e2)]
    samples = LearnerSamples(x16[:, :1], e2[:, None], w[:, None])
    tau = model.fit_target_model(samples, None, lcfg.iters_train_init)

    seg_fn = SEG_LOSSES[cfg.seg_loss]
    seg_terms = []
    for t in range(1, q):
        logits = model.segment(x16[:, t], [s[:, t] for s in skips], torch.stack(mem_f, 1),
                               torch.stack(mem_e1, 1), tau, image_size)
        seg_terms.append(seg_fn(logits, masks[:, t]))
        if t == q - 1:
            break
        pred = (torch.sigmoid(logits) >= 0.5).to(frames.dtype).detach()
        e1, e2, w = model.encode_labels(frames[:, t], pred)
        cos_terms.append(complement_loss(e1, e2))
        mem_f.append(x16[:, t])
        mem_e1.append(e1)
        mem_e2.append(e2)
        mem_w.append(w)
        samples = LearnerSamples(torch.stack(mem_f, 1), torch.stack(mem_e2, 1), torch.stack(mem_w, 1))
        tau = model.fit_target_model(samples, tau, lcfg.iters_train_update)

    seg_frames = torch.stack(seg_terms)
    seg = seg_frames.mean()
    cos = torch.stack(cos_terms).mean()
    total = seg + cfg.w_cos * cos if cfg.w_cos else seg
    return {"seg": seg, "cos": cos, "total": total, "seg_frames": seg_frames.detach()}


class MiniSequenceSampler:
    """Draws (sequence, object) mini-sequences of Q frames in temporal order.

    With ``train_crop`` each frame is cropped around the previous frame's
    ground-truth box (jittered), mirroring the inference-time crop.
    """

    def __init__(self, sequences, cfg: LLBConfig, seed: int = 0):
        self.sequences = sequences
        self.cfg = cfg
        self.rng = random.Random(seed)
        self.pairs = [(i, o) for i, s in enumerate(sequences) for o in s.object_ids]
        if not self.pairs:
            raise InputError("no annotated objects to train on")

    def _indices(self, n):
        q, gap = self.cfg.train.seq_len, self.cfg.train.max_gap
        while True:
            steps = [self.rng.randint(1, gap) for _ in range(q - 1)]
            if sum(steps) < n:
                break
            gap = max(1, gap - 1)
            if gap == 1 and q - 1 >= n:
                raise InputError(f"sequence of {n} frames is shorter than seq_len {q}")
        start = self.rng.randint(0, n - 1 - sum(steps))
        return list(np.cumsum([start] + steps))

    def _jitter(self, box):
        if box is None:
            return None
        j = self.cfg.train.crop_jitter
        x0, y0, x1, y1 = box
        bw, bh = x1 - x0, y1 - y0
        cx = (x0 + x1) / 2 + self.rng.uniform(-j, j) * bw
        cy = (y0 + y1) / 2 + self.rng.uniform(-j, j) * bh
        s = math.exp(self.rng.uniform(-j, j))
        return cx - s * bw / 2, cy - s * bh / 2, cx + s * bw / 2, cy + s * bh / 2

    def sample_one(self):
        si, obj = self.rng.choice(self.pairs)
        seq = self.sequences[si]
        idx = self._indices(len(seq))
        ic = self.cfg.infer
        frames, masks = [], []
        prev = None
        for k, t in enumerate(idx):
            m = (seq.labels[t] == obj).astype(np.float32)
            ref = m if k == 0 else prev
            box = self._jitter(mask_box(ref)) if self.cfg.train.train_crop else None
            h, w = m.shape
            if self.cfg.train.train_crop:
                b, fb = crop_box(box, (h, w), ic.crop_scale, ic.crop_scale_mode)
            else:
                b, fb = (0.0, 0.0, float(w), float(h)), False
            tr = CropTransform(b, (h, w), ic.work_size, fb)
            frames.append(apply_crop(seq.frames[t], tr))
            masks.append((apply_crop(m, tr)[0] >= 0.5).float())
            prev = m
        return torch.stack(frames), torch.stack(masks)

    def sample(self, batch_size) -> MiniBatch:
        items = [self.sample_one() for _ in range(batch_size)]
        return MiniBatch(torch.stack([f for f, _ in items]), torch.stack([m for _, m in items]))


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def train(model: LLBModel, sequences, cfg: LLBConfig, steps: int | None = None, callback=None,
          batch_source=None) -> list[dict[str, float]]:
    """Adam with cosine decay. Returns the per-step loss history."""
    tc = cfg.train
    steps = tc.steps if steps is None else steps
    seed_everything(cfg.seed)
    sampler = batch_source or MiniSequenceSampler(sequences, cfg, seed=cfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=tc.lr, weight_decay=tc.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda i: 0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * min(i, steps) / max(steps, 1))))
    model.train()
    history = []
    for step in range(steps):
        batch = sampler.sample(tc.batch_size) if not isinstance(sampler, MiniBatch) else sampler
        losses = train_step(model, batch, tc)
        opt.zero_grad(set_to_none=True)
        losses["total"].backward()
        if tc.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, tc.grad_clip)
        opt.step()
        sched.step()
        rec = {k: float(losses[k].detach()) for k in ("seg", "cos", "total")}
        history.append(rec)
        if tc.log_every and (step + 1) % tc.log_every == 0:
            log.info("step %d  total %.4f  seg %.4f  cos %.4f", step + 1, rec["total"], rec["seg"], rec["cos"])
        if callback is not None:
            callback(step, rec)
    model.eval()
    return history
