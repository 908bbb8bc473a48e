"""The assembled network: backbone, label generator, both branches, fusion, decoder."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import SmallBackbone
from .config import LearnerConfig, ModelConfig
from .dlgm import LabelEncoder
from .fusion import AdaptiveFusion, SegDecoder
from .induction import LearnerSamples, learn, target_model_apply
from .transduction import TransductionBranch


class LLBModel(nn.Module):
    def __init__(self, cfg: ModelConfig, learner: LearnerConfig | None = None):
        super().__init__()
        self.cfg = cfg
        self.learner_cfg = learner or LearnerConfig()
        self.backbone = SmallBackbone(cfg.backbone_widths, cfg.feat_dim, cfg.in_channels)
        self.label_encoder = LabelEncoder(cfg)
        self.transduction = TransductionBranch(cfg.feat_dim, cfg.label_dim, cfg.num_heads, cfg.cross_out_proj)
        self.fusion = AdaptiveFusion(cfg.label_dim, cfg.gate_hidden, enabled=cfg.use_afm)
        self.decoder = SegDecoder(cfg.label_dim, self.backbone.skip_dims, cfg.decoder_channels)
        raw = math.log(math.expm1(cfg.ridge_lambda)) if cfg.ridge_lambda > 0 else -30.0
        self.raw_lambda = nn.Parameter(torch.tensor(raw), requires_grad=cfg.learn_lambda)

    @property
    def ridge_lambda(self) -> torch.Tensor:
        return F.softplus(self.raw_lambda)

    def extract(self, frames):
        return self.backbone(frames)

    def encode_labels(self, frames, masks, threshold=0.5):
        return self.label_encoder.encode(frames, masks, threshold)

    def fit_target_model(self, samples: LearnerSamples, tau, n_iters):
        return learn(samples, tau, n_iters, self.ridge_lambda, kernel_size=self.cfg.kernel_size,
                     eps=self.learner_cfg.curvature_eps)

    def branches(self, x16, mem_feats, mem_e1, tau):
        """Returns (E1*, E2*) for current features x16 (B,C,h,w)."""
        mem = self.transduction.encode_memory(mem_feats, mem_e1)
        e1s = self.transduction.decode_current(x16, mem)
        e2s = target_model_apply(tau, x16)
        return e1s, e2s

    def segment(self, x16, skips, mem_feats, mem_e1, tau, image_size):
        e1s, e2s = self.branches(x16, mem_feats, mem_e1, tau)
        e_tar = self.fusion(e1s, e2s)
        return self.decoder(e_tar, skips, image_size)
