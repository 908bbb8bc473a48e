"""Train and score the component ablations under one shared budget."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from ..config import LLBConfig, apply_overrides
from ..model import LLBModel
from ..training import train
from .evaluate import evaluate_model

log = logging.getLogger(__name__)

VARIANTS = {
    "full": [],
    "dlgm_only": ["use_afm=off"],
    "baseline": ["use_dlgm=off", "use_afm=off"],
}


@dataclass
class AblationResult:
    scores: dict[str, list[float]] = field(default_factory=dict)  # variant -> J&F per seed
    seeds: list[int] = field(default_factory=list)

    def mean(self, variant: str) -> float:
        return float(np.mean(self.scores[variant]))

    def gaps(self, a: str = "full", b: str = "baseline") -> list[float]:
        return [x - y for x, y in zip(self.scores[a], self.scores[b])]


def run_ablation(base: LLBConfig, train_seqs, test_seqs, seeds=(0, 1, 2), steps: int | None = None,
                 variants=None) -> AblationResult:
    """Each variant is trained from scratch per seed on ``train_seqs`` and scored on ``test_seqs``."""
    variants = variants or VARIANTS
    res = AblationResult(seeds=list(seeds))
    for name, overrides in variants.items():
        res.scores[name] = []
        for seed in seeds:
            cfg = apply_overrides(LLBConfig.from_dict(base.to_dict()), list(overrides))
            cfg.seed = seed
            torch.manual_seed(seed)
            model = LLBModel(cfg.model, cfg.learner)
            train(model, train_seqs, cfg, steps=steps)
            jf = evaluate_model(model, test_seqs, cfg).JF
            log.info("ablation %s seed %d J&F %.4f", name, seed, jf)
            res.scores[name].append(jf)
    return res
