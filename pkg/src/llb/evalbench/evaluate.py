"""Run inference over a dataset and aggregate J / F / J&F."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..config import LLBConfig
from .dataset import VideoSequence
from .metrics import boundary_f, default_tolerance, jaccard

log = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass
class SequenceScore:
    name: str
    J: float
    F: float
    JF: float
    per_object: dict[str, dict[str, float]]
    per_frame: dict[str, dict[str, list[float]]]


@dataclass
class EvalReport:
    sequences: list[SequenceScore]
    J: float
    F: float
    JF: float
    ablation: dict
    config: dict
    warnings: list[str] = field(default_factory=list)
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def score_sequence(seq: VideoSequence, pred_labels: list[np.ndarray], tolerance=0.008,
                   skip_first: bool = True) -> SequenceScore:
    """Per-object J and F averaged over annotated frames, then over objects."""
    start = 1 if skip_first and len(seq) > 1 else 0
    per_obj, per_frame = {}, {}
    for o in seq.object_ids:
        js, fs = [], []
        for t in range(start, len(seq)):
            gt = seq.labels[t]
            if gt is None:
                continue
            g = gt == o
            p = np.asarray(pred_labels[t]) == o
            js.append(jaccard(p, g))
            fs.append(boundary_f(p, g, default_tolerance(g.shape, tolerance)))
        j, f = float(np.mean(js)) if js else 1.0, float(np.mean(fs)) if fs else 1.0
        per_obj[str(o)] = {"J": j, "F": f, "JF": (j + f) / 2}
        per_frame[str(o)] = {"J": js, "F": fs}
    j = float(np.mean([v["J"] for v in per_obj.values()]))
    f = float(np.mean([v["F"] for v in per_obj.values()]))
    return SequenceScore(seq.name, j, f, (j + f) / 2, per_obj, per_frame)


def evaluate(predict: Callable[[VideoSequence], list[np.ndarray]], dataset: list[VideoSequence],
             cfg: LLBConfig) -> EvalReport:
    """``predict`` maps a sequence to per-frame label maps (a model run or a stub)."""
    scores, warnings = [], []
    for seq in dataset:
        if not seq.object_ids or seq.labels[0] is None:
            msg = f"{seq.name}: missing first-frame annotation, skipped"
            log.warning(msg)
            warnings.append(msg)
            continue
        preds = predict(seq)
        scores.append(score_sequence(seq, preds, cfg.eval.boundary_tolerance, cfg.eval.skip_first_frame))
    if not scores:
        j = f = 0.0
    else:
        j = float(np.mean([s.J for s in scores]))
        f = float(np.mean([s.F for s in scores]))
    return EvalReport(scores, j, f, (j + f) / 2, cfg.model.ablation_tag(), cfg.to_dict(), warnings)


def model_predictor(model, cfg: LLBConfig):
    from ..inference import infer_sequence

    def predict(seq: VideoSequence):
        return infer_sequence(model, seq.frames, seq.first_masks(), cfg.infer, cfg.learner).labels
    return predict


def evaluate_model(model, dataset, cfg: LLBConfig) -> EvalReport:
    return evaluate(model_predictor(model, cfg), dataset, cfg)
