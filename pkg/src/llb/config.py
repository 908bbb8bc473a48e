"""Configuration dataclasses and the YAML config file loader.

The config file is a YAML mapping with optional top-level sections
``model``, ``train``, ``infer``, ``synthetic`` and ``eval`` plus a top-level
``seed``. Every key is optional; missing keys fall back to the desk-scale
defaults below. See README.md for the full schema.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_channels: int = 3
    feat_dim: int = 64          # C
    label_dim: int = 16         # D
    stride: int = 16
    backbone_widths: tuple[int, ...] = (16, 32, 48, 64)
    # DLGM
    label_input: str = "bff"              # bff | mask
    label_encoder: str = "tiny_transformer"  # tiny_transformer | tiny_cnn
    label_hidden: int = 64
    weight_floor: float = 0.01
    # transduction
    num_heads: int = 4
    cross_out_proj: bool = True
    # induction
    kernel_size: int = 3
    ridge_lambda: float = 0.05
    learn_lambda: bool = True
    # fusion / decoding
    use_afm: bool = True
    gate_hidden: int | None = None  # defaults to label_dim
    decoder_channels: tuple[int, int] = (16, 8)

    def __post_init__(self):
        self.backbone_widths = tuple(self.backbone_widths)
        self.decoder_channels = tuple(self.decoder_channels)
        if self.label_input not in ("bff", "mask"):
            raise ConfigError(f"label_input must be 'bff' or 'mask', got {self.label_input!r}")
        if self.label_encoder not in ("tiny_transformer", "tiny_cnn"):
            raise ConfigError(f"unknown label_encoder {self.label_encoder!r}")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.stride != 16:
            raise ConfigError("only stride 16 is supported")
        if self.feat_dim % self.num_heads:
            raise ConfigError("num_heads must divide feat_dim")
        if self.label_dim < 1 or self.ridge_lambda < 0:
            raise ConfigError("label_dim must be >= 1 and ridge_lambda >= 0")

    @property
    def use_dlgm(self) -> bool:
        return self.label_input == "bff" and self.label_encoder == "tiny_transformer"

    def ablation_tag(self) -> dict[str, Any]:
        return {
            "use_dlgm": self.use_dlgm,
            "use_afm": self.use_afm,
            "label_input": self.label_input,
            "label_encoder": self.label_encoder,
        }


@dataclass
class LearnerConfig:
    iters_train_init: int = 5
    iters_train_update: int = 2
    iters_infer_init: int = 20
    iters_infer_update: int = 3
    curvature_eps: float = 1e-10

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name.startswith("iters") and getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be >= 0")


@dataclass
class TrainConfig:
    seq_len: int = 4            # Q
    batch_size: int = 4
    steps: int = 1000
    lr: float = 2e-3
    weight_decay: float = 0.0
    grad_clip: float = 5.0
    w_cos: float = 1.0
    seg_loss: str = "bce"       # bce | lovasz_hinge
    max_gap: int = 3            # max temporal stride between sampled frames
    train_crop: bool = True
    crop_jitter: float = 0.15
    log_every: int = 50

    def __post_init__(self):
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2")
        if self.seg_loss not in ("bce", "lovasz_hinge"):
            raise ConfigError(f"unknown seg_loss {self.seg_loss!r}")


@dataclass
class InferConfig:
    sample_interval: int = 5    # T
    memory_capacity: int = 20
    crop_scale: float = 5.0
    crop_scale_mode: str = "area"   # area | side
    work_size: tuple[int, int] = (128, 128)  # (W, H)
    use_crop: bool = True
    bff_threshold: float = 0.5

    def __post_init__(self):
        self.work_size = tuple(self.work_size)
        if self.sample_interval < 1 or self.memory_capacity < 1:
            raise ConfigError("sample_interval and memory_capacity must be >= 1")
        if self.crop_scale_mode not in ("area", "side"):
            raise ConfigError(f"unknown crop_scale_mode {self.crop_scale_mode!r}")


@dataclass
class SyntheticConfig:
    height: int = 128
    width: int = 128
    num_objects: int = 2
    shapes: tuple[str, ...] = ("disk", "square")
    length: int = 20
    radius_range: tuple[float, float] = (9.0, 15.0)
    speed_range: tuple[float, float] = (1.0, 3.0)
    num_distractors: int = 1
    num_sequences: int = 4
    seed: int = 0

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.radius_range = tuple(self.radius_range)
        self.speed_range = tuple(self.speed_range)
        bad = set(self.shapes) - {"disk", "square"}
        if bad:
            raise ConfigError(f"unknown shapes {sorted(bad)}")


@dataclass
class EvalConfig:
    boundary_tolerance: float = 0.008   # fraction of image diagonal
    skip_first_frame: bool = True


@dataclass
class LLBConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "LLBConfig":
        data = dict(data or {})
        sections = {
            "model": ModelConfig, "learner": LearnerConfig, "train": TrainConfig,
            "infer": InferConfig, "synthetic": SyntheticConfig, "eval": EvalConfig,
        }
        kwargs: dict[str, Any] = {}
        for name, klass in sections.items():
            sub = data.pop(name, None) or {}
            known = {f.name for f in dataclasses.fields(klass)}
            unknown = set(sub) - known
            if unknown:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
            kwargs[name] = klass(**sub)
        if "seed" in data:
            kwargs["seed"] = int(data.pop("seed"))
        if data:
            raise ConfigError(f"unknown top-level keys: {sorted(data)}")
        return cls(**kwargs)

    def model_hash(self) -> str:
        """Hash of everything that determines parameter shapes and semantics."""
        blob = json.dumps(_jsonable(dataclasses.asdict(self.model)), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def paper_scale() -> LLBConfig:
    """Paper-scale constants: C=512, D=32, 832x480 working resolution."""
    cfg = LLBConfig()
    cfg.model.feat_dim = 512
    cfg.model.label_dim = 32
    cfg.model.label_hidden = 256
    cfg.model.backbone_widths = (64, 128, 256, 1024)
    cfg.model.decoder_channels = (16, 8)
    cfg.train.batch_size = 32
    cfg.infer.work_size = (832, 480)
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def load_config(path: str | os.PathLike | None = None) -> LLBConfig:
    """Read a YAML config; ``LLB_SEED`` in the environment overrides ``seed``."""
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded or {}
    cfg = LLBConfig.from_dict(data)
    env_seed = os.environ.get("LLB_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"LLB_SEED must be an integer, got {env_seed!r}") from exc
    return cfg


def apply_overrides(cfg: LLBConfig, overrides: list[str]) -> LLBConfig:
    """Apply ``key=value`` overrides such as ``use_afm=off`` or ``model.label_dim=8``.

    ``use_dlgm=off`` switches the label generator to the mask input and the
    5-layer CNN encoder.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        if isinstance(raw, str) and raw.lower() in ("on", "off"):
            value = raw.lower() == "on"
        if key == "use_dlgm":
            cfg.model.label_input = "bff" if value else "mask"
            cfg.model.label_encoder = "tiny_transformer" if value else "tiny_cnn"
            continue
        section, _, name = key.rpartition(".")
        target = getattr(cfg, section) if section else cfg.model
        if not hasattr(target, name):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, name, value)
        if hasattr(target, "__post_init__"):
            target.__post_init__()
    return cfg
