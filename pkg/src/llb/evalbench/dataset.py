"""Video sequences and DAVIS-layout reading/writing.

Layout: ``JPEGImages/<seq>/NNNNN.jpg`` and ``Annotations/<seq>/NNNNN.png``
(palette PNG, pixel value = object id, 0 = background).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..datamodel import Frame, Mask

log = logging.getLogger(__name__)


class DatasetError(RuntimeError):
    pass


@dataclass
class VideoSequence:
    name: str
    frames: list[np.ndarray]                 # H x W x 3 float32 in [0, 1]
    labels: list[np.ndarray | None]          # H x W int label maps, None = unannotated
    object_ids: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.object_ids and self.labels and self.labels[0] is not None:
            self.object_ids = sorted(int(i) for i in np.unique(self.labels[0]) if i != 0)

    def __len__(self):
        return len(self.frames)

    @property
    def size(self) -> tuple[int, int]:
        return self.frames[0].shape[:2]

    def frame(self, t: int) -> Frame:
        return Frame(self.frames[t], t)

    def mask(self, t: int, obj: int) -> Mask | None:
        lab = self.labels[t]
        if lab is None:
            return None
        return Mask((lab == obj).astype(np.float32), obj, is_ground_truth=True)

    def first_masks(self) -> dict[int, np.ndarray]:
        return {o: (self.labels[0] == o) for o in self.object_ids}


PALETTE = [0, 0, 0, 236, 95, 103, 249, 145, 87, 250, 200, 99, 153, 199, 148,
           98, 179, 178, 102, 153, 204, 197, 148, 197, 171, 121, 103]


def _palette():
    pal = list(PALETTE) + [0] * (768 - len(PALETTE))
    return pal


def save_label_png(path: Path, label: np.ndarray):
    img = Image.fromarray(label.astype(np.uint8), mode="P")
    img.putpalette(_palette())
    img.save(path)


def write_davis_dir(root: str | Path, sequences: list[VideoSequence], jpeg_quality: int = 95):
    root = Path(root)
    for seq in sequences:
        img_dir = root / "JPEGImages" / seq.name
        ann_dir = root / "Annotations" / seq.name
        img_dir.mkdir(parents=True, exist_ok=True)
        ann_dir.mkdir(parents=True, exist_ok=True)
        for t, fr in enumerate(seq.frames):
            Image.fromarray(np.round(fr * 255).astype(np.uint8)).save(
                img_dir / f"{t:05d}.jpg", quality=jpeg_quality)
            if seq.labels[t] is not None:
                save_label_png(ann_dir / f"{t:05d}.png", seq.labels[t])


def load_davis_dir(path: str | Path, warnings: list | None = None) -> list[VideoSequence]:
    """Load every sequence under ``path``. Sequences whose first annotation has
    only background are skipped and reported in ``warnings``."""
    root = Path(path)
    img_root = root / "JPEGImages"
    ann_root = root / "Annotations"
    if not img_root.is_dir():
        return []
    out = []
    for seq_dir in sorted(p for p in img_root.iterdir() if p.is_dir()):
        frames_files = sorted(f for f in seq_dir.iterdir() if f.suffix.lower() in (".jpg", ".jpeg", ".png"))
        if not frames_files:
            continue
        ann_dir = ann_root / seq_dir.name
        first_ann = ann_dir / (frames_files[0].stem + ".png")
        if not first_ann.exists():
            raise DatasetError(f"{seq_dir.name}: no annotation for first frame {frames_files[0].name}")
        frames, labels = [], []
        for f in frames_files:
            frames.append(np.asarray(Image.open(f).convert("RGB"), dtype=np.float32) / 255.0)
            ann = ann_dir / (f.stem + ".png")
            labels.append(np.asarray(Image.open(ann), dtype=np.int64) if ann.exists() else None)
        if labels[0].shape != frames[0].shape[:2]:
            raise DatasetError(f"{seq_dir.name}: first annotation size {labels[0].shape} "
                               f"does not match frame size {frames[0].shape[:2]}")
        seq = VideoSequence(seq_dir.name, frames, labels)
        if not seq.object_ids:
            msg = f"{seq_dir.name}: first-frame annotation has no objects, skipped"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        out.append(seq)
    return out
