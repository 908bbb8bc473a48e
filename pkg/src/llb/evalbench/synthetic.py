"""Moving-shape videos: textured targets over a smooth background, plus
optional distractors that copy a target's appearance but move independently."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import zoom

from ..config import SyntheticConfig
from .dataset import VideoSequence


@dataclass
class _Sprite:
    kind: str
    radius: float
    color: np.ndarray
    stripe: tuple[float, float, float]  # frequency, angle, contrast
    pos: np.ndarray
    vel: np.ndarray


def _background(rng, h, w):
    coarse = rng.uniform(0.15, 0.85, size=(5, 5, 3))
    smooth = zoom(coarse, (h / 5, w / 5, 1), order=1, mode="nearest", grid_mode=True)
    return smooth[:h, :w].astype(np.float32)


def _shape_mask(kind, center, radius, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy + 0.5 - center[0]
    dx = xx + 0.5 - center[1]
    if kind == "disk":
        return dy * dy + dx * dx <= radius * radius
    return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)


def _texture(sprite, h, w):
    freq, angle, contrast = sprite.stripe
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx - sprite.pos[1]) * np.cos(angle) + (yy - sprite.pos[0]) * np.sin(angle)
    shade = 1.0 + contrast * np.sin(2 * np.pi * freq * u)
    return np.clip(sprite.color[None, None, :] * shade[..., None], 0, 1)


def _step(sprite, h, w):
    pos = sprite.pos + sprite.vel
    for axis, lim in ((0, h), (1, w)):
        lo, hi = sprite.radius, lim - sprite.radius
        if pos[axis] < lo:
            pos[axis] = 2 * lo - pos[axis]
            sprite.vel[axis] *= -1
        elif pos[axis] > hi:
            pos[axis] = 2 * hi - pos[axis]
            sprite.vel[axis] *= -1
        pos[axis] = min(max(pos[axis], lo), hi)
    sprite.pos = pos


def _random_sprite(rng, cfg, h, w, kind=None):
    r = rng.uniform(*cfg.radius_range)
    speed = rng.uniform(*cfg.speed_range) if cfg.speed_range[1] > 0 else 0.0
    theta = rng.uniform(0, 2 * np.pi)
    return _Sprite(
        kind=kind or str(rng.choice(cfg.shapes)),
        radius=r,
        color=rng.uniform(0.05, 0.95, size=3).astype(np.float32),
        stripe=(rng.uniform(0.05, 0.25), rng.uniform(0, np.pi), rng.uniform(0.1, 0.4)),
        pos=np.array([rng.uniform(r, h - r), rng.uniform(r, w - r)]),
        vel=np.array([speed * np.sin(theta), speed * np.cos(theta)]),
    )


def gen_synthetic(cfg: SyntheticConfig, name: str | None = None) -> VideoSequence:
    """Render one sequence, deterministic in ``cfg.seed``.

    Lower object ids win where target objects overlap; distractors sit behind
    all targets and never appear in the labels.
    """
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    bg = _background(rng, h, w)
    targets = [_random_sprite(rng, cfg, h, w) for _ in range(cfg.num_objects)]
    distractors = []
    for _ in range(cfg.num_distractors if cfg.num_objects else 0):
        src = targets[int(rng.integers(len(targets)))]
        d = _random_sprite(rng, cfg, h, w, kind=src.kind)
        d.radius, d.color, d.stripe = src.radius, src.color, src.stripe
        d.pos = np.array([rng.uniform(d.radius, h - d.radius), rng.uniform(d.radius, w - d.radius)])
        distractors.append(d)

    frames, labels, overlaps = [], [], []
    for t in range(cfg.length):
        img = bg.copy()
        lab = np.zeros((h, w), dtype=np.int64)
        for d in distractors:
            m = _shape_mask(d.kind, d.pos, d.radius, h, w)
            img[m] = _texture(d, h, w)[m]
        covered = np.zeros((h, w), dtype=bool)
        for oid in range(len(targets), 0, -1):
            s = targets[oid - 1]
            m = _shape_mask(s.kind, s.pos, s.radius, h, w)
            if (covered & m).any():
                overlaps.append(t)
            covered |= m
            img[m] = _texture(s, h, w)[m]
            lab[m] = oid
        frames.append(img.astype(np.float32))
        labels.append(lab)
        for s in targets + distractors:
            _step(s, h, w)

    meta = {"seed": cfg.seed, "overlap_frames": sorted(set(overlaps)),
            "num_distractors": len(distractors)}
    return VideoSequence(name or f"synth_{cfg.seed:05d}", frames, labels,
                         list(range(1, cfg.num_objects + 1)), meta)


def gen_dataset(cfg: SyntheticConfig) -> list[VideoSequence]:
    """``cfg.num_sequences`` sequences with seeds ``cfg.seed * 1000 + i``."""
    return [gen_synthetic(replace(cfg, seed=cfg.seed * 1000 + i)) for i in range(cfg.num_sequences)]
