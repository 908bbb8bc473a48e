"""Command line entry point: ``llb synth | train | infer | eval | overlay``."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, LLBConfig, apply_overrides, load_config
from .datamodel import InputError
from .evalbench.dataset import DatasetError, load_davis_dir, save_label_png, write_davis_dir
from .evalbench.evaluate import evaluate_model
from .evalbench.synthetic import gen_dataset
from .inference import infer_sequence
from .model import LLBModel
from .training import seed_everything, train

log = logging.getLogger("llb")

KNOWN_ERRORS = (ConfigError, CheckpointError, DatasetError, InputError, FileNotFoundError)


def _model_from_ckpt(path, overrides=()) -> tuple[LLBModel, LLBConfig]:
    state, header = load_checkpoint(path)
    cfg = apply_overrides(LLBConfig.from_dict(header["config"]), list(overrides))
    model = LLBModel(cfg.model, cfg.learner)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(
            f"checkpoint {path} is incompatible with the requested configuration "
            f"(trained as {header['config']['model']['label_input']}/"
            f"{header['config']['model']['label_encoder']}): {exc}") from exc
    model.eval()
    return model, cfg


class _Group(click.Group):
    """Turns expected failures into a one-line diagnostic and exit code 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except KNOWN_ERRORS as exc:
            raise click.ClickException(str(exc)) from exc


@click.group(cls=_Group)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="DAVIS-layout output directory.")
def synth(config_path, out):
    """Render synthetic moving-shape sequences."""
    cfg = load_config(config_path)
    seqs = gen_dataset(cfg.synthetic)
    write_davis_dir(out, seqs)
    click.echo(f"wrote {len(seqs)} sequences to {out}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Checkpoint path.")
@click.option("--data", type=click.Path(exists=True, file_okay=False),
              help="DAVIS-layout training data; synthetic data from the config when omitted.")
@click.option("--steps", type=int, help="Override train.steps.")
@click.option("--ablation", "overrides", multiple=True, help="key=value override, e.g. use_afm=off.")
def train_cmd(config_path, out, data, steps, overrides):
    """Train a model and write a checkpoint."""
    cfg = apply_overrides(load_config(config_path), list(overrides))
    seqs = load_davis_dir(data) if data else gen_dataset(cfg.synthetic)
    if not seqs:
        raise DatasetError("no training sequences found")
    seed_everything(cfg.seed)
    model = LLBModel(cfg.model, cfg.learner)
    hist = train(model, seqs, cfg, steps=steps)
    save_checkpoint(model, cfg, out, extra={"steps": len(hist), "final_loss": hist[-1] if hist else None})
    click.echo(f"trained {len(hist)} steps, final total loss {hist[-1]['total']:.4f}; saved {out}"
               if hist else f"saved untrained model to {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--video-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="DAVIS-layout directory; only first-frame annotations are used.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--ablation", "overrides", multiple=True)
def infer(ckpt, video_dir, out, overrides):
    """Segment every sequence and write palette PNG masks to OUT/<seq>/."""
    model, cfg = _model_from_ckpt(ckpt, overrides)
    seqs = load_davis_dir(video_dir)
    if not seqs:
        raise DatasetError(f"no annotated sequences in {video_dir}")
    for seq in seqs:
        res = infer_sequence(model, seq.frames, seq.first_masks(), cfg.infer, cfg.learner)
        d = Path(out) / seq.name
        d.mkdir(parents=True, exist_ok=True)
        for t, lab in enumerate(res.labels):
            save_label_png(d / f"{t:05d}.png", lab)
    click.echo(f"segmented {len(seqs)} sequences into {out}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", type=click.Path(exists=True, file_okay=False),
              help="DAVIS-layout evaluation data; synthetic data from the checkpoint config when omitted.")
@click.option("--ablation", "overrides", multiple=True, help="key=value override, e.g. use_afm=off.")
@click.option("--report", type=click.Path(dir_okay=False), help="Write the JSON report here.")
def eval_cmd(ckpt, data, overrides, report):
    """Score a checkpoint with J, F and J&F."""
    model, cfg = _model_from_ckpt(ckpt, overrides)
    warnings: list[str] = []
    seqs = load_davis_dir(data, warnings) if data else gen_dataset(cfg.synthetic)
    if not seqs:
        raise DatasetError("no evaluation sequences found")
    rep = evaluate_model(model, seqs, cfg)
    rep.warnings = warnings + rep.warnings
    if report:
        rep.write(report)
    click.echo(json.dumps({"J": rep.J, "F": rep.F, "J&F": rep.JF, "ablation": rep.ablation}))


@main.command()
@click.option("--masks", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--frames", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--alpha", default=0.5, show_default=True)
def overlay(masks, frames, out, alpha):
    """Blend label PNGs over frames. Matches files by stem, recursing one level for sequences."""
    masks, frames, out = Path(masks), Path(frames), Path(out)
    pairs = []
    for m in sorted(masks.rglob("*.png")):
        rel = m.relative_to(masks)
        for ext in (".jpg", ".png", ".jpeg"):
            f = frames / rel.with_suffix(ext)
            if f.exists():
                pairs.append((m, f, out / rel))
                break
    if not pairs:
        raise DatasetError("no mask/frame pairs with matching names")
    rng = np.random.default_rng(0)
    colors = np.vstack([[0, 0, 0], rng.integers(60, 255, size=(255, 3))]).astype(np.float32)
    for m, f, dst in pairs:
        lab = np.asarray(Image.open(m), dtype=np.int64)
        img = np.asarray(Image.open(f).convert("RGB"), dtype=np.float32)
        if lab.shape != img.shape[:2]:
            raise InputError(f"{m} and {f} differ in size")
        fg = (lab > 0)[..., None]
        blend = np.where(fg, (1 - alpha) * img + alpha * colors[lab % 256], img)
        dst.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(blend.clip(0, 255).astype(np.uint8)).save(dst)
    click.echo(f"wrote {len(pairs)} overlays to {out}")


if __name__ == "__main__":
    main()
