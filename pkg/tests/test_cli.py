import json

import pytest
import yaml
from click.testing import CliRunner

from llb.cli import main

TINY = {
    "seed": 0,
    "model": {"feat_dim": 16, "label_dim": 4, "label_hidden": 16, "backbone_widths": [8, 8, 16, 16],
              "decoder_channels": [8, 4]},
    "train": {"batch_size": 1, "steps": 2, "log_every": 0},
    "infer": {"work_size": [32, 32]},
    "synthetic": {"height": 32, "width": 32, "length": 4, "num_sequences": 2, "radius_range": [4, 6]},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.yaml").write_text(yaml.safe_dump(TINY))
    runner = CliRunner()
    r = runner.invoke(main, ["synth", "--config", str(d / "tiny.yaml"), "--out", str(d / "data")])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["train", "--config", str(d / "tiny.yaml"), "--data", str(d / "data"),
                             "--out", str(d / "m.ckpt")])
    assert r.exit_code == 0, r.output
    return d


def test_synth_layout(workdir):
    seqs = sorted(p.name for p in (workdir / "data" / "JPEGImages").iterdir())
    assert len(seqs) == 2
    assert len(list((workdir / "data" / "Annotations" / seqs[0]).glob("*.png"))) == 4


def test_infer_writes_masks(workdir):
    out = workdir / "pred"
    r = CliRunner().invoke(main, ["infer", "--ckpt", str(workdir / "m.ckpt"), "--video-dir",
                                  str(workdir / "data"), "--out", str(out)])
    assert r.exit_code == 0, r.output
    assert len(list(out.rglob("*.png"))) == 8
    r = CliRunner().invoke(main, ["overlay", "--masks", str(out), "--frames",
                                  str(workdir / "data" / "JPEGImages"), "--out", str(workdir / "ov")])
    assert r.exit_code == 0, r.output
    assert len(list((workdir / "ov").rglob("*.png"))) == 8


def test_eval_report(workdir):
    rep = workdir / "r.json"
    r = CliRunner().invoke(main, ["eval", "--ckpt", str(workdir / "m.ckpt"), "--data", str(workdir / "data"),
                                  "--ablation", "use_afm=off", "--report", str(rep)])
    assert r.exit_code == 0, r.output
    line = json.loads(r.output.strip().splitlines()[-1])
    assert set(line) == {"J", "F", "J&F", "ablation"} and line["ablation"]["use_afm"] is False
    d = json.loads(rep.read_text())
    assert 0 <= d["JF"] <= 1 and len(d["sequences"]) == 2


def test_structural_ablation_mismatch_fails(workdir):
    r = CliRunner().invoke(main, ["eval", "--ckpt", str(workdir / "m.ckpt"), "--data", str(workdir / "data"),
                                  "--ablation", "use_dlgm=off"])
    assert r.exit_code == 1 and "incompatible" in r.output


@pytest.mark.parametrize("args", [
    ["eval", "--ckpt", "{d}/tiny.yaml"],
    ["train", "--config", "{d}/tiny.yaml", "--out", "{d}/x.ckpt", "--ablation", "nosuch=1"],
    ["infer", "--ckpt", "{d}/m.ckpt", "--video-dir", "{d}/empty", "--out", "{d}/o"],
])
def test_errors_exit_nonzero(workdir, args):
    (workdir / "empty").mkdir(exist_ok=True)
    r = CliRunner().invoke(main, [a.format(d=workdir) for a in args])
    assert r.exit_code != 0
    assert "Traceback" not in r.output


def test_eval_empty_dir(workdir):
    r = CliRunner().invoke(main, ["eval", "--ckpt", str(workdir / "m.ckpt"), "--data", str(workdir / "empty")])
    assert r.exit_code == 1
