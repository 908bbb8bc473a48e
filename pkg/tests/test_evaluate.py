import json

import numpy as np
import pytest

from llb.config import LLBConfig, SyntheticConfig
from llb.evalbench import evaluate, gen_dataset
from llb.evalbench.dataset import VideoSequence
from llb.evalbench.evaluate import score_sequence


@pytest.fixture(scope="module")
def data():
    return gen_dataset(SyntheticConfig(num_sequences=3, length=5, height=48, width=48, radius_range=(5.0, 8.0)))


def test_oracle_predictor_scores_one(data):
    rep = evaluate(lambda s: s.labels, data, LLBConfig())
    assert rep.J == rep.F == rep.JF == 1.0
    assert len(rep.sequences) == 3 and not rep.warnings


def test_background_predictor_scores_zero(data):
    rep = evaluate(lambda s: [np.zeros_like(l) for l in s.labels], data, LLBConfig())
    assert rep.J == 0.0 and rep.F == 0.0


def test_mean_over_sequences_and_objects(data):
    rng = np.random.default_rng(0)

    def noisy(seq):
        return [np.where(rng.uniform(size=l.shape) < 0.1, 0, l) for l in seq.labels]

    cfg = LLBConfig()
    rep = evaluate(noisy, data, cfg)
    assert rep.J == pytest.approx(np.mean([s.J for s in rep.sequences]))
    s = rep.sequences[0]
    assert s.J == pytest.approx(np.mean([v["J"] for v in s.per_object.values()]))
    assert s.per_object["1"]["J"] == pytest.approx(np.mean(s.per_frame["1"]["J"]))
    assert len(s.per_frame["1"]["J"]) == 4  # frame 0 is not scored


def test_first_frame_not_scored():
    lab = np.zeros((8, 8), dtype=np.uint8)
    lab[2:5, 2:5] = 1
    seq = VideoSequence("s", [np.zeros((8, 8, 3), np.float32)] * 2, [lab, lab], [1])
    bad_first = [np.zeros_like(lab), lab]
    assert score_sequence(seq, bad_first).JF == 1.0
    assert score_sequence(seq, bad_first, skip_first=False).J == 0.5


def test_unannotated_sequence_skipped_with_warning(data):
    blank = VideoSequence("blank", data[0].frames, [None] * len(data[0]), [])
    rep = evaluate(lambda s: s.labels, [blank, *data], LLBConfig())
    assert len(rep.sequences) == 3 and len(rep.warnings) == 1


def test_report_json_schema(tmp_path, data):
    rep = evaluate(lambda s: s.labels, data, LLBConfig())
    rep.write(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert {"sequences", "J", "F", "JF", "ablation", "config", "warnings", "version"} <= set(d)
    assert d["ablation"]["use_afm"] is True
    assert set(d["sequences"][0]) == {"name", "J", "F", "JF", "per_object", "per_frame"}
