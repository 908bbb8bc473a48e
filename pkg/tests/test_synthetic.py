import math
from dataclasses import replace

import numpy as np
import pytest

from llb.config import SyntheticConfig
from llb.evalbench import gen_dataset, gen_synthetic, load_davis_dir, write_davis_dir
from llb.evalbench.dataset import DatasetError, save_label_png


def test_static_disk_is_constant():
    cfg = SyntheticConfig(num_objects=1, shapes=("disk",), length=3, speed_range=(0.0, 0.0), num_distractors=0)
    seq = gen_synthetic(cfg)
    for t in (1, 2):
        assert np.array_equal(seq.frames[t], seq.frames[0])
        assert np.array_equal(seq.labels[t], seq.labels[0])


def test_same_seed_bitwise_identical():
    cfg = SyntheticConfig(seed=11)
    a, b = gen_synthetic(cfg), gen_synthetic(cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert all(np.array_equal(x, y) for x, y in zip(a.labels, b.labels))
    c = gen_synthetic(replace(cfg, seed=12))
    assert not np.array_equal(a.frames[0], c.frames[0])


@pytest.mark.parametrize("r", [6.0, 10.0, 20.0])
def test_disk_area_analytic(r):
    cfg = SyntheticConfig(num_objects=1, shapes=("disk",), radius_range=(r, r), length=1, num_distractors=0)
    seq = gen_synthetic(cfg)
    area = (seq.labels[0] == 1).sum()
    assert abs(area - math.pi * r * r) / (math.pi * r * r) < 0.05


def test_labels_match_rendering_and_distractors_unlabelled():
    cfg = SyntheticConfig(num_distractors=2, length=5, seed=3)
    seq = gen_synthetic(cfg)
    assert seq.object_ids == [1, 2]
    assert seq.meta["num_distractors"] == 2
    for lab in seq.labels:
        assert set(np.unique(lab)) <= {0, 1, 2}
    for f in seq.frames:
        assert f.min() >= 0 and f.max() <= 1 and f.dtype == np.float32


def test_dataset_sizes():
    ds = gen_dataset(SyntheticConfig(num_sequences=3, length=4))
    assert len(ds) == 3 and len({s.name for s in ds}) == 3


def test_davis_roundtrip(tmp_path):
    ds = gen_dataset(SyntheticConfig(num_sequences=2, length=3))
    write_davis_dir(tmp_path, ds)
    back = load_davis_dir(tmp_path)
    assert [s.name for s in back] == [s.name for s in ds]
    for a, b in zip(ds, back):
        assert b.object_ids == [1, 2]
        assert all(np.array_equal(x, y) for x, y in zip(a.labels, b.labels))
        assert np.abs(a.frames[0] - b.frames[0]).mean() < 0.02  # jpeg


def test_davis_empty_dir(tmp_path):
    assert load_davis_dir(tmp_path) == []


def test_davis_palette_objects_and_missing_later_annotations(tmp_path):
    from PIL import Image
    img_dir, ann_dir = tmp_path / "JPEGImages" / "s", tmp_path / "Annotations" / "s"
    img_dir.mkdir(parents=True)
    ann_dir.mkdir(parents=True)
    for t in range(3):
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(img_dir / f"{t:05d}.jpg")
    lab = np.zeros((8, 8), dtype=np.uint8)
    lab[:2, :2], lab[5:, 5:] = 1, 2
    save_label_png(ann_dir / "00000.png", lab)
    (seq,) = load_davis_dir(tmp_path)
    assert seq.object_ids == [1, 2]
    assert seq.labels[1] is None and seq.labels[2] is None


def test_davis_background_only_first_frame_skipped(tmp_path):
    from PIL import Image
    img_dir, ann_dir = tmp_path / "JPEGImages" / "s", tmp_path / "Annotations" / "s"
    img_dir.mkdir(parents=True)
    ann_dir.mkdir(parents=True)
    Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(img_dir / "00000.jpg")
    save_label_png(ann_dir / "00000.png", np.zeros((8, 8), dtype=np.uint8))
    warnings = []
    assert load_davis_dir(tmp_path, warnings) == []
    assert len(warnings) == 1


def test_davis_missing_first_annotation(tmp_path):
    from PIL import Image
    img_dir = tmp_path / "JPEGImages" / "s"
    img_dir.mkdir(parents=True)
    (tmp_path / "Annotations" / "s").mkdir(parents=True)
    Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(img_dir / "00000.jpg")
    with pytest.raises(DatasetError):
        load_davis_dir(tmp_path)
