import pytest

from llb.config import ConfigError, LLBConfig, apply_overrides, load_config, paper_scale


def test_defaults_are_desk_scale():
    cfg = LLBConfig()
    assert (cfg.model.feat_dim, cfg.model.label_dim) == (64, 16)
    assert cfg.infer.work_size == (128, 128)
    assert cfg.model.use_dlgm and cfg.model.use_afm


def test_paper_scale_preset():
    cfg = paper_scale()
    assert (cfg.model.feat_dim, cfg.model.label_dim, cfg.infer.work_size) == (512, 32, (832, 480))


def test_roundtrip_through_dict():
    cfg = LLBConfig()
    cfg.model.label_dim = 8
    back = LLBConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.model_hash() == cfg.model_hash()


def test_hash_tracks_model_section_only():
    a, b = LLBConfig(), LLBConfig()
    b.train.lr = 1.0
    assert a.model_hash() == b.model_hash()
    b.model.kernel_size = 5
    assert a.model_hash() != b.model_hash()


def test_yaml_file_and_env_seed(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\nmodel:\n  label_dim: 4\ninfer:\n  work_size: [64, 48]\n")
    monkeypatch.delenv("LLB_SEED", raising=False)
    cfg = load_config(p)
    assert cfg.seed == 3 and cfg.model.label_dim == 4 and cfg.infer.work_size == (64, 48)
    monkeypatch.setenv("LLB_SEED", "17")
    assert load_config(p).seed == 17
    monkeypatch.setenv("LLB_SEED", "x")
    with pytest.raises(ConfigError):
        load_config(p)


@pytest.mark.parametrize("text", ["model:\n  nope: 1\n", "bogus: 1\n", "- a\n- b\n", "model:\n  label_input: rgb\n"])
def test_bad_files_rejected(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    assert load_config(p).model == LLBConfig().model


def test_ablation_overrides():
    cfg = apply_overrides(LLBConfig(), ["use_afm=off", "use_dlgm=off"])
    assert not cfg.model.use_afm
    assert (cfg.model.label_input, cfg.model.label_encoder) == ("mask", "tiny_cnn")
    assert cfg.model.ablation_tag()["use_dlgm"] is False
    cfg = apply_overrides(cfg, ["use_dlgm=on", "train.lr=0.5", "model.label_dim=2"])
    assert cfg.model.use_dlgm and cfg.train.lr == 0.5 and cfg.model.label_dim == 2


@pytest.mark.parametrize("item", ["use_afm", "nosuch=1", "train.nosuch=2", "train.seq_len=1"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        apply_overrides(LLBConfig(), [item])
