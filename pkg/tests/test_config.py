import pytest

from esdnet.config import ConfigError, RunConfig, load_config, parse_text
from esdnet.model import ModelConfig
from esdnet.synth import MoireParams


def test_defaults():
    cfg = parse_text("")
    assert cfg == RunConfig()
    assert cfg.train.lr_max == 2e-4 and cfg.loss.lam == 1.0


def test_every_section_and_type():
    cfg = parse_text("""
        # desk run
        model.variant = large
        model.width_div = 4
        train.lr_max = 1e-3   # faster
        train.total_epochs = 2
        loss.lam = 0.5
        loss.extractor_weights = none
        moire.amplitudes = 0.1, 0.2, 0.3
        moire.gamma = 1.2
    """)
    assert cfg.model == ModelConfig("large", 4)
    assert cfg.train.lr_max == 1e-3 and cfg.train.total_epochs == 2
    assert cfg.loss.lam == 0.5 and cfg.loss.extractor_weights is None
    assert cfg.moire == MoireParams(amplitudes=(0.1, 0.2, 0.3), gamma=1.2)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="train.learning_rate"):
        parse_text("train.learning_rate = 1")
    with pytest.raises(ConfigError, match="optim.lr"):
        parse_text("optim.lr = 1")


def test_bad_value():
    with pytest.raises(ConfigError, match="train.batch"):
        parse_text("train.batch = two")


def test_invalid_combination():
    with pytest.raises(ConfigError, match="train"):
        parse_text("train.patch = 50")


def test_missing_equals():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("loss.lam = 1\nloss.lam 2")


def test_overrides_win(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.batch = 4\ntrain.seed = 3\n")
    cfg = load_config(path, ["train.batch=1"])
    assert cfg.train.batch == 1 and cfg.train.seed == 3


def test_to_lines_round_trip():
    cfg = parse_text("model.width_div = 2\nmoire.phases = 0.5, 1.0, 1.5\ntrain.cycle_epochs = 10")
    assert parse_text("\n".join(cfg.to_lines())) == cfg
