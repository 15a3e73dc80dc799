"""Config parsing and validation."""

import pytest

from scalescan.config import Config, config_dict, load_config, parse_overrides
from scalescan.errors import ConfigError


def test_defaults_are_valid():
    cfg = load_config()
    assert cfg == Config()


def test_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# a comment line\n"
        "\n"
        "frames = 6\n"
        "scales = 1,3   # trailing comment\n"
        "block=mambaout\n"
        "residual = false\n"
        "lr = 0.25\n"
        "amplitude=30\n")
    cfg = load_config(p)
    assert cfg.frames == 6
    assert cfg.scales == (1, 3)
    assert cfg.block == "mambaout"
    assert cfg.residual is False
    assert cfg.lr == 0.25
    assert cfg.amplitude == 30.0
    assert cfg.grid == 14  # untouched keys keep defaults


def test_overrides_beat_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("frames = 6\nlr = 0.25\n")
    cfg = load_config(p, {"frames": "9"})
    assert cfg.frames == 9
    assert cfg.lr == 0.25


def test_unknown_key_refused(tmp_path):
    with pytest.raises(ConfigError):
        parse_overrides({"learning_rate": "0.1"})
    p = tmp_path / "run.cfg"
    p.write_text("framez = 6\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_malformed_lines_and_values(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("frames\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        parse_overrides({"frames": "six"})
    with pytest.raises(ConfigError):
        parse_overrides({"residual": "maybe"})
    with pytest.raises(ConfigError):
        parse_overrides({"scales": "1,a"})


def test_bool_and_tuple_forms():
    assert parse_overrides({"residual": "TRUE"})["residual"] is True
    assert parse_overrides({"residual": "0"})["residual"] is False
    assert parse_overrides({"scales": "14"})["scales"] == (14,)
    assert parse_overrides({"scales": ""})["scales"] == ()


@pytest.mark.parametrize("bad", [
    {"frames": "0"},
    {"batch": "1"},
    {"batch": "600"},          # exceeds train_pairs
    {"train_pairs": "0"},
    {"patterns": "1"},
    {"pattern_size": "15"},    # exceeds grid
    {"pattern_sites": "0"},
    {"pattern_group": "0"},
    {"pattern_channels": "0"},
    {"pattern_channels": "65"},
    {"steps": "0"},
    {"lr": "-0.1"},
    {"momentum": "1.0"},
    {"momentum": "-0.1"},
    {"layers": "-1"},
    {"block": "lstm"},
    {"variant": "v3"},
])
def test_validation_refuses(bad):
    with pytest.raises(ConfigError):
        load_config(None, bad)


def test_zero_lr_is_legal():
    assert load_config(None, {"lr": "0"}).lr == 0.0


def test_config_dict_round_trips_tuples():
    d = config_dict(Config())
    assert d["scales"] == [1, 3, 7, 14]
    assert d["bench_frames"] == [4, 8, 12, 16, 20]
    assert d["block"] == "mamba"
