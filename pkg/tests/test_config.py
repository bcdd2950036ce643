"""Config parsing, defaults, validation, and error reporting."""

import logging

import pytest

from lagodom.config import Config, ConfigError, load_config, parse_config


def test_empty_gives_defaults():
    cfg = parse_config("")
    assert cfg == Config()
    assert cfg.n_neighbor == 5
    assert cfg.n_sectors == 6
    assert cfg.n_planar == 50
    assert cfg.n_point == 3
    assert cfg.delta_planar == 1.0
    assert cfg.delta_radius == 1.0
    assert cfg.delta_match == 0.8
    assert cfg.delta_map == 0.1
    assert cfg.n_recent == 10
    assert cfg.n_key == 50
    assert cfg.n_marg == 10
    assert cfg.delta_key == 0.1
    assert cfg.n_icp == 30
    assert cfg.delta_icp == 1.0e-4
    assert cfg.min_range == 0.5
    assert cfg.max_range == 100.0
    assert cfg.smoothing and cfg.point_features


def test_overrides_comments_whitespace():
    text = """
    # tuning for a narrow corridor
    n_recent = 6
    delta_match=0.5   # inline comment
    smoothing = off
    point_features = TRUE
    """
    cfg = parse_config(text)
    assert cfg.n_recent == 6
    assert cfg.delta_match == 0.5
    assert cfg.smoothing is False
    assert cfg.point_features is True


def test_unknown_key_is_error():
    with pytest.raises(ConfigError, match="unknown parameter 'n_bogus'"):
        parse_config("n_bogus = 3")


def test_type_mismatch_names_key():
    with pytest.raises(ConfigError, match="n_icp expects an integer"):
        parse_config("n_icp = soon")
    with pytest.raises(ConfigError, match="delta_match expects a number"):
        parse_config("delta_match = high")
    with pytest.raises(ConfigError, match="smoothing expects a boolean"):
        parse_config("smoothing = maybe")


def test_validation_names_parameter():
    with pytest.raises(ConfigError, match="n_recent"):
        parse_config("n_recent = 0")
    with pytest.raises(ConfigError, match="max_range"):
        parse_config("max_range = 0.2")
    with pytest.raises(ConfigError, match="delta_planar"):
        parse_config("delta_planar = -1")


def test_malformed_line_reports_position():
    with pytest.raises(ConfigError, match="<config>:2"):
        parse_config("n_icp = 5\nnot a key value line")


def test_duplicate_key_is_error():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("n_icp = 5\nn_icp = 6")


def test_defaults_are_logged(caplog):
    with caplog.at_level(logging.INFO, logger="lagodom.config"):
        parse_config("n_icp = 4")
    assert any("using defaults" in r.message for r in caplog.records)
    assert any("n_recent" in r.message for r in caplog.records)


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("n_key = 12\ndelta_key = 0.2\n")
    cfg = load_config(path)
    assert cfg.n_key == 12 and cfg.delta_key == 0.2
