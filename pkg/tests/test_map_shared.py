import logging

import numpy as np
import pytest

from map_shared import (
    DEFAULT_CONFIG,
    ConfigError,
    StageError,
    atomic_write_text,
    circular_distance,
    configure_logging,
    dump_config,
    load_config,
    room_color,
    run_stage,
)


class TestLoadConfig:
    def test_defaults_without_file(self):
        config = load_config()
        assert config == DEFAULT_CONFIG
        assert config is not DEFAULT_CONFIG

    def test_file_values_merge_over_defaults(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("[walls]\nvotes = 35\n\n[rose]\nmerge_radius_deg = 3\n", encoding="utf-8")
        config = load_config(path)
        assert config["walls"]["votes"] == 35
        assert config["rose"]["merge_radius_deg"] == 3.0
        assert isinstance(config["rose"]["merge_radius_deg"], float)
        assert config["walls"]["min_len"] == DEFAULT_CONFIG["walls"]["min_len"]

    def test_overrides_apply_last(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("[run]\nseed = 4\n", encoding="utf-8")
        config = load_config(path, {"run": {"seed": 9, "threads": 2}})
        assert config["run"]["seed"] == 9
        assert config["run"]["threads"] == 2

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("[walls]\nvotos = 3\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="walls.votos"):
            load_config(path)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"gui": {"theme": "dark"}})

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"walls": {"votes": "veinte"}})
        with pytest.raises(ConfigError):
            load_config(overrides={"run": {"debug_dumps": 1}})

    def test_inverted_target_ratio_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"rose": {"target_ratio": [2.0, 0.2]}})

    def test_missing_file_and_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "no_existe.toml")
        broken = tmp_path / "roto.toml"
        broken.write_text("[walls\nvotes = 3", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(broken)

    def test_dump_round_trip(self, tmp_path):
        config = load_config(overrides={"walls": {"votes": 12}})
        path = tmp_path / "echo.toml"
        path.write_text(dump_config(config), encoding="utf-8")
        assert load_config(path) == config


class TestRunStage:
    def test_returns_result_and_records_timing(self):
        timings = {}
        assert run_stage("rose", lambda value: value * 2, 21, timings=timings) == 42
        assert set(timings) == {"rose"}

    def test_wraps_failures_with_stage_name(self):
        def failing():
            raise ValueError("sin celdas")

        with pytest.raises(StageError) as caught:
            run_stage("walls", failing)
        assert caught.value.stage == "walls"
        assert isinstance(caught.value.__cause__, ValueError)

    def test_stage_errors_pass_through(self):
        def failing():
            raise StageError("rose", "interna")

        with pytest.raises(StageError) as caught:
            run_stage("rooms", failing)
        assert caught.value.stage == "rose"


def test_atomic_write_creates_parents(tmp_path):
    path = atomic_write_text(tmp_path / "a" / "b" / "salida.txt", "hola")
    assert path.read_text(encoding="utf-8") == "hola"
    assert [item.name for item in path.parent.iterdir()] == ["salida.txt"]


def test_circular_distance_wraps():
    assert circular_distance(0.02, np.pi - 0.02) == pytest.approx(0.04)
    np.testing.assert_allclose(circular_distance([0.0, 1.0], [np.pi / 2, 1.0]), [np.pi / 2, 0.0])


def test_room_colors():
    assert room_color(0) == (0, 0, 0)
    assert room_color(1) != room_color(2)
    assert room_color(1) == room_color(256)


def test_configure_logging_rejects_unknown_level():
    with pytest.raises(ConfigError):
        configure_logging("RUIDOSO")
    configure_logging("DEBUG")
    assert logging.getLogger("planos").level == logging.DEBUG
    configure_logging("INFO")
