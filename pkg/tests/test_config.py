import pytest

from lfq.config import (WORKERS_ENV, FlowRanges, SweepConfig, TrainingConfig, build_model, default_workers,
                        load_config_file)
from lfq.errors import ConfigurationError
from lfq.logging_config import LOG_LEVEL_ENV, resolve_log_level


def test_batch_size_defaults_by_mode():
    assert TrainingConfig(mode="offline").batch_size == 20
    assert TrainingConfig(mode="online").batch_size == 40
    assert TrainingConfig(mode="online", batch=8).batch_size == 8


def test_default_ranges():
    ranges = FlowRanges()
    assert ranges.bandwidth_mbps == (5.0, 25.0)
    assert ranges.delay_ms == (5.0, 25.0)
    with pytest.raises(ValueError):
        FlowRanges(delay_ms=(10.0, 5.0))


def test_measured_window_must_fit_the_flow():
    with pytest.raises(ValueError):
        SweepConfig(duration_s=2.0, measure_from_s=2.0)


def test_workers_from_environment(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert default_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "4")
    assert default_workers() == 4
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigurationError):
        default_workers()


def test_load_config_file(tmp_path):
    assert load_config_file(None) == {}
    path = tmp_path / "lfq.json"
    path.write_text('{"sample-interval": 5, "seed": 2}')
    assert load_config_file(str(path)) == {"sample_interval": 5, "seed": 2}


@pytest.mark.parametrize("content", ["{not json", "[1, 2]"])
def test_load_config_file_rejects_bad_content(tmp_path, content):
    path = tmp_path / "lfq.json"
    path.write_text(content)
    with pytest.raises(ConfigurationError):
        load_config_file(str(path))


def test_build_model_names_the_bad_field():
    with pytest.raises(ConfigurationError, match="alpha"):
        build_model(TrainingConfig, {"alpha": -1.0})
    config = build_model(TrainingConfig, {"flows": 10, "vary": "delay"})
    assert config.flows == 10


def test_log_level_resolution(monkeypatch):
    monkeypatch.delenv(LOG_LEVEL_ENV, raising=False)
    assert resolve_log_level() == "INFO"
    monkeypatch.setenv(LOG_LEVEL_ENV, "debug")
    assert resolve_log_level() == "DEBUG"
    assert resolve_log_level("ERROR") == "ERROR"
    monkeypatch.setenv(LOG_LEVEL_ENV, "loud")
    assert resolve_log_level() == "INFO"
