import pytest

from core.config import (
    THREADS_ENV_VAR,
    RunConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config,
    resolve_threads,
)
from core.errors import ConfigError


def test_defaults(default_config):
    assert default_config.schema_version == 1
    assert default_config.sem.max_lag == 12
    assert default_config.sem.window() == (250, 350)
    assert default_config.simulation.beta == [0.5, 1.0, 0.2]


def test_yaml_round_trip(tmp_path):
    config = parse_config({"seed": 3, "sem": {"max_lag": 5, "iterations_corrected": 20, "summary_window": 10}})
    path = tmp_path / "config.yaml"
    dump_config(config, str(path))
    assert load_config(str(path)) == config


def test_missing_path_gives_defaults():
    assert load_config(None) == RunConfig()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))


def test_non_mapping_file(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        parse_config({"sem": {"max_lags": 3}})


def test_unsupported_schema_version():
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config({"schema_version": 2})


def test_window_must_fit():
    with pytest.raises(ConfigError):
        parse_config({"sem": {"iterations_corrected": 10, "summary_window": 20}})


def test_overrides_skip_none(default_config):
    config = apply_overrides(default_config, {"sem.max_lag": 6, "seed": None, "simulation.theta": None})
    assert config.sem.max_lag == 6
    assert config.seed is None


def test_unknown_override(default_config):
    with pytest.raises(ConfigError):
        apply_overrides(default_config, {"sem.nothing": 1})
    with pytest.raises(ConfigError):
        apply_overrides(default_config, {"nowhere.max_lag": 1})


def test_thread_precedence(monkeypatch, default_config):
    monkeypatch.setenv(THREADS_ENV_VAR, "4")
    assert resolve_threads(2, default_config) == 2
    assert resolve_threads(None, parse_config({"threads": 3})) == 3
    assert resolve_threads(None, default_config) == 4
    monkeypatch.setenv(THREADS_ENV_VAR, "many")
    with pytest.raises(ConfigError):
        resolve_threads(None, default_config)
