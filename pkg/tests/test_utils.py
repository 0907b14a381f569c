import json
import logging
import os
from unittest.mock import patch

import pytest

from sasentangle.utils import (CONFIG_PATH, JsonFormatter, complex_pair, dump_json, load_config_file, load_json,
                               load_settings, load_yaml, merge_env_config, parse_complex, validate_config,
                               write_text)


def _settings(**overrides):
    cfg = load_yaml(CONFIG_PATH)
    cfg.update(overrides)
    return cfg


class TestSettings:
    def test_shipped_config_is_valid(self):
        assert validate_config(load_yaml(CONFIG_PATH))

    @pytest.mark.parametrize("key, value, match", [
        ("log_level", "LOUD", "log_level"),
        ("log_format", "xml", "log_format"),
        ("threads", 0, "threads"),
        ("threads", "4", "threads"),
    ])
    def test_invalid_values(self, key, value, match):
        with pytest.raises(ValueError, match=match):
            validate_config(_settings(**{key: value}))

    def test_missing_keys(self):
        cfg = _settings()
        del cfg["grid"]["w_points"]
        with pytest.raises(ValueError, match="w_points"):
            validate_config(cfg)
        with pytest.raises(ValueError, match="Missing config keys"):
            validate_config({"log_level": "INFO"})

    @patch("sasentangle.utils.load_dotenv")
    def test_env_overrides(self, mock_dotenv):
        with patch.dict(os.environ, {"SASENTANGLE_THREADS": "2", "SASENTANGLE_LOG_LEVEL": "debug"}):
            cfg = merge_env_config({"threads": 4, "log_level": "INFO"})
        mock_dotenv.assert_called_once()
        assert cfg["threads"] == 2
        assert cfg["log_level"] == "DEBUG"

    @patch("sasentangle.utils.load_dotenv")
    def test_env_threads_must_be_integer(self, mock_dotenv):
        with patch.dict(os.environ, {"SASENTANGLE_THREADS": "many"}):
            with pytest.raises(ValueError, match="SASENTANGLE_THREADS"):
                merge_env_config({"threads": 4})

    @patch("sasentangle.utils.load_dotenv")
    def test_load_settings(self, mock_dotenv, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(open(CONFIG_PATH, encoding="utf-8").read().replace("threads: 4", "threads: 3"))
        with patch.dict(os.environ, {}, clear=True):
            assert load_settings(str(path))["threads"] == 3


class TestFiles:
    def test_run_config_by_suffix(self, tmp_path):
        (tmp_path / "a.yml").write_text("state:\n  shift: 1240\n")
        (tmp_path / "a.json").write_text('{"state": {"shift": 1240}}')
        assert load_config_file(str(tmp_path / "a.yml")) == load_config_file(str(tmp_path / "a.json"))

    def test_bad_json_names_the_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError, match="bad.json"):
            load_json(str(path))

    def test_missing_yaml(self, tmp_path):
        with pytest.raises(OSError, match="cannot read"):
            load_config_file(str(tmp_path / "absent.yaml"))

    def test_write_text_creates_directories(self, tmp_path):
        path = tmp_path / "a" / "b" / "out.txt"
        write_text(str(path), "x\n")
        assert path.read_text() == "x\n"

    def test_dump_json_is_sorted_and_strict(self):
        assert dump_json({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'
        with pytest.raises(ValueError):
            dump_json({"x": float("nan")})


class TestComplexValues:
    @pytest.mark.parametrize("value", [[0.37, -0.07], {"re": 0.37, "im": -0.07}, "0.37-0.07j", "0.37 - 0.07i",
                                       complex(0.37, -0.07)])
    def test_forms(self, value):
        assert parse_complex(value) == pytest.approx(complex(0.37, -0.07))

    def test_real_number(self):
        assert parse_complex(2) == complex(2.0, 0.0)

    @pytest.mark.parametrize("value", [True, [1.0], {"re": 1, "imag": 2}, "abc", None, [float("inf"), 0.0]])
    def test_rejects(self, value):
        with pytest.raises(ValueError, match="rE_xyyx"):
            parse_complex(value, name="rE_xyyx")

    def test_pair(self):
        assert complex_pair(complex(1.5, -2.0)) == [1.5, -2.0]


def test_json_formatter():
    record = logging.LogRecord("sasentangle.maps", logging.INFO, __file__, 1, "row %d done", (3,), None)
    data = json.loads(JsonFormatter().format(record))
    assert data["level"] == "INFO"
    assert data["name"] == "sasentangle.maps"
    assert data["message"] == "row 3 done"
