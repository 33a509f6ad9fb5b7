import json
import math

import numpy as np
import polars as pl
import pytest

from edgecalc.config import Settings, load_settings, parallel_map, thread_count
from edgecalc.output import dumps, to_jsonable, write_csv, write_json


@pytest.fixture(autouse=True)
def no_env(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("EDGECALC_THREADS", raising=False)


def test_defaults_without_a_config_file():
    settings = load_settings()
    assert settings == Settings()
    assert settings.grid_kwargs()["N_t"] == 128


def test_precedence(tmp_path, monkeypatch):
    path = tmp_path / "custom.json"
    path.write_text(json.dumps({"N_t": 256, "threads": 2, "seed": 5}))
    monkeypatch.setenv("EDGECALC_THREADS", "3")
    settings = load_settings(path, seed=None, N_sigma=32)
    assert (settings.N_t, settings.threads, settings.seed, settings.N_sigma) == (256, 3, 5, 32)
    assert load_settings(path, threads=1).threads == 1


def test_config_errors(tmp_path, monkeypatch):
    with pytest.raises(FileNotFoundError):
        load_settings(tmp_path / "missing.json")
    path = tmp_path / "edgecalc.json"
    path.write_text(json.dumps({"grid": 1}))
    with pytest.raises(ValueError, match="Unknown keys"):
        load_settings()
    path.unlink()
    monkeypatch.setenv("EDGECALC_THREADS", "many")
    with pytest.raises(ValueError, match="EDGECALC_THREADS"):
        load_settings()


def test_thread_count_and_parallel_map(monkeypatch):
    assert thread_count(Settings(threads=3)) == 3
    assert thread_count(Settings()) >= 1
    monkeypatch.setenv("EDGECALC_THREADS", "2")
    assert thread_count() == 2
    assert parallel_map(lambda x: x * x, range(10)) == [x * x for x in range(10)]
    assert parallel_map(str, [], threads=4) == []


def test_to_jsonable_converts_numpy_and_complex():
    data = {1: np.arange(3), "z": 1 - 2j, "flag": np.bool_(True), "pair": (np.float64(0.5), np.int64(2))}
    assert to_jsonable(data) == {"1": [0, 1, 2], "z": {"re": 1.0, "im": -2.0}, "flag": True, "pair": [0.5, 2]}


def test_dumps_sorts_keys_and_keeps_full_precision():
    text = dumps({"b": 0.1, "a": [math.inf, math.nan], "c": {}})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "0.10000000000000001" in text
    loaded = json.loads(text)
    assert loaded["a"][0] == math.inf and math.isnan(loaded["a"][1])
    assert loaded["c"] == {}


def test_writers_create_parent_directories(tmp_path):
    json_path = write_json(tmp_path / "out" / "report.json", {"x": 1 / 3})
    assert json.loads(json_path.read_text())["x"] == 1 / 3
    csv_path = write_csv(tmp_path / "out" / "table.csv", [{"a": 1.0 / 3, "b": 2}, {"a": 0.25, "b": 3}])
    table = pl.read_csv(csv_path)
    assert table["b"].to_list() == [2, 3]
    assert table["a"][0] == pytest.approx(1 / 3, rel=1e-15)
