from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from serrinlab import export
from serrinlab.cli import EXIT_CONFIG, EXIT_OK, RunConfig, load_config, main, parse_grid, read_branch
from serrinlab.errors import ConfigError


def test_dumps_is_canonical():
    obj = {"b": [0.1, float("nan"), np.float64(1 / 3)], "a": {"flag": np.bool_(True), "k": np.int64(3)}}
    text = export.dumps(obj)
    assert text == export.dumps(obj)
    back = json.loads(text)
    assert back["b"][1] is None
    assert back["b"][2] == 1 / 3
    assert back["a"] == {"flag": True, "k": 3}
    assert "0.10000000000000001" in text


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_dumps_roundtrips_floats(x):
    assert json.loads(export.dumps([x]))[0] == x


def test_config_hash_ignores_key_order():
    a = {"x": 1, "y": [1.0, 2.0]}
    b = {"y": [1.0, 2.0], "x": 1}
    assert export.config_hash(a) == export.config_hash(b)
    assert export.config_hash(a) != export.config_hash({"x": 2, "y": [1.0, 2.0]})


def test_default_config_valid():
    cfg = RunConfig()
    assert "out" not in cfg.to_dict()
    assert cfg.to_dict()["eps_list"] == [0.025, 0.0125, 0.00625, 0.003125]


@given(st.integers(1, 2048), st.integers(1, 2048))
def test_grid_validation(a, b):
    ok = all(k & (k - 1) == 0 and 16 <= k <= 1024 for k in (a, b))
    if ok:
        assert RunConfig(branch_grid=(a, b)).branch_grid == (a, b)
    else:
        with pytest.raises(ConfigError):
            RunConfig(branch_grid=(a, b))


@pytest.mark.parametrize("text", ["64", "64x", "axb", "64x64x2"])
def test_parse_grid_rejects(text):
    with pytest.raises(ConfigError):
        parse_grid(text)


def test_parse_grid():
    assert parse_grid("128X32") == (128, 32)


def test_bad_configs_exit_2(tmp_path, capsys):
    assert main(["find-serrin", "--grid", "100x64", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "branch_grid" in capsys.readouterr().err
    assert main(["solve-cmc", "x.json", "--eps-list", "0.1,0.2", "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg = tmp_path / "c.json"
    cfg.write_text('{"n": 1, "colour": 2}')
    assert main(["find-serrin", "--config", str(cfg)]) == EXIT_CONFIG
    assert "colour" in capsys.readouterr().err


def test_corrupt_branch_names_line(tmp_path, capsys):
    bad = tmp_path / "branch.json"
    bad.write_text('{\n  "points": [\n    {"s": 0.0,,}\n  ]\n}\n')
    assert main(["certify", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert f"{bad}:3:" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_config(str(bad), {})


def test_branch_reader_accepts_array(tmp_path, branch_n1):
    path = tmp_path / "b.json"
    path.write_text(export.dumps([p.to_dict() for p in branch_n1[:2]]))
    assert read_branch(path) == branch_n1[:2]


SMALL = {
    "s_max": 0.02,
    "branch_grid": [32, 32],
    "calib_grid": [64, 64],
    "tv_grid": [32, 32],
    "cmc_grid": [64, 16],
}


def _run_pipeline(out, cfg_path):
    args = ["--config", str(cfg_path), "--out", str(out)]
    assert main(["find-serrin", *args]) == EXIT_OK
    assert main(["certify", str(out / "branch.json"), *args]) == EXIT_OK
    assert main(["solve-cmc", str(out / "branch.json"), *args]) == EXIT_OK
    assert main(["report", *args]) == EXIT_OK


def test_pipeline_is_deterministic(tmp_path, capsys):
    cfg_path = tmp_path / "small.json"
    cfg_path.write_text(json.dumps(SMALL))
    a, b = tmp_path / "a", tmp_path / "b"
    _run_pipeline(a, cfg_path)
    _run_pipeline(b, cfg_path)
    for name in ("branch.json", "certify.json", "cmc.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    doc = json.loads((a / "branch.json").read_text())
    assert doc["config_hash"] == export.config_hash(load_config(str(cfg_path), {}).to_dict())
    assert len(doc["points"]) == 2
    assert (a / "tv_minimizer_01.csv").exists()
    assert (a / "cmc_01_limit.csv").read_text().startswith("rho,t,r,w\n")
    assert "lambda" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "serrinlab.cli", "report", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == EXIT_CONFIG
    assert "no results" in out.stderr
