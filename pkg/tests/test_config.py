from __future__ import annotations

import json

import pytest

from duplex_frontend.config import PipelineConfig, load_config
from duplex_frontend.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg.chunk_ms == 600 and cfg.overlap_min_ms == 60 and cfg.pad_ms == 15
    assert cfg.scenario.gap_range == (0.5, 3.0) and cfg.scenario.snr_range == (0.0, 20.0)
    assert cfg.controller.chunk_ms == 600 and cfg.refine.pad_ms == 15


def test_yaml_with_overrides(tmp_path, assets_index):
    p = tmp_path / "c.yaml"
    p.write_text(f"seed: 3\npad_ms: 12\npools: {assets_index}\nscenario:\n  snr_range: [5, 10]\n")
    cfg = load_config(p, {"seed": 9, "scenario.gap_range": [1.0, 1.0], "jobs": None})
    assert cfg.seed == 9  # flags win
    assert cfg.refine.pad_ms == 12
    assert cfg.scenario.snr_range == (5.0, 10.0) and cfg.scenario.gap_range == (1.0, 1.0)


def test_json_and_relative_pools(tmp_path, assets_index):
    p = assets_index.parent / "c.json"
    p.write_text(json.dumps({"pools": assets_index.name, "chunk_ms": 600}))
    assert load_config(p).pools == str(assets_index)


@pytest.mark.parametrize("text", [
    "sed: 1\n",                      # unknown key
    "scenario:\n  snr: [0, 1]\n",    # unknown section key
    "scenario:\n  snr_range: [5, 1]\n",
    "alpha: 1.5\n",
    "overlap_min_ms: 700\n",
    "pools: /nonexistent/pools.json\n",
    "scenario_mix: {Chat: 1}\n",
    "- 1\n",
    "scenario: 3\n",
])
def test_rejected(tmp_path, text):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "x.yaml").write_text("a: [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "x.yaml")


def test_echo_is_json():
    json.dumps(PipelineConfig().echo())
