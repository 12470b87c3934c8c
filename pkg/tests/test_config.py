import json

import pytest

from stochlod.config import ConfigError, ExperimentConfig, apply_override, desk_config


def test_defaults():
    cfg = ExperimentConfig().validate()
    assert (cfg.grid.H, cfg.grid.h, cfg.grid.ell, cfg.grid.f) == (2.0 ** -4, 2.0 ** -9, 2, 1.0)
    assert cfg.grid.eps == 2.0 ** -7
    assert cfg.training.batch_size == 100 and cfg.training.epochs == 60
    assert cfg.dataset.split == [0.8, 0.1, 0.1]


def test_roundtrip(tmp_path):
    cfg = desk_config()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path).to_dict() == cfg.to_dict()


def test_unknown_key_path():
    with pytest.raises(ConfigError, match="'training.lr'"):
        ExperimentConfig.from_dict({"training": {"lr": 1e-3}})
    with pytest.raises(ConfigError, match="'bogus'"):
        ExperimentConfig.from_dict({"bogus": 1})


@pytest.mark.parametrize("data", [
    {"grid": {"H": 0.25, "eps": 0.3}},
    {"grid": {"H": 0.25, "eps": 0.25}},
    {"grid": {"ell": 0}},
    {"grid": {"d": 3}},
    {"training": {"epochs": 0}},
    {"field": {"kind": "gamma"}},
    {"dataset": {"split": [0.5, 0.5, 0.5]}},
    {"mc": {"solvers": ["fem", "magic"]}},
])
def test_invalid(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_override():
    cfg = ExperimentConfig()
    apply_override(cfg, "grid.H", "0.125")
    apply_override(cfg, "field.kind", "hierarchical")
    assert cfg.grid.H == 0.125 and cfg.field.kind == "hierarchical"
    with pytest.raises(ConfigError, match="grid.nope"):
        apply_override(cfg, "grid.nope", "1")
