"""Experiment configs: presets, YAML round trips, validation."""

import dataclasses

import pytest

from moelab import PRESETS, config_from_dict, dump_config, get_preset, load_config
from moelab.config import RunConfig


BENCH = {
    "setting1": (3.0, 1.0),
    "setting2": (3.0, 2.0),
    "setting3": (2.0, 1.0),
    "setting4": (2.0, 2.0),
}


@pytest.mark.parametrize("name", sorted(BENCH))
def test_benchmark_presets_pin_the_experiment(name):
    gamma_hi, sigma_p = BENCH[name]
    cfg = get_preset(name)
    assert cfg.data.d == 50 and cfg.data.P == 4 and cfg.data.K == 4
    assert cfg.data.n == 16_000 and cfg.run.n_test == 16_000
    assert cfg.data.alpha_dist == (0.5, 2.0)
    assert cfg.data.beta_dist == (1.0, 2.0)
    assert cfg.data.gamma_dist == (0.5, gamma_hi)
    assert cfg.data.sigma_p == sigma_p
    assert cfg.arch.M == 8 and cfg.arch.J == 16
    assert cfg.arch.activation == "cubic"
    assert cfg.train.eta == 1e-3 and cfg.train.eta_r == 1e-1
    assert cfg.train.sigma0 == 0.7 and cfg.train.T == 4000
    assert cfg.train.noise.mode == "uniform01"
    assert cfg.train.load_balance_coef == 0.0
    assert cfg.run.num_seeds == 10


@pytest.mark.parametrize("name", sorted(BENCH))
def test_variant_presets(name):
    linear = get_preset(f"{name}_linear")
    assert linear.arch.activation == "linear"
    assert linear.data == get_preset(name).data
    fast = get_preset(f"{name}_fast")
    assert fast.data.n == 4000 and fast.run.n_test == 4000
    assert fast.train.T < get_preset(name).train.T


def test_preset_listing_complete():
    assert len(PRESETS) == 12
    with pytest.raises(ValueError, match="unknown preset"):
        get_preset("setting9")


def test_yaml_round_trip():
    cfg = get_preset("setting2")
    text = dump_config(cfg)
    import yaml

    again = config_from_dict(yaml.safe_load(text))
    assert again == cfg


def test_yaml_round_trip_from_file(tmp_path):
    cfg = get_preset("setting3_fast")
    path = tmp_path / "cfg.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(str(path)) == cfg


def test_unknown_blocks_and_keys_rejected():
    cfg = get_preset("setting1")
    raw = cfg.to_dict()
    raw["extra"] = {}
    with pytest.raises(ValueError, match="unknown config blocks"):
        config_from_dict(raw)
    raw = cfg.to_dict()
    raw["train"]["learning_rate"] = 0.1
    with pytest.raises(ValueError, match="unknown keys"):
        config_from_dict(raw)
    raw = cfg.to_dict()
    del raw["data"]
    with pytest.raises(ValueError, match="missing config blocks"):
        config_from_dict(raw)


def test_non_mapping_root_rejected():
    with pytest.raises(ValueError):
        config_from_dict(["not", "a", "mapping"])


def test_empty_config_file_rejected(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(ValueError, match="empty config"):
        load_config(str(path))


def test_noise_block_round_trips_as_dataclass():
    cfg = get_preset("setting1")
    raw = cfg.to_dict()
    assert raw["train"]["noise"] == {"mode": "uniform01", "kappa": 1.0}
    again = config_from_dict(raw)
    assert again.train.noise == cfg.train.noise


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(num_seeds=0)
    with pytest.raises(ValueError):
        RunConfig(n_test=0)
    with pytest.raises(ValueError):
        RunConfig(basis_mode="fourier")
    with pytest.raises(ValueError):
        RunConfig(threads=0)


def test_bad_block_reports_context():
    cfg = get_preset("setting1")
    raw = cfg.to_dict()
    raw["arch"] = {"M": 8}  # J missing
    with pytest.raises(ValueError, match="bad 'arch' block"):
        config_from_dict(raw)
