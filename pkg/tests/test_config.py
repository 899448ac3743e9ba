import json

import pytest

from lidar4d.config import RunConfig, config_from_dict, config_to_dict, load_config
from lidar4d.errors import SchemaError


def test_defaults_follow_documented_settings():
    config = RunConfig()
    assert config.sensor.height == 32 and config.sensor.width == 1024
    assert config.sensor.max_range == 80.0
    assert config.diffusion.train_steps == 1024
    assert config.diffusion.sample_steps == 256
    assert config.layout.trajectory_steps == 5
    assert config.layout.shape_points == 512
    assert config.relations.close_by_radius == 10.0
    assert config.training.ema_decay == 0.995
    assert config.training.warmup_steps == 10000
    assert config.edit.mask_dilation == 2


def test_round_trip_through_dict():
    config = RunConfig(seed=11)
    rebuilt = config_from_dict(config_to_dict(config))
    assert rebuilt == config


def test_unknown_top_level_key_rejected():
    with pytest.raises(SchemaError) as err:
        config_from_dict({"sensro": {}})
    assert "sensro" in str(err.value)


def test_unknown_section_key_rejected():
    with pytest.raises(SchemaError) as err:
        config_from_dict({"sensor": {"widht": 512}})
    assert "widht" in str(err.value)


def test_invalid_values_surface_with_section():
    with pytest.raises(SchemaError):
        config_from_dict({"diffusion": {"train_steps": 8, "sample_steps": 64}})


def test_load_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 5, "sensor": {"width": 256, "height": 16}}))
    config = load_config(path)
    assert config.seed == 5
    assert config.sensor.width == 256
    assert config.layout.shape_points == 512  # untouched sections keep defaults
