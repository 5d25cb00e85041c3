import json

import pytest

from roadimportance.config import (PRESETS, ConfigError, ModelConfig, apply_overrides, load_run_config,
                                   model_config, model_config_from_dict, run_config_from_dict, to_dict)


def test_defaults_match_reference_constants():
    cfg = ModelConfig()
    assert (cfg.clip_len, cfg.image_size, cfg.channels, cfg.hidden, cfg.roi_size, cfg.heads) == (16, 320, 512, 256,
                                                                                                  10, 8)
    assert (cfg.disg.a, cfg.disg.b, cfg.disg.beta, cfg.trg.alpha) == (1.0, 1.5, 2.2, 0.001)


def test_micro_profile():
    cfg = model_config("micro")
    assert (cfg.clip_len, cfg.roi_size, cfg.channels, cfg.hidden) == (4, 4, 64, 32)


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_every_preset_builds(preset):
    model_config("micro", preset)


def test_preset_semantics():
    bu = model_config("micro", "bu")
    assert not bu.disg.enabled and not bu.trg.enabled
    assert model_config("micro", "bu+trg").trg.enabled and not model_config("micro", "bu+trg").disg.enabled
    assert model_config("micro", "mask-1-2.5").disg.b == 2.5
    assert model_config("micro", "alpha-0.1").trg.alpha == 0.1
    assert not model_config("micro", "mask-1-1").disg.use_intention


def test_overrides_and_errors():
    cfg = model_config("micro", **{"disg.b": "2.0", "trg.use_weighting": "false"})
    assert cfg.disg.b == 2.0 and cfg.trg.use_weighting is False
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"disg.nope": 1})
    with pytest.raises(ConfigError):
        model_config("micro", **{"disg.b": 0.5})
    with pytest.raises(ConfigError):
        model_config("nano")
    with pytest.raises(ConfigError):
        model_config("micro", "everything")
    with pytest.raises(ConfigError):
        model_config("micro", heads=7)


def test_config_file_round_trip(tmp_path):
    data = {"model": {"profile": "micro", "preset": "bu+disg", "disg": {"b": 2.0}},
            "train": {"epochs": 3, "optimizer": "adam"}, "eval_stride": 5}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    run = load_run_config(path)
    assert run.model.disg.b == 2.0 and not run.model.trg.enabled and run.eval_stride == 5
    assert model_config_from_dict(to_dict(run.model)) == run.model
    with pytest.raises(ConfigError):
        run_config_from_dict({"model": {"disg": {"z": 1}}})
