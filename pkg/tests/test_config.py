import json

import pytest

from depthlab.config import DEFAULT_ABLATION, ConfigError, RunConfig, config_from_dict, load_config


def test_defaults():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.steps == 2000 and cfg.lr == 1e-4 and cfg.pose_jitter == 0.01
    assert (cfg.weights.omega, cfg.weights.beta, cfg.weights.gamma, cfg.weights.alpha) == (0.01, 0.01, 0.001, 0.85)
    assert (cfg.scene.height, cfg.scene.width) == (128, 192)
    assert [e.name for e in cfg.ablation] == [e.name for e in DEFAULT_ABLATION]


def test_echo_roundtrip_resolves_every_default(tmp_path):
    cfg = config_from_dict({"seed": 3, "toggles": {"pair_training": True}, "scene": {"count": 2}})
    data = json.loads(cfg.dumps())
    assert data["weights"]["gamma"] == 0.001 and data["toggles"]["semi_warp_pose"] is False
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    assert load_config(str(path)) == cfg


@pytest.mark.parametrize("doc", [
    {"stepz": 3},
    {"weights": {"delta": 1.0}},
    {"scene": {"preset": "forest"}},
    {"steps": "many"},
    {"steps": -1},
    {"lr": 0},
    {"toggles": {"pair_training": 1}},
    {"augmentation": {"consistency": "often"}},
    {"augmentation": {"pool": [{"kind": "sepia"}]}},
    {"ablation": [{"name": "a"}, {"name": "a"}]},
    {"ablation": [{"toggles": {}}]},
    {"mask_mode": "or"},
])
def test_invalid_configs_rejected(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


@pytest.mark.parametrize("kind", ["vertical_crop", "tile_shuffle", "scale"])
def test_positional_kinds_rejected_for_optimisation(kind):
    with pytest.raises(ConfigError):
        config_from_dict({"augmentation": {"pool": [{"kind": kind}]}})


def test_bad_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_estimator_params_follow_config():
    cfg = config_from_dict({"seed": 7, "lr": 0.01, "weights": {"omega": 0.5}})
    p = cfg.estimator_params()
    assert p["random_state"] == 7 and p["lr"] == 0.01 and p["omega"] == 0.5 and p["pair_training"] is False
