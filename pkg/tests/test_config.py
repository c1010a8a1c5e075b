import json

import pytest

from nnd import config
from nnd.errors import ValidationError


def test_defaults_resolve():
    cfg, explicit = config.load_config()
    assert explicit == set()
    rc = config.run_config_from(cfg)
    assert rc.schedule.T == 600 and rc.init == "latent-eps-centered"


def test_override_dot_path_and_json_values():
    cfg, explicit = config.load_config(overrides=["schedule.T=50", "init=latent-zero-centered",
                                                  "dims=[4,4,4]"])
    assert cfg["schedule"]["T"] == 50 and cfg["schedule"]["K"] == 5
    assert cfg["init"] == "latent-zero-centered" and cfg["dims"] == [4, 4, 4]
    assert explicit == {"schedule", "init", "dims"}


def test_seed_flag_wins(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 1}))
    cfg, _ = config.load_config(p, seed=9)
    assert cfg["seed"] == 9


def test_bad_override():
    with pytest.raises(ValidationError):
        config.load_config(overrides=["novalue"])


def test_bad_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("[1, 2]")
    with pytest.raises(ValidationError):
        config.load_config(p)


def test_negative_seed():
    with pytest.raises(ValidationError):
        config.load_config(seed=-1)


def test_dump_round_trip(tmp_path):
    cfg, _ = config.load_config(overrides=["likelihood_weight=0.5"])
    config.dump_config(cfg, tmp_path / "r.json")
    again, _ = config.load_config(tmp_path / "r.json")
    assert again == cfg
