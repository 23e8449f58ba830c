"""Config resolution, overrides, validation, hashing."""

from __future__ import annotations

import json

import pytest

from simtpr.config import (
    ConfigError,
    DEFAULTS,
    load_config_file,
    parse_overrides,
    resolve,
)


def test_defaults_resolve():
    cfg = resolve()
    assert cfg["mode"] == "state"
    assert cfg["loss"] == "decorrelation"
    assert cfg["lambda_d"] == 0.01
    assert cfg["lambda_o"] == 0.005
    assert cfg["opt.lr"] == 3e-4
    assert cfg["opt.eps"] == 1.5e-5
    assert cfg["opt.weight_decay"] == 1e-6


def test_lambda_d_conditional_default():
    assert resolve({}, {"loss": "contrastive"})["lambda_d"] == 0.0
    assert resolve({}, {"loss": "none"})["lambda_d"] == 0.0
    assert resolve({}, {"loss": "contrastive", "lambda_d": 0.01})["lambda_d"] == 0.01
    assert resolve({}, {"loss": "decorrelation"})["lambda_d"] == 0.01


def test_similarity_kind_mapping():
    assert resolve().similarity_kind() == "mse"
    assert resolve({}, {"loss": "contrastive"}).similarity_kind() == "contrastive"
    assert resolve({}, {"transition": "non-causal"}).similarity_kind() == "recon"
    assert resolve({}, {"loss": "none"}).similarity_kind() == "mse"


def test_loss_settings_demo_mode():
    state = resolve().loss_settings()
    assert state.lambda_a is None
    demo = resolve({}, {"mode": "demo"}).loss_settings()
    assert demo.lambda_a == 1.0


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        resolve({}, {"not_a_key": 1})


@pytest.mark.parametrize("bad", [
    {"mode": "video"},
    {"loss": "bogus"},
    {"transition": "lstm"},
    {"transition": "non-causal", "loss": "contrastive"},
    {"mode": "demo", "transition": "gru"},
    {"mask_ratio": 1.5},
    {"k": 10, "t_seq": 10},
    {"k": 0},
    {"temperature": 0.0},
    {"steps": -1},
    {"precision": "f16"},
])
def test_validation_rejects(bad):
    with pytest.raises(ConfigError):
        resolve({}, bad)


def test_file_merge_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    json.dump({"steps": 7, "latent_dim": 32}, open(path, "w"))
    cfg = resolve(load_config_file(str(path)), {"steps": 9})
    assert cfg["steps"] == 9          # override wins over file
    assert cfg["latent_dim"] == 32    # file wins over defaults
    assert cfg["t_seq"] == DEFAULTS["t_seq"]


def test_parse_overrides_json_literals():
    out = parse_overrides(["lambda_d=0.5", "bn_pred=false",
                           "encoder_channels=[4,8]", "loss=contrastive"])
    assert out == {"lambda_d": 0.5, "bn_pred": False,
                   "encoder_channels": [4, 8], "loss": "contrastive"}
    with pytest.raises(ConfigError):
        parse_overrides(["no-equals-sign"])


def test_canonical_hash_stability():
    a = resolve({}, {"steps": 5, "seed": 1})
    b = resolve({"seed": 1}, {"steps": 5})
    assert a.canonical_json() == b.canonical_json()
    assert a.run_hash() == b.run_hash()
    c = resolve({}, {"steps": 6, "seed": 1})
    assert c.run_hash() != a.run_hash()


def test_model_config_from_flat():
    cfg = resolve({}, {"latent_dim": 16, "n_heads": 4})
    mc = cfg.model_config(1, 16, 16, 5)
    assert mc.latent_dim == 16 and mc.n_heads == 4
    assert mc.n_actions == 5
    assert mc.mlp_hidden_dim == 64  # defaults to 4x latent
