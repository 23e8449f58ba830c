"""Experiment configuration: flat dotted-key JSON with CLI overrides.

A config is a flat dict of dotted string keys. Files and `--set key=value`
overrides merge over the defaults; a few defaults are conditional (the
decorrelation weight is zero unless the decorrelation loss is selected,
and the masked transition switches the similarity term to reconstruction).
The canonical JSON form (sorted keys, compact separators) is hashed to
name run directories and embed into manifests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .losses import LossSettings
from .model import ModelConfig

LOSS_VARIANTS = ("decorrelation", "contrastive", "none")
MODES = ("state", "demo")
TRANSITIONS = ("causal", "non-causal", "gru")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


DEFAULTS: dict[str, Any] = {
    "mode": "state",
    "loss": "decorrelation",
    "transition": "causal",
    "mask_ratio": 0.5,
    "lambda_o": 0.005,
    # lambda_d default is conditional on the loss variant; see resolve()
    "lambda_a": 1.0,
    "temperature": 0.1,
    "k": 1,
    "n_seq": 8,
    "t_seq": 10,
    "latent_dim": 64,
    "n_heads": 2,
    "n_layers": 2,
    "mlp_hidden": 0,
    "proj_hidden": 0,
    "pred_hidden": 0,
    "encoder_channels": [16, 32, 32],
    "bn_proj": False,
    "bn_pred": True,
    "bn_encoder": False,
    "shift_pad": 4,
    "jitter_scale": 0.05,
    "steps": 1000,
    "log_every": 100,
    "ckpt_every": 0,
    "seed": 0,
    "precision": "f32",
    "deterministic": True,
    "rank_samples": 1000,
    "rank_eps": 0.01,
    "cosine_pairs": 256,
    "dataset": "",
    "opt.lr": 3e-4,
    "opt.beta1": 0.9,
    "opt.beta2": 0.999,
    "opt.eps": 1.5e-5,
    "opt.weight_decay": 1e-6,
    "opt.max_grad_norm": 0.5,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings; `flat` holds the canonical key-value view."""

    flat: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.flat[key]

    def get(self, key: str, default=None):
        return self.flat.get(key, default)

    # -- canonical forms -----------------------------------------------------

    def canonical_json(self) -> str:
        return json.dumps(self.flat, sort_keys=True, separators=(",", ":"))

    def run_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    # -- derived views --------------------------------------------------------

    def similarity_kind(self) -> str:
        if self.flat["transition"] == "non-causal":
            return "recon"
        if self.flat["loss"] == "contrastive":
            return "contrastive"
        return "mse"

    def loss_settings(self) -> LossSettings:
        return LossSettings(
            kind=self.similarity_kind(),
            k=int(self.flat["k"]),
            lambda_o=float(self.flat["lambda_o"]),
            lambda_d=float(self.flat["lambda_d"]),
            lambda_a=float(self.flat["lambda_a"]) if self.flat["mode"] == "demo" else None,
            temperature=float(self.flat["temperature"]),
        )

    def model_config(self, obs_channels: int, obs_height: int, obs_width: int,
                     n_actions: int) -> ModelConfig:
        return ModelConfig(
            latent_dim=int(self.flat["latent_dim"]),
            obs_channels=obs_channels, obs_height=obs_height, obs_width=obs_width,
            encoder_channels=tuple(int(c) for c in self.flat["encoder_channels"]),
            proj_hidden=int(self.flat["proj_hidden"]),
            pred_hidden=int(self.flat["pred_hidden"]),
            n_heads=int(self.flat["n_heads"]),
            n_layers=int(self.flat["n_layers"]),
            mlp_hidden=int(self.flat["mlp_hidden"]),
            n_actions=n_actions,
            max_t=int(self.flat["t_seq"]),
            transition=self.flat["transition"],
            mask_ratio=float(self.flat["mask_ratio"]),
            bn_proj=bool(self.flat["bn_proj"]),
            bn_pred=bool(self.flat["bn_pred"]),
            bn_encoder=bool(self.flat["bn_encoder"]),
            precision=self.flat["precision"],
        )


def parse_set_value(raw: str) -> Any:
    """Parse an override value: JSON literal if possible, else string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(pairs: list[str]) -> dict[str, Any]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        out[key.strip()] = parse_set_value(raw.strip())
    return out


def resolve(file_values: dict | None = None,
            overrides: dict | None = None) -> ExperimentConfig:
    """defaults <- file <- overrides, then conditional defaults + validation."""
    merged = dict(file_values or {})
    merged.update(overrides or {})

    unknown = set(merged) - set(DEFAULTS) - {"lambda_d"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    flat = dict(DEFAULTS)
    flat.update(merged)

    if "lambda_d" not in merged:
        flat["lambda_d"] = 0.01 if flat["loss"] == "decorrelation" else 0.0

    _validate(flat)
    return ExperimentConfig(flat)


def _validate(flat: dict) -> None:
    if flat["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {flat['mode']!r}")
    if flat["loss"] not in LOSS_VARIANTS:
        raise ConfigError(f"loss must be one of {LOSS_VARIANTS}, got {flat['loss']!r}")
    if flat["transition"] not in TRANSITIONS:
        raise ConfigError(f"transition must be one of {TRANSITIONS}")
    if flat["transition"] == "non-causal" and flat["loss"] == "contrastive":
        raise ConfigError("the masked transition replaces the similarity term with "
                          "reconstruction; it cannot be combined with the contrastive loss")
    if flat["mode"] == "demo" and flat["transition"] != "causal":
        raise ConfigError("demo mode requires the causal transition")
    if not 0 < flat["mask_ratio"] < 1:
        raise ConfigError("mask_ratio must be in (0, 1)")
    if int(flat["k"]) < 1 or int(flat["k"]) >= int(flat["t_seq"]):
        raise ConfigError("k must satisfy 1 <= k < t_seq")
    if flat["temperature"] <= 0:
        raise ConfigError("temperature must be positive")
    if int(flat["steps"]) < 0:
        raise ConfigError("steps must be >= 0")
    if int(flat["n_seq"]) < 1 or int(flat["t_seq"]) < 2:
        raise ConfigError("need n_seq >= 1 and t_seq >= 2")
    if flat["precision"] not in ("f32", "f64"):
        raise ConfigError("precision must be f32 or f64")


def load_config_file(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object of flat keys")
    return values
