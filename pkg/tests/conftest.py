"""Shared fixtures: small datasets and model bundles."""

from __future__ import annotations

import hashlib

import numpy as np
import pytest

from simtpr.model import ModelBundle, ModelConfig, init_bundle
from simtpr.synthdata import EnvConfig, generate_dataset, load_dataset


@pytest.fixture(scope="session")
def tiny_dataset_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "tiny.stpr"
    generate_dataset(EnvConfig(height=8, width=8), seed=11, num_trajectories=10,
                     trajectory_length=24, path=str(path))
    return str(path)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_path):
    return load_dataset(tiny_dataset_path)


@pytest.fixture(scope="session")
def small_dataset_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.stpr"
    generate_dataset(EnvConfig(height=16, width=16), seed=7, num_trajectories=32,
                     trajectory_length=64, path=str(path))
    return str(path)


@pytest.fixture(scope="session")
def small_dataset(small_dataset_path):
    return load_dataset(small_dataset_path)


def small_config(**kw) -> ModelConfig:
    base = dict(latent_dim=8, obs_channels=1, obs_height=8, obs_width=8,
                encoder_channels=(4, 8), n_heads=2, n_layers=2, n_actions=5,
                max_t=8, precision="f32")
    base.update(kw)
    return ModelConfig(**base)


def small_bundle(seed: int = 0, **kw) -> ModelBundle:
    return init_bundle(small_config(**kw), np.random.default_rng(seed))


def params_digest(bundle: ModelBundle) -> str:
    h = hashlib.sha256()
    for name, t in bundle.param_items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()
