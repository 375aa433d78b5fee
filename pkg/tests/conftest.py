"""Shared fixtures: a session phantom, a miniature dataset, tiny configs."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from echoworld.config import ExperimentConfig
from echoworld.dataset import generate_dataset, load_split
from echoworld.phantom import ImageSpec, PhantomConfig, build_phantom, standard_plane_poses

torch.set_num_threads(1)


def mini_config() -> ExperimentConfig:
    """Desk-scale config small enough for unit tests."""
    cfg = ExperimentConfig()
    cfg.phantom.scan_duration = 120
    cfg.pretrain.epochs = 2
    cfg.pretrain.warmup_epochs = 1
    cfg.pretrain.batch_size = 16
    cfg.finetune.iterations = 8
    cfg.finetune.val_every = 4
    return cfg


def tiny_config() -> ExperimentConfig:
    """Gradient-check scale: 16px images, 4x4 patch grid, narrow dims."""
    cfg = ExperimentConfig()
    cfg.encoder.image_size = 16
    cfg.encoder.patch_size = 4
    cfg.encoder.embed_dim = 16
    cfg.encoder.depth = 2
    cfg.encoder.num_heads = 2
    cfg.encoder.predictor_depth = 2
    cfg.encoder.predictor_heads = 2
    cfg.encoder.motion_hidden = 16
    cfg.finetune.attention_width = 16
    cfg.finetune.attention_heads = 2
    cfg.finetune.head_hidden = 8
    return cfg


@pytest.fixture(scope="session")
def phantom():
    return build_phantom(PhantomConfig(), seed=0)


@pytest.fixture(scope="session")
def plane_poses(phantom):
    return standard_plane_poses(phantom)


@pytest.fixture(scope="session")
def image_spec():
    return ImageSpec()


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """3 train + 2 test scans of 120 frames, shared across the session."""
    root = tmp_path_factory.mktemp("mini-data")
    cfg = mini_config()
    generate_dataset(cfg, root, n_train=3, n_test=2, seed=0)
    return root


@pytest.fixture(scope="session")
def mini_train(mini_dataset):
    return load_split(mini_dataset, "train")


@pytest.fixture(scope="session")
def mini_test(mini_dataset):
    return load_split(mini_dataset, "test")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
