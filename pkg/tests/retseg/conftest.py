"""Test configuration and fixtures"""

import numpy as np
import pytest

from retseg.app import create_app
from retseg.models.sample import SPLIT_TEST, SPLIT_TRAIN
from retseg.services.generator import as_labeled_real, toy_generate
from retseg.utilities.config import SAUNetConfig, TrainConfig
from tests.helpers.drive import write_drive_fixture


@pytest.fixture(scope='session', autouse=True)
def app_config():
    """Configure the testing environment once"""
    return create_app('testing')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    """Depth-2 network small enough for CPU unit tests"""
    return SAUNetConfig(base_width=4, depth=2, dropblock_size=3, dropblock_keep_prob=0.9,
                        attention_kernel=3, bn_momentum=0.9)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(epochs_phase1=2, lr_phase1=1e-3, epochs_phase2=1, lr_phase2=1e-4,
                       batch_size=2, seed=7, plateau_patience=5, validation_fraction=0.25)


@pytest.fixture
def toy_train():
    """Four labeled 32 x 32 toy samples"""
    return as_labeled_real(toy_generate(4, seed=11, size=32), SPLIT_TRAIN)


@pytest.fixture
def toy_test():
    return as_labeled_real(toy_generate(2, seed=12, size=32), SPLIT_TEST)


@pytest.fixture
def drive_root(tmp_path):
    """DRIVE-format dataset with 4 training and 2 test images at 64 x 64"""
    return write_drive_fixture(tmp_path / 'DRIVE', n_train=4, n_test=2, size=64, seed=3)
