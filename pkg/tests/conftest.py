"""
Pytest configuration and shared fixtures
"""

import os
import tempfile
import shutil
import pytest
import numpy as np

from unified_asr.core.config_manager import ConfigManager
from unified_asr.core.data import gen_corpus
from unified_asr.core.model import init_params
from unified_asr.core.tensor import precision
from unified_asr.interfaces.ui_interface import UIInterface
from unified_asr.common import (
    ChunkPolicy, Config, ContrastiveConfig, DataConfig, DecodeConfig, ModelConfig, TrainConfig, VocabSpec,
)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests"""
    temp_path = tempfile.mkdtemp()
    yield temp_path
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture
def float64():
    """Run the test in 64-bit verification mode"""
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    """Smallest model that still exercises every block"""
    return ModelConfig(
        feature_dim=6,
        d_model=8,
        n_heads=2,
        d_ff=16,
        n_enc_layers=1,
        n_dec_layers=1,
        conv_kernel=3,
        vocab_size=4,
        dropout=0.0,
        label_smoothing=0.1,
    )


@pytest.fixture
def tiny_params(tiny_model_config, float64):
    """Random 64-bit parameters for the tiny model"""
    return init_params(7, tiny_model_config)


@pytest.fixture
def tiny_corpus(tiny_model_config):
    """Seeded synthetic corpus matching the tiny model"""
    return gen_corpus(1, 12, VocabSpec(tiny_model_config.vocab_size), tiny_model_config.feature_dim, 0.1)


@pytest.fixture
def test_config(temp_dir, tiny_model_config):
    """Fast end-to-end configuration: one epoch, small batches, logging into the temp dir"""
    return Config(
        seed=3,
        model=tiny_model_config,
        data=DataConfig(n_utts=12, n_test=4, noise_sigma=0.1),
        train=TrainConfig(
            epochs=2,
            batch_size=4,
            peak_lr=1e-3,
            warmup_steps=4,
            top_k=2,
            contrastive=ContrastiveConfig(num_distractors=3),
            chunk_policy=ChunkPolicy(p_full=0.0, max_chunk=4),
        ),
        decode=DecodeConfig(beam=4),
        enable_logging=True,
        log_file=os.path.join(temp_dir, "logs", "uasr.log"),
    )


@pytest.fixture
def config_manager(temp_dir, test_config):
    """Create a ConfigManager instance for testing"""
    config_file = os.path.join(temp_dir, "test_config.json")

    manager = ConfigManager(config_file)
    manager._config = test_config
    manager.save_config()
    yield manager


@pytest.fixture
def mock_ui(mocker):
    """UI double recording every call"""
    ui = mocker.Mock(spec=UIInterface)
    ui.initialize.return_value = True
    return ui
