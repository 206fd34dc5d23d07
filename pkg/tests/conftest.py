import numpy as np
import pytest

from dashprefill import ModelConfig, init_weights

TOY = ModelConfig(num_layers=6, hidden_dim=32, num_heads=4, head_dim=8, ffn_dim=64, vocab_size=97, max_seq_len=256)


@pytest.fixture(scope="session")
def toy_config():
    return TOY


@pytest.fixture(scope="session")
def toy_weights():
    return init_weights(TOY, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
