import numpy as np
import pytest

from src.costmodel.tracker import TRACKER
from src.encoder.config import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(num_layers=2, hidden=16, num_heads=4, seq_len=8, num_blocks=2,
                       vocab_size=32, assignment="3:1", dropout=0.0, attention_dropout=0.0)


@pytest.fixture
def tracker_session():
    with TRACKER.session() as tracker:
        yield tracker
