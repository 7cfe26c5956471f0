import numpy as np
import pytest

from config import Config, TestingConfig
from managers.audio_io import AudioBuffer
from managers.rnn_model import ModelParams, init_params, param_shapes


@pytest.fixture(autouse=True)
def no_run_registry(monkeypatch):
    """CLI commands must not touch the on-disk registry during tests."""
    monkeypatch.setattr(Config, 'RECORD_RUNS', False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def noise_buffer(rng):
    return AudioBuffer((0.3 * rng.standard_normal(4000)).astype(np.float32))


@pytest.fixture
def small_params():
    return init_params(4, seed=3, dtype=np.float64)


def zero_params(hidden_size: int, residual: bool, dtype=np.float32) -> ModelParams:
    arrays = {name: np.zeros(shape, dtype=dtype) for name, shape in param_shapes(hidden_size).items()}
    return ModelParams(hidden_size, residual=residual, **arrays)


@pytest.fixture
def portal_app():
    from app import create_app
    return create_app(TestingConfig)


@pytest.fixture
def client(portal_app):
    return portal_app.test_client()
