import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread_torch():
    # Keep every test deterministic and comparable across runs.
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
