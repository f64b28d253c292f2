import numpy as np
import pytest

from nelson_fk.levy import LevyPath
from nelson_fk.model import ModelParams


@pytest.fixture
def unit_params():
    return ModelParams(m_p=1.0, m_b=1.0, g=1.0, lam=1.0)


@pytest.fixture
def still_path():
    """Jump-free path on [0, 1]."""
    return LevyPath(1.0, 1e-3, np.empty(0), np.empty((0, 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)
