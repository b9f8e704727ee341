import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    from esdnet.model import ModelConfig, build_model
    return build_model(ModelConfig(width_div=4), seed=0)
