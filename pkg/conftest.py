import os
import sys

import numpy as np
import pytest

# Ensure the project root is importable as `src`
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
