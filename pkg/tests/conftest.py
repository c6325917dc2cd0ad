from __future__ import annotations

import numpy as np
import pytest

from invknit.labels import load_default_map


@pytest.fixture(scope="session")
def front_sj_map():
    return load_default_map("front_sj")


@pytest.fixture(scope="session")
def front_mj_map():
    return load_default_map("front_mj")


@pytest.fixture(scope="session")
def complete_map():
    return load_default_map("complete")


@pytest.fixture()
def rng():
    return np.random.default_rng(20124)
