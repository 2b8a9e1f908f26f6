import numpy as np
import pytest

from thermolab.geometry import enumerate_classes, geodesic_from_class
from thermolab.structures import default_field


@pytest.fixture(scope="session")
def fld():
    return default_field()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def short_geodesics():
    """One geodesic per generator class plus a longer word, enough for the orbit tests."""
    classes = enumerate_classes(2)
    picks = [c for c in classes if len(c.word) == 1] + [c for c in classes if c.word == (0, 2)]
    return [geodesic_from_class(c) for c in picks]
