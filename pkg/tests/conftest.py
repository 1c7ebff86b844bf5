import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bitforest.config import EngineSettings, ForestConfig  # noqa: E402

PLANTED_ADDRESS = "0x" + "ab" * 20


@pytest.fixture
def small_config():
    """Four-way forest: 4 records per leaf, 64 per tree."""
    return ForestConfig(branching=4)


@pytest.fixture
def small_settings(small_config):
    return EngineSettings(forest=small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_feature_sets(rng, count, features=4, p=0.3):
    """Per record, the subset of ``range(features)`` it carries."""
    hits = rng.random((count, features)) < p
    return [[int(f) for f in np.flatnonzero(row)] for row in hits]


def oracle(feature_sets, query, start=0, exclude=()):
    wanted, banned = set(query), set(exclude)
    return [i for i, s in enumerate(feature_sets)
            if i >= start and wanted <= set(s) and not banned & set(s)]
