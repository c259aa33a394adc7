from __future__ import annotations

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))  # makes `oracles` importable

from synfed.dataset import load_dataset, load_generalized, load_schema

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
GOLDEN = os.path.join(FIXTURES, "golden")


@pytest.fixture(scope="session")
def golden_schema():
    return load_schema(os.path.join(GOLDEN, "schema.yaml"))


@pytest.fixture(scope="session")
def golden_raw(golden_schema):
    return load_dataset(os.path.join(GOLDEN, "raw.csv"), golden_schema)


@pytest.fixture(scope="session")
def golden_published(golden_schema):
    return load_generalized(os.path.join(GOLDEN, "published.csv"), golden_schema)


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN
