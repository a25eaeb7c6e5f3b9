"""Regression against values recorded from the reference config."""
import json
import os
import sys

import pytest

from tavlab import config

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(HERE, "fixtures"))
from record import ROOT, record  # noqa: E402


@pytest.fixture(scope="module")
def fresh():
    cfg = config.load(os.path.join(ROOT, "configs", "reference.json"))
    return record(cfg)


@pytest.fixture(scope="module")
def stored():
    with open(os.path.join(HERE, "fixtures", "reference.json")) as fh:
        return json.load(fh)


def _compare(a, b, path=""):
    if isinstance(a, dict):
        assert set(a) == set(b), path
        for k in a:
            _compare(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _compare(x, y, f"{path}[{i}]")
    elif isinstance(a, float):
        assert a == pytest.approx(b, rel=1e-6, abs=1e-12), path
    else:
        assert a == b, path


@pytest.mark.slow
def test_reference_fixture(fresh, stored):
    assert fresh["config_hash"] == stored["config_hash"], "reference config changed: re-record"
    _compare(fresh, stored)
