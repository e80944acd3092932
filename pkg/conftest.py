"""
Shared pytest configuration
Registers the slow marker used by the statistical property tests. Slow tests
are skipped unless selected explicitly with `pytest -m slow`.
"""

import os
import sys

import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical properties that take minutes (select with -m slow)")


def pytest_collection_modifyitems(config, items):
    if "slow" in (config.getoption("-m") or ""):
        return
    skip_slow = pytest.mark.skip(reason="slow statistical property, run with -m slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
