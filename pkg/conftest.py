import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: acceptance-scale runs (minutes), deselect with -m "not slow"')


@pytest.fixture
def cache_env(tmp_path, monkeypatch):
    """Private count cache directory for the test"""
    path = tmp_path / 'cache'
    monkeypatch.setenv('SHRINKING_TARGETS_CACHE', str(path))
    return path
