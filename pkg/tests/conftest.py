"""
Shared test fixtures
"""

import logging

import pytest


@pytest.fixture(autouse=True)
def restore_root_logging():
    """Drop root handlers added during a test; they hold that test's captured stream."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for h in root.handlers:
        if h not in handlers:
            root.removeHandler(h)
            h.close()
    for h in handlers:
        if h not in root.handlers:
            root.addHandler(h)
    root.setLevel(level)
