from __future__ import annotations

import pytest

from helpers import quick_train


@pytest.fixture(scope="session")
def dwac_run():
    """One small trained dwac model shared by read-only tests."""
    return quick_train("dwac")


@pytest.fixture(scope="session")
def softmax_run():
    return quick_train("softmax")
