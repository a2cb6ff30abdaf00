from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import MonteCarloIoU  # noqa: E402


@pytest.fixture(scope="session")
def mc_oracle() -> MonteCarloIoU:
    """Shared million-point sampling block (one allocation per run)."""
    return MonteCarloIoU(n_samples=10 ** 6)


@pytest.fixture(scope="session")
def mc_oracle_small() -> MonteCarloIoU:
    """Cheaper block for per-module smoke checks."""
    return MonteCarloIoU(n_samples=200_000, seed=5)
