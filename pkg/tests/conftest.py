import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from promptchess.chess import random_game  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def random_positions():
    """1,000 positions reached by seeded random play (varied game phases)."""
    rng = np.random.default_rng(20240501)
    out = []
    seed = 0
    while len(out) < 1000:
        game = random_game(seed, max_plies=int(rng.integers(1, 120)))
        out.append(game[-1])
        seed += 1
    return out
