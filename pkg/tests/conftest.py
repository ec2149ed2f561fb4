import sys
import numpy as np
import pytest

from rankagg.core import AlternativeSet, Item, ObservationPool, PartialRanking, ShuffleBatch


def pool_from_rankings(K, rankings_per_batch, ranker="r"):
    """One batch per entry; each entry is a list of best-first id lists."""
    batches = []
    for i, rankings in enumerate(rankings_per_batch):
        batches.append(ShuffleBatch(i, tuple(tuple(r) for r in rankings),
                                    tuple(PartialRanking(tuple(r)) for r in rankings), ranker))
    return ObservationPool(K, tuple(batches), len(batches))


def world_from_utilities(utilities, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return AlternativeSet(Item(0, rng.standard_normal(d)),
                          tuple(Item(i, rng.standard_normal(d), float(u)) for i, u in enumerate(utilities)))


@pytest.fixture
def chain_pool():
    """Single ranking a > b > c over three items."""
    return pool_from_rankings(3, [[[0, 1, 2]]])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
