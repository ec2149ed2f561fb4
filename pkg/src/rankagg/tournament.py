"""Naive split-rank-promote selection, the baseline the aggregator is measured against."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import AlternativeSet, InvalidParameterError, RankerFailure, derive_rng, rank_subset, split_ids
from .rankers import RankerModel


@dataclass(frozen=True)
class TournamentRound:
    subsets: tuple[tuple[int, ...], ...]
    winners: tuple[int, ...]
    carried: tuple[int, ...] = ()   # leftover ids promoted without being ranked


@dataclass(frozen=True)
class TournamentTrace:
    rounds: tuple[TournamentRound, ...]
    winner: int
    ranker_calls: int

    def to_dict(self) -> dict:
        return {
            "winner": self.winner,
            "ranker_calls": self.ranker_calls,
            "rounds": [{"subsets": [list(s) for s in r.subsets], "winners": list(r.winners),
                        "carried": list(r.carried)} for r in self.rounds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def call_budget(K: int, k: int) -> int:
    """Upper bound on ranker calls: ceil(K/k) + ceil(ceil(K/k)/k) + ... down to one list."""
    total, n = 0, K
    while n > 1:
        n = math.ceil(n / k)
        total += n
    return total


def naive_tournament(alternatives: AlternativeSet, ranker: RankerModel, k: int, seed: int = 0,
                     shuffle: bool = True) -> TournamentTrace:
    """Split the pool into lists of ``k``, keep each list's top item, repeat until one remains.

    Each round reshuffles with a stream derived from ``(seed, round)``. A
    single leftover id that cannot form a list is carried to the next round
    unranked. ``shuffle=False`` keeps the current pool order.
    """
    if k < 2:
        raise InvalidParameterError(f"k={k} must be >= 2")
    pool = list(range(alternatives.K))
    rounds: list[TournamentRound] = []
    calls = 0
    round_idx = 0
    while len(pool) > 1:
        order = derive_rng(seed, round_idx, 0).permutation(pool).tolist() if shuffle else pool
        subsets = [order] if len(order) <= k else split_ids(order, k)
        covered = {i for s in subsets for i in s}
        carried = [i for i in order if i not in covered]
        noise = derive_rng(seed, round_idx, 1)
        winners = []
        for subset in subsets:
            try:
                ranking = rank_subset(ranker, alternatives, subset, noise)
            except Exception as exc:
                raise RankerFailure(f"round {round_idx}: {exc}", round_index=round_idx) from exc
            winners.append(ranking.item_ids[0])
            calls += 1
        rounds.append(TournamentRound(tuple(tuple(s) for s in subsets), tuple(winners), tuple(carried)))
        pool = winners + carried
        round_idx += 1
    return TournamentTrace(tuple(rounds), int(pool[0]), calls)
