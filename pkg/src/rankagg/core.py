"""Domain types, shuffle/split of alternative sets, and preference matrices."""

from __future__ import annotations

import io
import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from .rankers import RankerModel

DEFAULT_SHUFFLES = 20


class RankingError(ValueError):
    """Base class for malformed inputs to the ranking pipeline."""


class InvalidParameterError(RankingError):
    pass


class MalformedBatchError(RankingError):
    pass


class RankerFailure(RuntimeError):
    """A ranker raised while producing a partial ranking."""

    def __init__(self, message: str, *, batch_index: int | None = None, round_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index
        self.round_index = round_index


def derive_rng(*key: int) -> np.random.Generator:
    """Independent generator for an integer key path, e.g. ``(seed, ranker, shuffle)``."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass(frozen=True, eq=False)
class Item:
    id: int
    features: npt.NDArray[np.float64]
    utility: float | None = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise InvalidParameterError(f"item id must be non-negative, got {self.id}")
        feats = np.asarray(self.features, dtype=np.float64).reshape(-1)
        if feats.size < 1:
            raise InvalidParameterError("feature vector must have dimension >= 1")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def dim(self) -> int:
        return int(self.features.shape[0])


@dataclass(frozen=True, eq=False)
class AlternativeSet:
    """A query plus ``K`` candidate items with dense ids ``0..K-1``."""

    query: Item
    items: tuple[Item, ...]

    def __post_init__(self) -> None:
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if not items:
            raise InvalidParameterError("alternative set must contain at least one item")
        if sorted(it.id for it in items) != list(range(len(items))):
            raise InvalidParameterError("item ids must be distinct and dense in [0, K)")
        dims = {it.dim for it in items}
        if len(dims) != 1 or self.query.dim not in dims:
            raise InvalidParameterError("query and item feature dimensions must agree")

    @property
    def K(self) -> int:
        return len(self.items)

    @property
    def dim(self) -> int:
        return self.query.dim

    def item(self, item_id: int) -> Item:
        item = self.items[item_id]
        if item.id != item_id:
            # ids are dense but not necessarily stored in id order
            item = next(it for it in self.items if it.id == item_id)
        return item

    def utilities(self) -> npt.NDArray[np.float64]:
        """Ground-truth utilities indexed by id; raises if any are missing."""
        out = np.empty(self.K)
        for it in self.items:
            if it.utility is None:
                raise InvalidParameterError(f"item {it.id} has no utility")
            out[it.id] = it.utility
        return out

    def features(self) -> npt.NDArray[np.float64]:
        """``K x d`` feature matrix indexed by id."""
        out = np.empty((self.K, self.dim))
        for it in self.items:
            out[it.id] = it.features
        return out


@dataclass(frozen=True)
class PartialRanking:
    """Item ids ordered best first, with optional aligned scores."""

    item_ids: tuple[int, ...]
    scores: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        ids = tuple(int(i) for i in self.item_ids)
        object.__setattr__(self, "item_ids", ids)
        if not ids:
            raise InvalidParameterError("a partial ranking needs at least one item")
        if len(set(ids)) != len(ids):
            raise InvalidParameterError(f"duplicate ids in partial ranking {ids}")
        if self.scores is not None:
            scores = tuple(float(s) for s in self.scores)
            object.__setattr__(self, "scores", scores)
            if len(scores) != len(ids):
                raise InvalidParameterError("scores and item_ids differ in length")
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise InvalidParameterError("scores must be sorted non-increasing")

    def __len__(self) -> int:
        return len(self.item_ids)

    @classmethod
    def from_scores(cls, ids: Sequence[int], scores: Sequence[float]) -> PartialRanking:
        """Order ``ids`` by descending score, ties broken by ascending id."""
        ids_arr = np.asarray(ids, dtype=np.int64)
        sc = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((ids_arr, -sc))
        return cls(tuple(ids_arr[order].tolist()), tuple(sc[order].tolist()))


@dataclass(frozen=True)
class ShuffleBatch:
    shuffle_id: int
    subsets: tuple[tuple[int, ...], ...]
    rankings: tuple[PartialRanking, ...]
    ranker: str = ""

    def __post_init__(self) -> None:
        subsets = tuple(tuple(int(i) for i in s) for s in self.subsets)
        object.__setattr__(self, "subsets", subsets)
        object.__setattr__(self, "rankings", tuple(self.rankings))
        if len(self.rankings) != len(subsets):
            raise MalformedBatchError("need exactly one ranking per subset")
        seen: set[int] = set()
        for subset, ranking in zip(subsets, self.rankings):
            if len(subset) < 2:
                raise MalformedBatchError(f"subset {subset} is shorter than 2")
            if sorted(subset) != sorted(ranking.item_ids):
                raise MalformedBatchError(f"ranking {ranking.item_ids} does not match subset {subset}")
            if seen.intersection(subset):
                raise MalformedBatchError(f"ids {sorted(seen.intersection(subset))} repeat across subsets")
            seen.update(subset)

    @property
    def ids(self) -> set[int]:
        return {i for s in self.subsets for i in s}

    def to_json(self) -> str:
        return json.dumps({
            "shuffle_id": self.shuffle_id,
            "ranker": self.ranker,
            "subsets": [list(s) for s in self.subsets],
            "rankings": [list(r.item_ids) for r in self.rankings],
        })

    @classmethod
    def from_json(cls, line: str) -> ShuffleBatch:
        try:
            obj = json.loads(line)
            return cls(
                shuffle_id=int(obj["shuffle_id"]),
                subsets=tuple(tuple(s) for s in obj["subsets"]),
                rankings=tuple(PartialRanking(tuple(r)) for r in obj["rankings"]),
                ranker=str(obj["ranker"]),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise MalformedBatchError(f"bad observation record: {exc}") from exc


@dataclass(frozen=True)
class PreferenceMatrix:
    """Sparse antisymmetric {-1, +1} matrix; absent pairs are 0."""

    K: int
    entries: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for (m, n), v in self.entries.items():
            if m == n or v not in (-1, 1) or self.entries.get((n, m)) != -v:
                raise MalformedBatchError(f"entry ({m}, {n}) breaks antisymmetry")

    def __getitem__(self, pair: tuple[int, int]) -> int:
        return self.entries.get(pair, 0)

    @property
    def support(self) -> set[tuple[int, int]]:
        """Pair-wise indication set: every (m, n) with a non-zero entry."""
        return set(self.entries)

    def wins(self) -> list[tuple[int, int]]:
        """(winner, loser) pairs, sorted."""
        return sorted(p for p, v in self.entries.items() if v > 0)

    def to_dense(self) -> npt.NDArray[np.int64]:
        out = np.zeros((self.K, self.K), dtype=np.int64)
        for (m, n), v in self.entries.items():
            out[m, n] = v
        return out


@dataclass(frozen=True)
class ObservationPool:
    K: int
    batches: tuple[ShuffleBatch, ...]
    n_shuffles: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "batches", tuple(self.batches))
        for b in self.batches:
            if any(i < 0 or i >= self.K for i in b.ids):
                raise MalformedBatchError(f"batch {b.shuffle_id} references ids outside [0, {self.K})")

    @property
    def ranker_tags(self) -> list[str]:
        return [b.ranker for b in self.batches]

    @property
    def ranker_calls(self) -> int:
        return sum(len(b.subsets) for b in self.batches)

    def __len__(self) -> int:
        return len(self.batches)

    def dumps(self) -> str:
        return "".join(b.to_json() + "\n" for b in self.batches)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str, K: int | None = None) -> ObservationPool:
        batches = [ShuffleBatch.from_json(line) for line in io.StringIO(text) if line.strip()]
        if K is None:
            K = 1 + max((i for b in batches for i in b.ids), default=-1)
        per_tag: dict[str, int] = {}
        for b in batches:
            per_tag[b.ranker] = per_tag.get(b.ranker, 0) + 1
        return cls(K=K, batches=tuple(batches), n_shuffles=max(per_tag.values(), default=0))

    @classmethod
    def load(cls, path, K: int | None = None) -> ObservationPool:
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read(), K=K)


def split_ids(ids: Sequence[int], k: int) -> list[list[int]]:
    """Cut ``ids`` into consecutive runs of length ``k``; a trailing run shorter than 2 is dropped."""
    ids = list(ids)
    subsets = [ids[i:i + k] for i in range(0, len(ids), k)]
    if subsets and len(subsets[-1]) < 2:
        subsets.pop()
    return subsets


def shuffle_and_split(alternatives: AlternativeSet | int, k: int, seed) -> list[list[int]]:
    """Randomly permute the ids and split them into disjoint runs of length ``k``.

    ``seed`` may be an int or a ``numpy.random.Generator``. When ``k`` does not
    divide ``K`` the last run holds the ``K mod k`` leftovers, unless there is
    just one leftover, in which case it is left out of this shuffle.
    """
    K = alternatives if isinstance(alternatives, int) else alternatives.K
    if k < 2 or k > K:
        raise InvalidParameterError(f"subset length k={k} must satisfy 2 <= k <= K={K}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return split_ids(rng.permutation(K).tolist(), k)


def build_preference_matrix(batch: ShuffleBatch | Iterable[PartialRanking], K: int) -> PreferenceMatrix:
    """Record every within-list ordered pair: earlier beats later."""
    rankings = batch.rankings if isinstance(batch, ShuffleBatch) else tuple(batch)
    entries: dict[tuple[int, int], int] = {}
    seen: set[int] = set()
    for ranking in rankings:
        ids = ranking.item_ids
        if seen.intersection(ids):
            raise MalformedBatchError(f"ids {sorted(seen.intersection(ids))} repeat across subsets")
        seen.update(ids)
        for pos, m in enumerate(ids):
            if not 0 <= m < K:
                raise MalformedBatchError(f"id {m} outside [0, {K})")
            for n in ids[pos + 1:]:
                entries[m, n] = 1
                entries[n, m] = -1
    return PreferenceMatrix(K, entries)


def rank_subset(ranker: RankerModel, alternatives: AlternativeSet, ids: Sequence[int],
                rng: np.random.Generator) -> PartialRanking:
    """Run one ranker call on the given ids and check its output is a permutation of them."""
    items = [alternatives.item(i) for i in ids]
    ranking = ranker.rank(alternatives.query, items, rng)
    if sorted(ranking.item_ids) != sorted(ids):
        raise RankerFailure(f"ranker returned {ranking.item_ids} for input {list(ids)}")
    return ranking


def collect_pool(alternatives: AlternativeSet, rankers: Sequence[RankerModel], ks: Sequence[int] | int,
                 n_shuffles: int = DEFAULT_SHUFFLES, seed: int = 0,
                 tags: Sequence[str] | None = None) -> ObservationPool:
    """Shuffle, split and rank ``n_shuffles`` times per ranker.

    Shuffle ``i`` of ranker ``r`` draws from a stream keyed by ``(seed, r, i)``,
    so the pool does not depend on evaluation order, and a ranker's batches are
    the same whatever other rankers are listed after it.
    """
    if n_shuffles < 1:
        raise InvalidParameterError("n_shuffles must be >= 1")
    if isinstance(ks, int):
        ks = [ks] * len(rankers)
    if len(ks) != len(rankers):
        raise InvalidParameterError("need one subset length per ranker")
    if tags is None:
        tags = [getattr(r, "name", "ranker") + f"@{k}" for r, k in zip(rankers, ks)]
    batches = []
    for r_idx, (ranker, k, tag) in enumerate(zip(rankers, ks, tags)):
        k_max = getattr(ranker, "k_max", None)
        if k_max is not None and k > k_max:
            raise InvalidParameterError(f"ranker {tag} supports lists up to {k_max}, asked for {k}")
        for i in range(n_shuffles):
            subsets = shuffle_and_split(alternatives, k, derive_rng(seed, r_idx, i, 0))
            noise = derive_rng(seed, r_idx, i, 1)
            try:
                rankings = tuple(rank_subset(ranker, alternatives, s, noise) for s in subsets)
            except Exception as exc:
                raise RankerFailure(f"ranker {tag} failed on batch {len(batches)}: {exc}",
                                    batch_index=len(batches)) from exc
            batches.append(ShuffleBatch(i, tuple(tuple(s) for s in subsets), rankings, tag))
    return ObservationPool(alternatives.K, tuple(batches), n_shuffles)
