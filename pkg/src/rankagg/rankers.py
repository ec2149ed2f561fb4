"""Rankers that order a short list of items for a query."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt

from .core import InvalidParameterError, Item, PartialRanking


@runtime_checkable
class RankerModel(Protocol):
    name: str
    k_max: int | None

    def rank(self, query: Item, items: Sequence[Item], rng: np.random.Generator) -> PartialRanking:
        ...


def _utilities(items: Sequence[Item]) -> npt.NDArray[np.float64]:
    missing = [it.id for it in items if it.utility is None]
    if missing:
        raise InvalidParameterError(f"items {missing} have no utility")
    return np.array([it.utility for it in items], dtype=np.float64)


def oracle_rank(items: Sequence[Item]) -> PartialRanking:
    """Sort by ground-truth utility, ties by id."""
    if not items:
        raise InvalidParameterError("cannot rank an empty list")
    return PartialRanking.from_scores([it.id for it in items], _utilities(items))


def noisy_rank(items: Sequence[Item], sigma: float, rng: np.random.Generator) -> PartialRanking:
    """Thurstone ranking: sort by utility plus i.i.d. N(0, sigma^2) noise."""
    if sigma < 0:
        raise InvalidParameterError("sigma must be non-negative")
    u = _utilities(items)
    return PartialRanking.from_scores([it.id for it in items], u + rng.normal(0.0, sigma, size=u.shape))


@dataclass(frozen=True)
class OracleRanker:
    name: str = "oracle"
    k_max: int | None = None

    def rank(self, query: Item, items: Sequence[Item], rng: np.random.Generator | None = None) -> PartialRanking:
        return oracle_rank(items)


@dataclass(frozen=True)
class NoisyRanker:
    sigma: float
    name: str = "noisy"
    k_max: int | None = None

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise InvalidParameterError("sigma must be non-negative")

    def rank(self, query: Item, items: Sequence[Item], rng: np.random.Generator) -> PartialRanking:
        return noisy_rank(items, self.sigma, rng)


def linear_scores(params: npt.NDArray[np.float64], query: npt.NDArray[np.float64],
                  items: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Scores for ``items`` (``(..., k, d)``) given ``query`` (``(..., d)``).

    ``params`` is ``[w, u, a, b]`` flattened to length ``2d + 2``; the score of
    item ``i`` is ``w.x_i + a <x_i, x_q> + u.mean_j(x_j) + b``.
    """
    d = items.shape[-1]
    w, u, a, b = params[:d], params[d:2 * d], params[2 * d], params[2 * d + 1]
    context = items.mean(axis=-2) @ u
    sim = np.einsum("...kd,...d->...k", items, query)
    return items @ w + a * sim + context[..., None] + b


def linear_score_jacobian(query: npt.NDArray[np.float64], items: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """d score_i / d params, shape ``(..., k, 2d + 2)``. Scores are linear in params."""
    sim = np.einsum("...kd,...d->...k", items, query)
    ctx = np.broadcast_to(items.mean(axis=-2)[..., None, :], items.shape)
    ones = np.ones(items.shape[:-1] + (1,))
    return np.concatenate([items, ctx, sim[..., None], ones], axis=-1)


@dataclass(frozen=True, eq=False)
class LinearListRanker:
    """Item weight ``w``, list-context weight ``u``, query-similarity weight ``a`` and bias ``b``."""

    w: npt.NDArray[np.float64]
    u: npt.NDArray[np.float64]
    a: float = 0.0
    b: float = 0.0
    name: str = "linear"
    k_max: int | None = None
    history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        if w.shape != u.shape or w.size < 1:
            raise InvalidParameterError("w and u must be non-empty and of equal length")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def d(self) -> int:
        return int(self.w.shape[0])

    @property
    def params(self) -> npt.NDArray[np.float64]:
        return np.concatenate([self.w, self.u, [self.a, self.b]])

    @classmethod
    def from_params(cls, params, **kwargs) -> LinearListRanker:
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 1 or params.size < 4 or params.size % 2:
            raise InvalidParameterError(f"parameter vector of length {params.size} is not 2d + 2")
        d = (params.size - 2) // 2
        return cls(params[:d], params[d:2 * d], params[2 * d], params[2 * d + 1], **kwargs)

    @classmethod
    def zeros(cls, d: int) -> LinearListRanker:
        return cls(np.zeros(d), np.zeros(d))

    def scores(self, query, items) -> npt.NDArray[np.float64]:
        query = np.asarray(query, dtype=np.float64)
        items = np.asarray(items, dtype=np.float64)
        if items.ndim != 2 or items.shape[1] != self.d or query.shape != (self.d,):
            raise InvalidParameterError(
                f"model expects d={self.d}; got query {query.shape} and items {items.shape}")
        return linear_scores(self.params, query, items)

    def rank(self, query: Item, items: Sequence[Item], rng: np.random.Generator | None = None) -> PartialRanking:
        feats = np.stack([it.features for it in items])
        return PartialRanking.from_scores([it.id for it in items], self.scores(query.features, feats))

    def to_dict(self) -> dict:
        return {"d": self.d, "w": self.w.tolist(), "u": self.u.tolist(), "a": self.a, "b": self.b}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def from_dict(cls, obj: dict) -> LinearListRanker:
        model = cls(obj["w"], obj["u"], obj["a"], obj["b"])
        if model.d != int(obj["d"]):
            raise InvalidParameterError(f"model file declares d={obj['d']} but holds {model.d} weights")
        return model

    @classmethod
    def load(cls, path) -> LinearListRanker:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def linear_rank(query, items, ranker: LinearListRanker) -> PartialRanking:
    """Rank raw feature rows; ids are row positions."""
    items = np.asarray(items, dtype=np.float64)
    return PartialRanking.from_scores(range(items.shape[0]), ranker.scores(query, items))
