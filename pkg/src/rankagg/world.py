"""Synthetic alternative sets and similarity-based candidate retrieval."""

from __future__ import annotations

import warnings
from collections.abc import Sequence

import numpy as np

from .core import AlternativeSet, InvalidParameterError, Item

DEFAULT_K = 50
UTILITY_MODELS = ("dot", "random")


class ZeroNormWarning(UserWarning):
    pass


def make_synthetic_world(K: int, d: int, utility_model: str = "dot", seed: int = 0) -> AlternativeSet:
    """Query and ``K`` items with standard normal features.

    ``dot`` sets each utility to ``sigmoid(<x_i, x_q>)``, so the most similar
    item is the best one; ``random`` draws utilities from U[0, 1] regardless
    of features.
    """
    if K < 1 or d < 1:
        raise InvalidParameterError("K and d must be >= 1")
    if utility_model not in UTILITY_MODELS:
        raise InvalidParameterError(f"utility_model must be one of {UTILITY_MODELS}")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(d)
    X = rng.standard_normal((K, d))
    if utility_model == "dot":
        util = 1.0 / (1.0 + np.exp(-(X @ q)))
    else:
        util = rng.uniform(size=K)
    return AlternativeSet(Item(0, q), tuple(Item(i, X[i], float(util[i])) for i in range(K)))


def cosine_similarity(query, corpus) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarities plus a mask of rows whose similarity was forced to 0 (zero norm)."""
    q = np.asarray(query, dtype=np.float64)
    X = np.asarray(corpus, dtype=np.float64)
    qn = np.linalg.norm(q)
    xn = np.linalg.norm(X, axis=1)
    degenerate = (xn == 0) | (qn == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = (X @ q) / (xn * qn)
    return np.where(degenerate, 0.0, sim), degenerate


def retrieve_alternatives(query: Item, corpus: Sequence[Item], K: int = DEFAULT_K) -> AlternativeSet:
    """Top-``K`` corpus items by cosine similarity to the query, most similar first.

    Retrieved items are re-numbered ``0..K-1`` in similarity order; utilities
    are carried over.
    """
    if K < 1 or len(corpus) < K:
        raise InvalidParameterError(f"need 1 <= K <= corpus size ({len(corpus)}), got K={K}")
    if len({it.dim for it in corpus} | {query.dim}) != 1:
        raise InvalidParameterError("corpus and query feature dimensions differ")
    sim, degenerate = cosine_similarity(query.features, np.stack([it.features for it in corpus]))
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} zero-norm feature vectors given similarity 0",
                      ZeroNormWarning, stacklevel=2)
    ids = np.array([it.id for it in corpus])
    top = np.lexsort((ids, -sim))[:K]
    items = tuple(Item(new_id, corpus[j].features, corpus[j].utility) for new_id, j in enumerate(top.tolist()))
    return AlternativeSet(query, items)
