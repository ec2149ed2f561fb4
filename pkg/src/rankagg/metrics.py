"""Ranking-quality metrics, including the NeuralSort / Sinkhorn relaxation of NDCG.

Permutations are sequences of item ids listed best first. Relevance and score
vectors are indexed by item id.
"""

from __future__ import annotations

import warnings
from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from .core import InvalidParameterError

SINKHORN_ITERS = 200
SINKHORN_EPS = 1e-12
SINKHORN_TOL = 1e-9


class DegenerateMetricWarning(UserWarning):
    """Raised when a metric falls back to a convention (e.g. zero ideal DCG)."""


def _positions(order: Sequence[int]) -> npt.NDArray[np.int64]:
    order = np.asarray(order, dtype=np.int64)
    n = order.shape[0]
    if sorted(order.tolist()) != list(range(n)):
        raise InvalidParameterError(f"not a permutation of 0..{n - 1}: {order.tolist()}")
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    return pos


def kendall_tau(p: Sequence[int], q: Sequence[int]) -> float:
    """(concordant - discordant) / C(n, 2) between two orderings of the same ids."""
    if len(p) != len(q):
        raise InvalidParameterError("permutations differ in length")
    if len(p) < 2:
        raise InvalidParameterError("Kendall tau needs at least two items")
    pp, pq = _positions(p), _positions(q)
    a = np.sign(pp[:, None] - pp[None, :])
    b = np.sign(pq[:, None] - pq[None, :])
    n = len(p)
    return float(np.triu(a * b, 1).sum()) / (n * (n - 1) / 2)


def _check_relevance(y) -> npt.NDArray[np.float64]:
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise InvalidParameterError("relevance must be non-negative")
    return y


def _discounts(n: int) -> npt.NDArray[np.float64]:
    return 1.0 / np.log2(2.0 + np.arange(n))


def dcg(order: Sequence[int], y) -> float:
    """Sum of (2^y - 1) / log2(1 + position), positions counted from 1."""
    y = _check_relevance(y)
    order = np.asarray(order, dtype=np.int64)
    return float(((2.0 ** y[order] - 1.0) * _discounts(order.shape[0])).sum())


def ideal_order(y) -> list[int]:
    y = np.asarray(y, dtype=np.float64)
    return np.lexsort((np.arange(y.shape[0]), -y)).tolist()


def ndcg(order: Sequence[int], y) -> float:
    y = _check_relevance(y)
    best = dcg(ideal_order(y), y)
    if best <= 0:
        warnings.warn("ideal DCG is zero; NDCG defined as 1.0", DegenerateMetricWarning, stacklevel=2)
        return 1.0
    return dcg(order, y) / best


def _neural_sort(s: npt.NDArray[np.float64], tau: float) -> npt.NDArray[np.float64]:
    # s: (..., n) -> (..., n, n)
    n = s.shape[-1]
    pairwise = np.abs(s[..., :, None] - s[..., None, :]).sum(axis=-1)   # A_s 1
    coef = n + 1 - 2 * np.arange(1, n + 1, dtype=np.float64)
    logits = (coef[:, None] * s[..., None, :] - pairwise[..., None, :]) / tau
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def neural_sort_matrix(s, tau: float = 1.0) -> npt.NDArray[np.float64]:
    """Row ``i`` is a softmax over items of how likely each is to sit at rank ``i``."""
    if tau <= 0:
        raise InvalidParameterError("tau must be positive")
    return _neural_sort(np.asarray(s, dtype=np.float64), tau)


def _sinkhorn(P: npt.NDArray[np.float64], iters: int, eps: float, tol: float) -> npt.NDArray[np.float64]:
    P = P + eps
    for i in range(iters):
        P = P / P.sum(axis=-1, keepdims=True)
        P = P / P.sum(axis=-2, keepdims=True)
        if i % 5 == 4 and np.abs(P.sum(axis=-1) - 1.0).max() < tol:
            break
    return P


def sinkhorn_scale(P, iters: int = SINKHORN_ITERS, eps: float = SINKHORN_EPS,
                   tol: float = SINKHORN_TOL) -> npt.NDArray[np.float64]:
    """Alternate row and column normalisation toward a doubly stochastic matrix.

    Stops after ``iters`` rounds or once every row and column sum is within
    ``tol`` of one.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidParameterError(f"Sinkhorn scaling needs a square matrix, got shape {P.shape}")
    if iters < 1:
        raise InvalidParameterError("iters must be >= 1")
    if np.any(P < 0):
        raise InvalidParameterError("Sinkhorn scaling needs non-negative entries")
    return _sinkhorn(P, iters, eps, tol)


def neural_ndcg_batch(pred, y, tau: float = 1.0, iters: int = SINKHORN_ITERS) -> npt.NDArray[np.float64]:
    """NeuralNDCG over the last axis of ``pred`` / ``y`` (any leading batch shape)."""
    pred = np.asarray(pred, dtype=np.float64)
    y = _check_relevance(y)
    y = np.broadcast_to(y, pred.shape)
    n = pred.shape[-1]
    gains = 2.0 ** y - 1.0
    P = _sinkhorn(_neural_sort(pred, tau), iters, SINKHORN_EPS, SINKHORN_TOL)
    soft_gains = np.einsum("...ij,...j->...i", P, gains)
    disc = _discounts(n)
    numer = (soft_gains * disc).sum(axis=-1)
    best = (-np.sort(-gains, axis=-1) * disc).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(best > 0, numer / np.where(best > 0, best, 1.0), 1.0)
    return out


def neural_ndcg(pred, y, tau: float = 1.0) -> float:
    """Differentiable NDCG: Sinkhorn-scaled NeuralSort matrix applied to the gains."""
    if tau <= 0:
        raise InvalidParameterError("tau must be positive")
    y = _check_relevance(y)
    if len(y) != len(pred):
        raise InvalidParameterError("pred and y differ in length")
    if not np.any(y > 0):
        warnings.warn("ideal DCG is zero; NeuralNDCG defined as 1.0", DegenerateMetricWarning, stacklevel=2)
        return 1.0
    return float(neural_ndcg_batch(pred, y, tau))


def top1_regret(chosen: int, utilities) -> float:
    u = np.asarray(utilities, dtype=np.float64)
    if not 0 <= chosen < u.shape[0]:
        raise InvalidParameterError(f"chosen id {chosen} out of range")
    return float(u.max() - u[chosen])
