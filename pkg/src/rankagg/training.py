"""Composite ranking loss and the mini-batch trainer for :class:`LinearListRanker`."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .core import InvalidParameterError
from .metrics import neural_ndcg_batch
from .rankers import LinearListRanker, linear_score_jacobian, linear_scores

log = logging.getLogger(__name__)

FD_STEP = 1e-5


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    delta: float = 1.0
    tau: float = 1.0
    lr: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)   # margin, sort, reg
    seed: int = 0
    sinkhorn_iters: int = 50

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise InvalidParameterError("delta must be >= 0")
        if self.tau <= 0 or self.lr <= 0 or self.batch_size < 1 or self.sinkhorn_iters < 1:
            raise InvalidParameterError("tau, lr, batch_size and sinkhorn_iters must be positive")
        if self.epochs < 0:
            raise InvalidParameterError("epochs must be >= 0")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise InvalidParameterError("loss_weights must be three non-negative numbers")


@dataclass(frozen=True, eq=False)
class RankingRecord:
    query: npt.NDArray[np.float64]
    items: npt.NDArray[np.float64]
    y: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        q = np.asarray(self.query, dtype=np.float64).reshape(-1)
        X = np.asarray(self.items, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[1] != q.shape[0]:
            raise InvalidParameterError(f"items {X.shape} do not match query dimension {q.shape[0]}")
        if y.shape[0] != X.shape[0] or not np.all(np.isfinite(y)):
            raise InvalidParameterError("y must be finite and have one entry per item")
        object.__setattr__(self, "query", q)
        object.__setattr__(self, "items", X)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class RankingDataset:
    records: tuple[RankingRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if len({r.query.shape[0] for r in self.records}) > 1:
            raise InvalidParameterError("all records must share a feature dimension")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return self.records[0].query.shape[0]

    def dumps(self) -> str:
        return "".join(json.dumps({"query": r.query.tolist(), "items": r.items.tolist(), "y": r.y.tolist()}) + "\n"
                       for r in self.records)

    @classmethod
    def loads(cls, text: str) -> RankingDataset:
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(RankingRecord(obj["query"], obj["items"], obj["y"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidParameterError(f"dataset line {lineno}: {exc}") from exc
        return cls(tuple(records))

    @classmethod
    def load(cls, path) -> RankingDataset:
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())


def synthetic_dataset(n_records: int, k: int, d: int, seed: int, target: str = "dot") -> RankingDataset:
    """Records whose true metric is ``<x_i, x_q>`` (``dot``) or uniform noise (``random``)."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n_records, d))
    X = rng.standard_normal((n_records, k, d))
    if target == "dot":
        y = np.einsum("nkd,nd->nk", X, q)
    elif target == "random":
        y = rng.uniform(size=(n_records, k))
    else:
        raise InvalidParameterError(f"unknown target {target!r}")
    return RankingDataset(tuple(RankingRecord(q[i], X[i], y[i]) for i in range(n_records)))


# -- losses on a (B, k) batch -------------------------------------------------

def _margin(pred, y, delta):
    # viol[b, i, j] = pred_j - pred_i + delta, counted where y_i > y_j
    viol = pred[..., None, :] - pred[..., :, None] + delta
    active = (y[..., :, None] > y[..., None, :]) & (viol > 0)
    loss = np.where(active, viol, 0.0).sum(axis=(-2, -1))
    grad = active.sum(axis=-2) - active.sum(axis=-1)
    return loss, grad.astype(np.float64)


def _mse(pred, y):
    diff = pred - y
    return (diff ** 2).mean(axis=-1), 2.0 * diff / pred.shape[-1]


def sort_relevance(y):
    """Gains for the NeuralNDCG term; lists with negative metrics are shifted to start at 0."""
    y = np.asarray(y, dtype=np.float64)
    low = y.min(axis=-1, keepdims=True)
    return np.where(low < 0, y - low, y)


def _sort_loss(pred, y, tau, iters):
    return 1.0 - neural_ndcg_batch(pred, sort_relevance(y), tau, iters)


def _sort_grad(pred, y, tau, iters, h=FD_STEP):
    """Central differences of the sort term, all coordinates evaluated in one batch."""
    k = pred.shape[-1]
    eye = np.eye(k) * h
    # one call for both sides so Sinkhorn's early stop is shared
    shifted = np.stack([pred[..., None, :] + eye, pred[..., None, :] - eye])
    rel = sort_relevance(y)[..., None, :]
    f = 1.0 - neural_ndcg_batch(shifted, rel, tau, iters)
    return (f[0] - f[1]) / (2 * h)


def composite_batch(pred, y, cfg: TrainConfig, with_sort_grad: bool = True):
    """Per-row loss ``(B,)`` and gradient w.r.t. ``pred`` ``(B, k)``."""
    wm, ws, wr = cfg.loss_weights
    loss = np.zeros(pred.shape[:-1])
    grad = np.zeros_like(pred)
    if wm:
        l, g = _margin(pred, y, cfg.delta)
        loss += wm * l
        grad += wm * g
    if ws:
        loss += ws * _sort_loss(pred, y, cfg.tau, cfg.sinkhorn_iters)
        if with_sort_grad:
            grad += ws * _sort_grad(pred, y, cfg.tau, cfg.sinkhorn_iters)
    if wr:
        l, g = _mse(pred, y)
        loss += wr * l
        grad += wr * g
    return loss, grad


def margin_loss(pred, y, delta: float = 1.0) -> float:
    """Sum over pairs with ``y_i > y_j`` of ``max(0, pred_j - pred_i + delta)``."""
    pred, y = _pair(pred, y)
    return float(_margin(pred, y, delta)[0])


def mse_loss(pred, y) -> float:
    pred, y = _pair(pred, y, min_len=1)
    return float(_mse(pred, y)[0])


def composite_loss(pred, y, cfg: TrainConfig | None = None) -> tuple[float, npt.NDArray[np.float64]]:
    """Weighted margin + (1 - NeuralNDCG) + MSE, and its gradient w.r.t. ``pred``.

    Margin and MSE gradients are exact; the NeuralNDCG part is differentiated
    by central differences.
    """
    pred, y = _pair(pred, y)
    loss, grad = composite_batch(pred, y, cfg or TrainConfig())
    return float(loss), grad


def _pair(pred, y, min_len=2):
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape or pred.ndim != 1:
        raise InvalidParameterError("pred and y must be 1-d and of equal length")
    if pred.shape[0] < min_len:
        raise InvalidParameterError(f"need at least {min_len} entries")
    return pred, y


# -- training -----------------------------------------------------------------

def _stack(records: Iterable[RankingRecord]):
    recs = list(records)
    return (np.stack([r.query for r in recs]), np.stack([r.items for r in recs]), np.stack([r.y for r in recs]))


def _groups(data: RankingDataset):
    """Records grouped by list length so each group stacks into dense arrays."""
    by_k: dict[int, list[int]] = defaultdict(list)
    for i, r in enumerate(data.records):
        by_k[r.items.shape[0]].append(i)
    return {k: _stack(data.records[i] for i in idx) for k, idx in sorted(by_k.items())}


def params_loss_and_grad(params, q, X, y, cfg: TrainConfig, with_sort_grad: bool = True):
    """Mean composite loss over a stacked batch and its gradient w.r.t. the ranker parameters."""
    pred = linear_scores(params, q, X)
    loss, g_pred = composite_batch(pred, y, cfg, with_sort_grad)
    J = linear_score_jacobian(q, X)
    grad = np.einsum("bk,bkp->p", g_pred, J) / pred.shape[0]
    return float(loss.mean()), grad


def evaluate_loss(model: LinearListRanker, data: RankingDataset, cfg: TrainConfig) -> float:
    """Mean composite loss of ``model`` over ``data`` under ``cfg``'s loss settings."""
    total, n = 0.0, 0
    for q, X, y in _groups(data).values():
        loss, _ = composite_batch(linear_scores(model.params, q, X), y, cfg, with_sort_grad=False)
        total += loss.sum()
        n += loss.shape[0]
    return total / n


def train_linear_ranker(data: RankingDataset, cfg: TrainConfig | None = None,
                        init: LinearListRanker | None = None) -> LinearListRanker:
    """Mini-batch gradient descent on the composite loss.

    Deterministic for a given ``cfg.seed``: the initial parameters and every
    epoch's batch order are drawn from that seed.
    """
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise InvalidParameterError("training data is empty")
    d = data.dim
    rng = np.random.default_rng(cfg.seed)
    params = init.params.copy() if init is not None else rng.normal(0.0, 0.01, size=2 * d + 2)
    if init is not None and init.d != d:
        raise InvalidParameterError(f"initial model has d={init.d}, data has d={d}")
    groups = _groups(data)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        batches = []
        for k, (q, X, y) in groups.items():
            order = rng.permutation(q.shape[0])
            batches += [(k, order[i:i + cfg.batch_size]) for i in range(0, len(order), cfg.batch_size)]
        epoch_loss, seen = 0.0, 0
        for j in rng.permutation(len(batches)):
            k, idx = batches[j]
            q, X, y = groups[k]
            with np.errstate(over="ignore", invalid="ignore"):   # reported below as divergence
                loss, grad = params_loss_and_grad(params, q[idx], X[idx], y[idx], cfg)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(epoch)
            params = params - cfg.lr * grad
            epoch_loss += loss * len(idx)
            seen += len(idx)
        history.append(epoch_loss / seen)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    return LinearListRanker.from_params(params, history=tuple(history))
