"""Least-squares global ranking from pooled partial rankings.

Every observed pair ``m`` before ``n`` contributes a row ``r_m - r_n = 1``. The
normal equations are ``L r = b`` with ``L`` the comparison-graph Laplacian and
``b`` the win-minus-loss count per item. ``L`` is singular on each connected
component (constants), so each component is solved by conjugate gradient with
the iterate and residual projected onto the mean-zero subspace.
"""

from __future__ import annotations

import json
import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .core import InvalidParameterError, ObservationPool, RankingError, build_preference_matrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DENSE_ORACLE_MAX_K = 64


class EmptySystemError(RankingError):
    pass


class DisconnectedGraphWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LeastSquaresSystem:
    K: int
    rows: npt.NDArray[np.int64]     # (n_rows, 2): winner, loser; target is always +1
    laplacian: sp.csr_matrix
    rhs: npt.NDArray[np.float64]
    weight: float = 1.0             # 1 / (2 * batches); scales the objective, not the minimiser

    @classmethod
    def from_rows(cls, K: int, rows, weight: float = 1.0) -> LeastSquaresSystem:
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
        if rows.size and (rows.min() < 0 or rows.max() >= K):
            raise InvalidParameterError(f"row ids outside [0, {K})")
        if np.any(rows[:, 0] == rows[:, 1]):
            raise InvalidParameterError("a row cannot compare an item with itself")
        w, l = rows[:, 0], rows[:, 1]
        ones = np.ones(len(rows))
        # D^T D assembled from edge incidences; duplicate entries are summed
        adj = sp.coo_matrix((np.concatenate([ones, ones]), (np.concatenate([w, l]), np.concatenate([l, w]))),
                            shape=(K, K)).tocsr()
        degree = np.asarray(adj.sum(axis=1)).ravel()
        laplacian = (sp.diags(degree) - adj).tocsr()
        rhs = np.bincount(w, minlength=K).astype(np.float64) - np.bincount(l, minlength=K)
        return cls(K, rows, laplacian, rhs, weight)

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    def objective(self, r) -> float:
        """Weighted sum of squared row residuals ``(r_m - r_n - 1)^2``."""
        r = np.asarray(r, dtype=np.float64)
        res = r[self.rows[:, 0]] - r[self.rows[:, 1]] - 1.0
        return float(self.weight * (res @ res))

    def components(self) -> list[list[int]]:
        """Connected components of the comparison graph, each sorted, ordered by smallest id."""
        _, labels = connected_components(self.laplacian, directed=False)
        groups: dict[int, list[int]] = {}
        for i, lab in enumerate(labels.tolist()):
            groups.setdefault(lab, []).append(i)
        return sorted(groups.values(), key=lambda g: g[0])


@dataclass(frozen=True, eq=False)
class GlobalRanking:
    scores: npt.NDArray[np.float64]
    permutation: tuple[int, ...]
    components: tuple[tuple[int, ...], ...]
    residual: float
    converged: bool = True

    @property
    def K(self) -> int:
        return len(self.permutation)

    def to_dict(self) -> dict:
        return {
            "scores": [float(s) for s in self.scores],
            "permutation": list(self.permutation),
            "components": [list(c) for c in self.components],
            "residual": float(self.residual),
            "converged": bool(self.converged),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> GlobalRanking:
        return cls(np.asarray(obj["scores"], dtype=np.float64), tuple(obj["permutation"]),
                   tuple(tuple(c) for c in obj["components"]), float(obj["residual"]),
                   bool(obj["converged"]))


def build_system(pool: ObservationPool) -> LeastSquaresSystem:
    """Stack one row per observed ordered pair over every batch of every ranker.

    Rows are canonicalised by (ranker tag, shuffle id, subset, pair) so the
    system does not depend on batch order in the pool.
    """
    if not pool.batches:
        raise EmptySystemError("observation pool is empty")
    rows: list[tuple[int, int]] = []
    for batch in sorted(pool.batches, key=lambda b: (b.ranker, b.shuffle_id)):
        build_preference_matrix(batch, pool.K)  # validates disjointness and id range
        for ranking in batch.rankings:
            ids = ranking.item_ids
            rows.extend((m, n) for pos, m in enumerate(ids) for n in ids[pos + 1:])
    if not rows:
        raise EmptySystemError("observation pool holds no comparisons")
    return LeastSquaresSystem.from_rows(pool.K, rows, weight=1.0 / (2 * len(pool.batches)))


def _projected_cg(L: sp.csr_matrix, b: npt.NDArray[np.float64], tol: float,
                  max_iters: int) -> tuple[npt.NDArray[np.float64], float, bool]:
    """CG for a connected Laplacian block, restricted to mean-zero vectors."""
    n = b.shape[0]
    b = b - b.mean()
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0.0, True
    r = b.copy()
    p = r.copy()
    rr = r @ r
    best_x, best_res = x.copy(), np.sqrt(rr)
    converged = False
    for _ in range(max_iters):
        Lp = L @ p
        alpha = rr / (p @ Lp)
        x += alpha * p
        x -= x.mean()
        r -= alpha * Lp
        r -= r.mean()
        rr_new = r @ r
        res = np.sqrt(rr_new)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res / bnorm < tol:
            converged = True
            break
        p = r + (rr_new / rr) * p
        p -= p.mean()
        rr = rr_new
    # recompute the true residual; the recurrence drifts
    return best_x, float(np.linalg.norm(b - L @ best_x)), converged


def _order(scores: npt.NDArray[np.float64], isolated: set[int]) -> tuple[int, ...]:
    ids = np.arange(scores.shape[0])
    iso = np.array([i in isolated for i in ids])
    return tuple(np.lexsort((ids, -scores, iso)).tolist())


def solve_global_ranking(system: LeastSquaresSystem, tol: float = DEFAULT_TOL,
                         max_iters: int | None = None) -> GlobalRanking:
    """Minimise the squared pairwise disagreement, one component at a time.

    Items with no comparisons score 0 and are placed after all compared items.
    A disconnected comparison graph is not an error; scores are only
    comparable within a component and a warning lists the components.
    """
    K = system.K
    if max_iters is None:
        max_iters = 10 * K
    components = system.components()
    if len(components) > 1:
        warnings.warn(f"comparison graph has {len(components)} components: {components}",
                      DisconnectedGraphWarning, stacklevel=2)
    scores = np.zeros(K)
    converged = True
    sq_res = 0.0
    isolated: set[int] = set()
    for comp in components:
        if len(comp) == 1:
            isolated.add(comp[0])
            continue
        idx = np.asarray(comp)
        block = system.laplacian[idx][:, idx]
        x, res, ok = _projected_cg(block, system.rhs[idx], tol, max_iters)
        if not ok:
            log.warning("CG did not reach tol=%g on component of size %d (residual %g)", tol, len(comp), res)
        converged &= ok
        sq_res += res * res
        scores[idx] = x
    return GlobalRanking(scores, _order(scores, isolated), tuple(tuple(c) for c in components),
                         float(np.sqrt(sq_res)), bool(converged))


def aggregate(pool: ObservationPool, tol: float = DEFAULT_TOL) -> GlobalRanking:
    return solve_global_ranking(build_system(pool), tol=tol)


def top_m(ranking: GlobalRanking, m: int) -> list[int]:
    if not 1 <= m <= ranking.K:
        raise InvalidParameterError(f"m={m} must lie in [1, {ranking.K}]")
    return list(ranking.permutation[:m])


def dense_ls_oracle(system: LeastSquaresSystem) -> npt.NDArray[np.float64]:
    """Reference solution via the dense pseudo-inverse of ``L``, mean-zero per component."""
    if system.K > DENSE_ORACLE_MAX_K:
        raise InvalidParameterError(f"dense oracle refuses K={system.K} > {DENSE_ORACLE_MAX_K}")
    r = np.linalg.pinv(system.laplacian.toarray(), hermitian=True) @ system.rhs
    for comp in system.components():
        idx = list(comp)
        r[idx] -= r[idx].mean()
    return r


def align_components(r, components: Sequence[Sequence[int]]) -> npt.NDArray[np.float64]:
    """Subtract each component's mean from ``r``."""
    r = np.array(r, dtype=np.float64)
    for comp in components:
        idx = list(comp)
        r[idx] -= r[idx].mean()
    return r
