"""Seeded experiments comparing naive tournament selection with least-squares aggregation."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .aggregator import aggregate
from .core import DEFAULT_SHUFFLES, AlternativeSet, InvalidParameterError, collect_pool
from .metrics import ideal_order, kendall_tau, top1_regret
from .rankers import LinearListRanker, NoisyRanker, OracleRanker
from .tournament import naive_tournament
from .world import DEFAULT_K, make_synthetic_world, retrieve_alternatives

log = logging.getLogger(__name__)

CSV_HEADER = ("seed", "method", "kendall_tau", "top1_regret", "ranker_calls", "wall_time_ms")
METHODS = ("naive", "aggregate")
RANKER_KINDS = ("noisy", "oracle", "linear")
THREADS_ENV = "P2G_THREADS"

# Thurstone scale at which a noisy ranker's Kendall tau on a random 10-item
# subset of a K=50, d=4 ``dot`` world averages 0.70. Produced by
# ``calibrate_sigma(0.7)``; the harness tests re-run the sweep.
CALIBRATED_SIGMA = 0.132
DEFAULT_DIM = 4


class ExperimentError(RuntimeError):
    """A method failed on one seed; the message names both."""


@dataclass(frozen=True)
class ExperimentConfig:
    K: int = DEFAULT_K
    k_list: tuple[int, ...] = (5, 10)
    n_shuffles: int = DEFAULT_SHUFFLES
    sigma: float = CALIBRATED_SIGMA
    utility_model: str = "dot"
    d: int = DEFAULT_DIM
    seeds: int = 10
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    ranker: str = "noisy"
    model_path: str | None = None
    corpus_size: int = 0        # > K: draw a corpus this large and retrieve the K most similar
    timing: bool = False        # wall_time_ms is 0 unless set, keeping reports reproducible

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.k_list or min(self.k_list) < 2 or self.K < max(self.k_list):
            raise InvalidParameterError(f"need 2 <= k <= K for every k in {self.k_list} (K={self.K})")
        if self.seeds < 1 or self.n_shuffles < 1:
            raise InvalidParameterError("seeds and n_shuffles must be >= 1")
        if self.sigma < 0:
            raise InvalidParameterError("sigma must be >= 0")
        if not self.methods or set(self.methods) - set(METHODS):
            raise InvalidParameterError(f"methods must be a non-empty subset of {METHODS}")
        if self.ranker not in RANKER_KINDS:
            raise InvalidParameterError(f"ranker must be one of {RANKER_KINDS}")
        if self.ranker == "linear" and not self.model_path:
            raise InvalidParameterError("the linear ranker needs model_path")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class ReportRow:
    seed: int
    method: str
    kendall_tau: float | None
    top1_regret: float
    ranker_calls: int
    wall_time_ms: float = 0.0

    def as_csv(self) -> list[str]:
        tau = "" if self.kendall_tau is None else repr(float(self.kendall_tau))
        return [str(self.seed), self.method, tau, repr(float(self.top1_regret)), str(self.ranker_calls),
                repr(float(self.wall_time_ms))]


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[ReportRow] = field(default_factory=list)

    def by_method(self, method: str) -> list[ReportRow]:
        return [r for r in self.rows if r.method == method]

    def column(self, method: str, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.by_method(method)], dtype=np.float64)

    def summary(self) -> dict:
        out = {}
        for method in self.config.methods:
            entry = {}
            for name in ("kendall_tau", "top1_regret", "ranker_calls"):
                vals = [getattr(r, name) for r in self.by_method(method)]
                if any(v is None for v in vals):
                    entry[name] = None
                    continue
                arr = np.asarray(vals, dtype=np.float64)
                entry[name] = {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}
            out[method] = entry
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.as_csv())
        return buf.getvalue()

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        path.with_name(path.name + ".summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _subseed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def build_world(cfg: ExperimentConfig, seed_index: int) -> AlternativeSet:
    world_seed = _subseed(cfg.seed, seed_index, 0)
    if cfg.corpus_size > cfg.K:
        corpus = make_synthetic_world(cfg.corpus_size, cfg.d, cfg.utility_model, world_seed)
        return retrieve_alternatives(corpus.query, corpus.items, cfg.K)
    return make_synthetic_world(cfg.K, cfg.d, cfg.utility_model, world_seed)


def make_ranker(cfg: ExperimentConfig):
    if cfg.ranker == "oracle":
        return OracleRanker()
    if cfg.ranker == "linear":
        return LinearListRanker.load(cfg.model_path)
    return NoisyRanker(cfg.sigma)


def run_seed(cfg: ExperimentConfig, seed_index: int, ranker=None, dump_dir: Path | None = None) -> list[ReportRow]:
    """All configured methods on one world; the world and each method's streams depend only on (cfg.seed, seed_index)."""
    ranker = ranker if ranker is not None else make_ranker(cfg)
    world = build_world(cfg, seed_index)
    util = world.utilities()
    truth = ideal_order(util)
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "naive":
                trace = naive_tournament(world, ranker, max(cfg.k_list), seed=_subseed(cfg.seed, seed_index, 2))
                tau, chosen, calls = None, trace.winner, trace.ranker_calls
            else:
                # larger k first: ranker index 0 keeps the same streams across k_list variants
                ks = sorted(cfg.k_list, reverse=True)
                pool = collect_pool(world, [ranker] * len(ks), ks, cfg.n_shuffles,
                                    seed=_subseed(cfg.seed, seed_index, 1),
                                    tags=[f"{ranker.name}@{k}" for k in ks])
                ranking = aggregate(pool)
                tau, chosen, calls = kendall_tau(ranking.permutation, truth), ranking.permutation[0], pool.ranker_calls
                if dump_dir is not None:
                    pool.dump(dump_dir / f"pool_{seed_index:04d}.jsonl")
                    (dump_dir / f"ranking_{seed_index:04d}.json").write_text(ranking.to_json() + "\n", encoding="utf-8")
        except Exception as exc:
            raise ExperimentError(f"seed {seed_index}, method {method}: {exc}") from exc
        elapsed = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
        rows.append(ReportRow(seed_index, method, tau, top1_regret(int(chosen), util), int(calls), elapsed))
    return rows


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, env)
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, dump_dir=None, workers: int | None = None) -> ExperimentReport:
    """Run every method on ``cfg.seeds`` independent worlds; rows sorted by (seed, method order)."""
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
    ranker = make_ranker(cfg)
    workers = workers or worker_count()
    if workers > 1 and cfg.seeds > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(lambda s: run_seed(cfg, s, ranker, dump_dir), range(cfg.seeds)))
    else:
        chunks = [run_seed(cfg, s, ranker, dump_dir) for s in range(cfg.seeds)]
    return ExperimentReport(cfg, [row for chunk in chunks for row in chunk])


def subset_agreement(sigma: float, statistic: str = "tau", K: int = DEFAULT_K, k: int = 10,
                     d: int = DEFAULT_DIM, utility_model: str = "dot", n_worlds: int = 200,
                     seed: int = 12345) -> float:
    """How well a noisy ranker orders a random k-subset, averaged over worlds.

    ``statistic`` is ``tau`` (Kendall tau against the true order) or ``top1``
    (probability the true best item is ranked first).
    """
    if statistic not in ("tau", "top1"):
        raise InvalidParameterError(f"unknown statistic {statistic!r}")
    rng = np.random.default_rng(seed)
    vals = []
    for w in range(n_worlds):
        util = make_synthetic_world(K, d, utility_model, _subseed(seed, w)).utilities()
        sub = util[rng.choice(K, size=k, replace=False)]
        noisy = sub + sigma * rng.standard_normal(k)
        if statistic == "tau":
            vals.append(kendall_tau(ideal_order(noisy), ideal_order(sub)))
        else:
            vals.append(float(np.argmax(noisy) == np.argmax(sub)))
    return float(np.mean(vals))


def calibrate_sigma(target: float = 0.7, statistic: str = "tau", lo: float = 0.0, hi: float = 2.0,
                    iters: int = 30, **kw) -> float:
    """Bisect for the sigma at which ``subset_agreement`` equals ``target``.

    The same random draws are reused at every sigma, so the curve being
    bisected is a deterministic function of sigma.
    """
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if subset_agreement(mid, statistic, **kw) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def config_with(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)


def parse_int_list(text: str | Sequence[int]) -> tuple[int, ...]:
    if isinstance(text, str):
        return tuple(int(t) for t in text.split(",") if t.strip())
    return tuple(int(t) for t in text)
