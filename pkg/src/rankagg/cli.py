"""Command-line entry point: ``rankagg {simulate,aggregate,train,rank,metrics}``.

Exit status is 0 on success, 1 on a usage error and 2 when input data is
malformed or unreadable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .aggregator import DEFAULT_TOL, aggregate
from .core import ObservationPool, RankingError
from .harness import ExperimentConfig, ExperimentError, parse_int_list, run_experiment
from .metrics import kendall_tau, ndcg, neural_ndcg
from .rankers import LinearListRanker, linear_rank
from .training import RankingDataset, TrainConfig, TrainingDivergedError, train_linear_ranker

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("rankagg")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump_json(obj, out: str | None) -> None:
    _write(json.dumps(obj, sort_keys=True) + "\n", out)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


# config-file key -> (argparse dest, converter)
_SIMULATE_KEYS = {
    "K": ("K", int),
    "k": ("k", parse_int_list),
    "Np": ("Np", int),
    "sigma": ("sigma", float),
    "utility_model": ("utility_model", str),
    "d": ("d", int),
    "seeds": ("seeds", int),
    "seed": ("seed", int),
    "methods": ("methods", lambda v: tuple(v.split(",")) if isinstance(v, str) else tuple(v)),
    "ranker": ("ranker", str),
    "model": ("model", str),
    "corpus_size": ("corpus_size", int),
    "out": ("out", str),
}


def _load_config(path: str) -> dict:
    """Flat ``key = value`` TOML; nested tables are rejected."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    unknown = set(raw) - set(_SIMULATE_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return {_SIMULATE_KEYS[k][0]: _SIMULATE_KEYS[k][1](v) for k, v in raw.items()}


def cmd_simulate(args) -> int:
    if args.config:
        for dest, value in _load_config(args.config).items():
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    if args.seed is None:
        raise UsageError("--seed is required for simulate")
    overrides = {
        "K": args.K, "k_list": args.k, "n_shuffles": args.Np, "sigma": args.sigma,
        "utility_model": args.utility_model, "d": args.d, "seeds": args.seeds, "seed": args.seed,
        "methods": args.methods, "ranker": args.ranker, "model_path": args.model,
        "corpus_size": args.corpus_size, "timing": args.timing or None,
    }
    try:
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    except RankingError as exc:
        raise UsageError(str(exc)) from exc
    report = run_experiment(cfg, dump_dir=args.dump_pool)
    if args.out:
        report.write(args.out)
    else:
        sys.stdout.write(report.to_csv())
    for method, stats in report.summary().items():
        parts = [f"{name}={v['mean']:.4f}+-{v['std']:.4f}" for name, v in stats.items() if v is not None]
        print(f"{method}: " + " ".join(parts), file=sys.stderr)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    pool = ObservationPool.load(args.observations, K=args.K)
    ranking = aggregate(pool, tol=args.tol)
    _dump_json(ranking.to_dict(), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    data = RankingDataset.load(args.data)
    try:
        cfg = TrainConfig(delta=args.delta, tau=args.tau, lr=args.lr, epochs=args.epochs,
                          batch_size=args.batch_size, loss_weights=tuple(_floats(args.weights)), seed=args.seed)
    except RankingError as exc:
        raise UsageError(str(exc)) from exc
    model = train_linear_ranker(data, cfg)
    _dump_json(model.to_dict(), args.out)
    if model.history:
        print(f"final training loss {model.history[-1]:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_rank(args) -> int:
    model = LinearListRanker.load(args.model)
    with open(args.input, encoding="utf-8") as fh:
        obj = json.load(fh)
    ranking = linear_rank(np.asarray(obj["query"]), np.asarray(obj["items"]), model)
    _dump_json({"item_ids": list(ranking.item_ids), "scores": list(ranking.scores)}, args.out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    out = {}
    pred = parse_int_list(args.pred) if args.pred else None
    if args.truth:
        if pred is None:
            raise UsageError("--truth needs --pred")
        out["kendall_tau"] = kendall_tau(pred, parse_int_list(args.truth))
    if args.relevance:
        rel = _floats(args.relevance)
        if pred is not None:
            out["ndcg"] = ndcg(pred, rel)
        if args.scores:
            out["neural_ndcg"] = neural_ndcg(_floats(args.scores), rel, args.tau)
    if not out:
        raise UsageError("nothing to compute: give --pred with --truth and/or --relevance")
    _dump_json(out, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankagg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run naive vs aggregated selection on synthetic worlds")
    p.add_argument("--config", help="flat key = value TOML file; flags override it")
    p.add_argument("--K", type=int)
    p.add_argument("--k", type=parse_int_list, help="comma-separated subset lengths, e.g. 5,10")
    p.add_argument("--Np", type=int, help="shuffles per ranker")
    p.add_argument("--sigma", type=float)
    p.add_argument("--utility-model", dest="utility_model", choices=["dot", "random"])
    p.add_argument("--d", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--methods", type=lambda s: tuple(s.split(",")))
    p.add_argument("--ranker", choices=["noisy", "oracle", "linear"])
    p.add_argument("--model", help="model JSON for --ranker linear")
    p.add_argument("--corpus-size", dest="corpus_size", type=int)
    p.add_argument("--timing", action="store_true", help="fill wall_time_ms (output is then not reproducible)")
    p.add_argument("--dump-pool", dest="dump_pool", help="directory for per-seed pools and rankings")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("aggregate", help="observation JSONL -> global ranking JSON")
    p.add_argument("--observations", required=True)
    p.add_argument("--K", type=int, help="number of items (default: largest id + 1)")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("train", help="dataset JSONL -> linear ranker JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--weights", default="1,1,1", help="margin,sort,reg loss weights")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="order items with a trained linear ranker")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help='JSON {"query": [...], "items": [[...], ...]}')
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("metrics", help="Kendall tau / NDCG / NeuralNDCG")
    p.add_argument("--pred", help="predicted order, comma-separated ids best first")
    p.add_argument("--truth", help="reference order, comma-separated ids best first")
    p.add_argument("--relevance", help="non-negative relevance per id")
    p.add_argument("--scores", help="predicted scores per id, for NeuralNDCG")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rankagg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RankingError, TrainingDivergedError, ExperimentError, OSError, KeyError, ValueError,
            json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        print(f"rankagg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
