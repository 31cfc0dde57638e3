"""Command-line entry point: synthesize data, train, infer, run baselines, evaluate.

Configuration precedence is CLI flag, then --config JSON file, then the
built-in defaults. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import budget_stop, knee_stop, oracle_stop
from .corpus import (
    assemble_topics,
    batch_topic,
    load_qrels,
    load_run,
    synth_topics,
    write_qrels_file,
    write_run_file,
)
from .errors import ConfigError, ParseError
from .metrics import (
    aggregate,
    read_results_csv,
    write_aggregate_csv,
    write_per_topic_csv,
    write_results_csv,
)
from .ppo import Hyperparams, infer_stop, load_checkpoint, save_checkpoint, train, write_training_log

DEFAULT_TARGETS = [0.8, 0.9, 1.0]
DEFAULT_BATCHES = 100

HYPER_KEYS = (
    "n_steps",
    "minibatch_size",
    "learning_rate",
    "n_epochs",
    "entropy_coef",
    "gamma",
    "clip_range",
    "gae_lambda",
    "value_coef",
    "n_envs",
    "max_grad_norm",
)


def _load_config(path) -> dict:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {config_path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {config_path}: expected a JSON object")
    return data


def _resolve(args, config: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _check_targets(targets: list[float]) -> list[float]:
    for t in targets:
        if not 0.0 < t <= 1.0:
            raise ConfigError(f"target recall must be in (0, 1], got {t}")
    return targets


def _load_topics(run_path, qrels_path):
    run_file = _require_file(run_path, "run file")
    qrels_file = _require_file(qrels_path, "qrels file")
    topics = assemble_topics(load_run(run_file), load_qrels(qrels_file))
    if not topics:
        raise ConfigError("no usable topics (all empty or without relevant documents)")
    return topics


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    count = _resolve(args, config, "count", 20)
    docs = _resolve(args, config, "docs", 1000)
    prevalence = _resolve(args, config, "prevalence", 0.02)
    decay = _resolve(args, config, "decay", 100.0)
    seed = _resolve(args, config, "seed", 0)
    tag = _resolve(args, config, "tag", "tarstop-synth")
    topics = synth_topics(count, docs, prevalence, decay, seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_path = out_dir / "synthetic.run"
    qrels_path = out_dir / "synthetic.qrels"
    write_run_file(run_path, topics, tag)
    write_qrels_file(qrels_path, topics)
    mean_prevalence = float(np.mean([t.n_relevant / t.n_docs for t in topics]))
    print(f"wrote {len(topics)} topics ({docs} docs each, mean prevalence "
          f"{mean_prevalence:.4f}) to {run_path} and {qrels_path}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    topics = _load_topics(args.run, args.qrels)
    targets = _check_targets(_resolve(args, config, "target", DEFAULT_TARGETS))
    batches = _resolve(args, config, "batches", DEFAULT_BATCHES)
    normalize = _resolve(args, config, "normalize_obs", "ratio")
    hyper_kwargs = {key: _resolve(args, config, key, None) for key in HYPER_KEYS}
    hyper_kwargs = {k: v for k, v in hyper_kwargs.items() if v is not None}
    hyper_kwargs["total_timesteps"] = _resolve(args, config, "timesteps", 100_000)
    hyper_kwargs["seed"] = _resolve(args, config, "seed", 0)
    hyper = Hyperparams(**hyper_kwargs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for target in targets:
        checkpoint, rows = train(topics, target, hyper, n_batches=batches, normalize=normalize)
        ckpt_path = out_dir / f"policy-t{target:g}.json"
        log_path = out_dir / f"train-log-t{target:g}.csv"
        save_checkpoint(checkpoint, ckpt_path)
        write_training_log(log_path, rows)
        last = rows[-1]
        print(f"target {target:g}: {len(rows)} iterations, "
              f"final mean stop batch {last['mean_stop_batch']:.2f}, "
              f"mean episode reward {last['mean_ep_reward']:.3f} -> {ckpt_path}")
    return 0


def cmd_stop(args) -> int:
    config = _load_config(args.config)
    checkpoint = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    batches = _resolve(args, config, "batches", None)
    if batches is not None and batches != checkpoint.n_batches:
        raise ConfigError(
            f"--batches {batches} does not match checkpoint batch count {checkpoint.n_batches}"
        )
    mode = _resolve(args, config, "mode", "greedy")
    seed = _resolve(args, config, "seed", 0)
    topics = _load_topics(args.run, args.qrels)
    rng = np.random.default_rng(seed)
    results = []
    for topic in topics:
        bt = batch_topic(topic, checkpoint.n_batches)
        results.append(infer_stop(checkpoint, bt, mode=mode, rng=rng))
    write_results_csv(args.out, results)
    mean_batch = float(np.mean([r.stop_batch for r in results]))
    print(f"wrote {len(results)} stopping decisions (mean stop batch {mean_batch:.2f}) to {args.out}")
    return 0


def cmd_baseline(args) -> int:
    config = _load_config(args.config)
    targets = _check_targets(_resolve(args, config, "target", DEFAULT_TARGETS))
    batches = _resolve(args, config, "batches", DEFAULT_BATCHES)
    fraction = _resolve(args, config, "fraction", 0.5)
    topics = _load_topics(args.run, args.qrels)
    results = []
    for topic in topics:
        if args.method == "oracle":
            results.extend(oracle_stop(topic, t) for t in targets)
        elif args.method == "knee":
            base = knee_stop(batch_topic(topic, batches))
            results.extend(dataclasses.replace(base, target_recall=t) for t in targets)
        else:
            base = budget_stop(topic, fraction)
            results.extend(dataclasses.replace(base, target_recall=t) for t in targets)
    write_results_csv(args.out, results)
    print(f"wrote {len(results)} {args.method} decisions "
          f"({len(topics)} topics x {len(targets)} targets) to {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    targets = _resolve(args, config, "target", None)
    if targets is not None:
        _check_targets(targets)
    topics = _load_topics(args.run, args.qrels)
    results = []
    for path in args.results:
        results.extend(read_results_csv(_require_file(path, "results file")))
    if not results:
        raise ConfigError("results files contain no rows")
    resolved = []
    for result in results:
        if result.target_recall is None:
            if not targets:
                raise ConfigError(
                    f"results for method {result.method!r} carry no target recall; pass --target"
                )
            resolved.extend(dataclasses.replace(result, target_recall=t) for t in targets)
        else:
            resolved.append(result)
    report = aggregate(resolved, topics)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_topic_path = out_dir / "per_topic.csv"
    aggregate_path = out_dir / "aggregate.csv"
    write_per_topic_csv(per_topic_path, report)
    write_aggregate_csv(aggregate_path, report)
    for s in report.summaries:
        flag = " pareto" if s.pareto_optimal else ""
        print(f"{s.method:>10s} @ {s.target_recall:g}: recall {s.mean_recall:.3f}, "
              f"cost {s.mean_cost:.3f}, excess {s.mean_excess:+.3f}{flag}")
    print(f"wrote {per_topic_path} and {aggregate_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tarstop",
        description="Train and evaluate stopping rules for ranked document review.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with key/value defaults")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic run/qrels pair")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, help="number of topics (default 20)")
    p.add_argument("--docs", type=int, help="documents per topic (default 1000)")
    p.add_argument("--prevalence", type=float, help="expected relevant fraction (default 0.02)")
    p.add_argument("--decay", type=float, help="rank decay of relevance density (default 100)")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--tag", help="run tag column value")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train one policy per target recall")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--target", type=float, action="append",
                   help="target recall, repeatable (default 0.8 0.9 1.0)")
    p.add_argument("--batches", type=int, help=f"ranking batch count (default {DEFAULT_BATCHES})")
    p.add_argument("--timesteps", type=int, help="total training transitions (default 100000)")
    p.add_argument("--seed", type=int, help="training seed (default 0)")
    p.add_argument("--normalize-obs", dest="normalize_obs", choices=["ratio", "count"],
                   help="observation entries as per-batch ratios or raw counts (default ratio)")
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--minibatch-size", dest="minibatch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--n-epochs", dest="n_epochs", type=int)
    p.add_argument("--entropy-coef", dest="entropy_coef", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--clip-range", dest="clip_range", type=float)
    p.add_argument("--gae-lambda", dest="gae_lambda", type=float)
    p.add_argument("--value-coef", dest="value_coef", type=float)
    p.add_argument("--n-envs", dest="n_envs", type=int)
    p.add_argument("--max-grad-norm", dest="max_grad_norm", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stop", parents=[common], help="apply a trained policy to a collection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--mode", choices=["greedy", "sample"])
    p.add_argument("--seed", type=int, help="seed for sample mode")
    p.add_argument("--batches", type=int, help="must match the checkpoint if given")
    p.set_defaults(func=cmd_stop)

    p = sub.add_parser("baseline", parents=[common], help="run a reference stopping strategy")
    p.add_argument("--method", required=True, choices=["oracle", "knee", "budget"])
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--target", type=float, action="append",
                   help="target recall label(s) for the rows (default 0.8 0.9 1.0)")
    p.add_argument("--batches", type=int, help="knee evaluation schedule (default 100)")
    p.add_argument("--fraction", type=float, help="budget fraction (default 0.5)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", parents=[common], help="score stopping results against qrels")
    p.add_argument("--results", action="append", required=True,
                   help="stopping-results CSV, repeatable; minimal schema "
                        "(topic_id, method, docs_examined) is accepted")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True, help="output directory for report CSVs")
    p.add_argument("--target", type=float, action="append",
                   help="target(s) stamped onto imported rows that lack one")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
