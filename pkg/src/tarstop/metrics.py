"""Recall, cost, and excess metrics plus CSV reporting.

Cost is stored as a proportion of the collection throughout; rendering it
as a percentage is the report consumer's business. Excess normalizes the
gap to the ideal stopping cost: 0 means the method stopped exactly where an
oracle would, positive means overshoot, negative undershoot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .corpus import TARGET_EPS, Topic
from .errors import ConfigError, ParseError

PER_TOPIC_HEADER = (
    "method",
    "target",
    "topic_id",
    "N",
    "R",
    "docs_examined",
    "relevant_found",
    "recall",
    "cost",
    "excess",
)
AGGREGATE_HEADER = ("method", "target", "mean_recall", "mean_cost", "mean_excess", "pareto_flag")
RESULTS_HEADER = ("topic_id", "method", "target", "stop_batch", "docs_examined", "relevant_found")

# When the ideal stop is the full collection the excess denominator vanishes;
# a method that also reads everything scores 0, anything earlier scores its
# cost shortfall (cost - 1, necessarily negative).
EXCESS_FOOTER = (
    "# excess convention: when the optimal stop is the full collection, "
    "excess = 0 if the method also examines everything, else cost - 1"
)


@dataclass(frozen=True)
class StopResult:
    """One stopping decision on one topic."""

    topic_id: str
    method: str
    target_recall: float | None
    docs_examined: int
    relevant_found: int | None
    stop_batch: int | None = None


def optimal_stop_rank(topic: Topic, target_recall: float) -> int:
    """Smallest rank whose cumulative recall meets the target."""
    if not 0.0 < target_recall <= 1.0:
        raise ConfigError(f"target recall must be in (0, 1], got {target_recall}")
    if topic.n_relevant == 0:
        raise ValueError(f"topic {topic.topic_id!r}: optimal rank undefined, no relevant documents")
    need = target_recall * topic.n_relevant - TARGET_EPS
    return int(np.searchsorted(np.cumsum(topic.labels), need, side="left")) + 1


def _check(result: StopResult, topic: Topic) -> None:
    if result.topic_id != topic.topic_id:
        raise ValueError(f"result is for {result.topic_id!r}, topic is {topic.topic_id!r}")
    if not 1 <= result.docs_examined <= topic.n_docs:
        raise ValueError(
            f"topic {topic.topic_id!r}: docs_examined {result.docs_examined} "
            f"outside [1, {topic.n_docs}]"
        )


def resolve_relevant_found(result: StopResult, topic: Topic) -> StopResult:
    """Fill relevant_found from the labels when an imported row lacks it."""
    if result.relevant_found is not None:
        return result
    found = int(np.cumsum(topic.labels)[result.docs_examined - 1])
    return StopResult(
        result.topic_id, result.method, result.target_recall,
        result.docs_examined, found, result.stop_batch,
    )


def recall_of(result: StopResult, topic: Topic) -> float:
    _check(result, topic)
    if result.relevant_found is None:
        raise ValueError(f"topic {topic.topic_id!r}: relevant_found missing; resolve it first")
    if not 0 <= result.relevant_found <= topic.n_relevant:
        raise ValueError(
            f"topic {topic.topic_id!r}: relevant_found {result.relevant_found} "
            f"outside [0, {topic.n_relevant}]"
        )
    return result.relevant_found / topic.n_relevant


def cost_of(result: StopResult, topic: Topic) -> float:
    _check(result, topic)
    return result.docs_examined / topic.n_docs


def excess_of(result: StopResult, topic: Topic, target_recall: float) -> float:
    """Cost overshoot past the ideal stop, normalized by the attainable room."""
    _check(result, topic)
    optimal_cost = optimal_stop_rank(topic, target_recall) / topic.n_docs
    cost = cost_of(result, topic)
    if optimal_cost >= 1.0:
        return 0.0 if cost >= 1.0 else cost - 1.0
    return (cost - optimal_cost) / (1.0 - optimal_cost)


@dataclass(frozen=True)
class TopicMetrics:
    method: str
    target_recall: float
    topic_id: str
    n_docs: int
    n_relevant: int
    docs_examined: int
    relevant_found: int
    recall: float
    cost: float
    excess: float


@dataclass(frozen=True)
class MethodSummary:
    method: str
    target_recall: float
    n_topics: int
    mean_recall: float
    mean_cost: float
    mean_excess: float
    pareto_optimal: bool
    excess_values: tuple[float, ...]


@dataclass(frozen=True)
class MetricsReport:
    per_topic: tuple[TopicMetrics, ...]
    summaries: tuple[MethodSummary, ...]


def aggregate(results: list[StopResult], topics: list[Topic]) -> MetricsReport:
    """Per-topic metrics plus per-(method, target) means and Pareto flags.

    A method is Pareto-optimal at a target when no other method reaches at
    least its mean recall at no more than its mean cost, with one strict.
    """
    by_id = {t.topic_id: t for t in topics}
    rows = []
    for result in results:
        topic = by_id.get(result.topic_id)
        if topic is None:
            raise ConfigError(f"result references unknown topic {result.topic_id!r}")
        if result.target_recall is None:
            raise ConfigError(
                f"result for topic {result.topic_id!r} (method {result.method!r}) "
                "has no target recall"
            )
        result = resolve_relevant_found(result, topic)
        rows.append(
            TopicMetrics(
                method=result.method,
                target_recall=result.target_recall,
                topic_id=result.topic_id,
                n_docs=topic.n_docs,
                n_relevant=topic.n_relevant,
                docs_examined=result.docs_examined,
                relevant_found=result.relevant_found,
                recall=recall_of(result, topic),
                cost=cost_of(result, topic),
                excess=excess_of(result, topic, result.target_recall),
            )
        )
    rows.sort(key=lambda r: (r.target_recall, r.method, r.topic_id))
    grouped: dict[tuple[str, float], list[TopicMetrics]] = {}
    for row in rows:
        grouped.setdefault((row.method, row.target_recall), []).append(row)
    means = {
        key: (
            float(np.mean([r.recall for r in group])),
            float(np.mean([r.cost for r in group])),
            float(np.mean([r.excess for r in group])),
        )
        for key, group in grouped.items()
    }
    summaries = []
    for (method, target), group in grouped.items():
        mean_recall, mean_cost, mean_excess = means[(method, target)]
        dominated = any(
            other != (method, target)
            and other[1] == target
            and means[other][0] >= mean_recall
            and means[other][1] <= mean_cost
            and (means[other][0] > mean_recall or means[other][1] < mean_cost)
            for other in means
        )
        summaries.append(
            MethodSummary(
                method=method,
                target_recall=target,
                n_topics=len(group),
                mean_recall=mean_recall,
                mean_cost=mean_cost,
                mean_excess=mean_excess,
                pareto_optimal=not dominated,
                excess_values=tuple(r.excess for r in group),
            )
        )
    summaries.sort(key=lambda s: (s.target_recall, s.method))
    return MetricsReport(tuple(rows), tuple(summaries))


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_per_topic_csv(path, report: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PER_TOPIC_HEADER)
        for r in report.per_topic:
            writer.writerow(
                [
                    r.method,
                    _fmt(r.target_recall),
                    r.topic_id,
                    r.n_docs,
                    r.n_relevant,
                    r.docs_examined,
                    r.relevant_found,
                    _fmt(r.recall),
                    _fmt(r.cost),
                    _fmt(r.excess),
                ]
            )


def write_aggregate_csv(path, report: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        for s in report.summaries:
            writer.writerow(
                [
                    s.method,
                    _fmt(s.target_recall),
                    _fmt(s.mean_recall),
                    _fmt(s.mean_cost),
                    _fmt(s.mean_excess),
                    int(s.pareto_optimal),
                ]
            )
        fh.write(EXCESS_FOOTER + "\n")


def write_results_csv(path, results: list[StopResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in results:
            writer.writerow(
                [
                    r.topic_id,
                    r.method,
                    "" if r.target_recall is None else _fmt(r.target_recall),
                    "" if r.stop_batch is None else r.stop_batch,
                    r.docs_examined,
                    "" if r.relevant_found is None else r.relevant_found,
                ]
            )


def read_results_csv(path) -> list[StopResult]:
    """Read stopping results, either this package's schema or the minimal
    external one (topic_id, method, docs_examined)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty results file")
        fields = set(reader.fieldnames)
        for required in ("topic_id", "method", "docs_examined"):
            if required not in fields:
                raise ConfigError(f"{path}: missing required column {required!r}")
        results = []
        for lineno, row in enumerate(reader, start=2):
            try:
                docs = int(row["docs_examined"])
            except (TypeError, ValueError):
                raise ParseError(
                    f"{path} line {lineno}: docs_examined {row.get('docs_examined')!r} "
                    "is not an integer"
                ) from None
            target = row.get("target") or None
            relevant = row.get("relevant_found") or None
            stop_batch = row.get("stop_batch") or None
            results.append(
                StopResult(
                    topic_id=row["topic_id"],
                    method=row["method"],
                    target_recall=float(target) if target is not None else None,
                    docs_examined=docs,
                    relevant_found=int(relevant) if relevant is not None else None,
                    stop_batch=int(stop_batch) if stop_batch is not None else None,
                )
            )
    return results
