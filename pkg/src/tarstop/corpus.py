"""Ranked topics with relevance judgements: parsing, batching, synthesis.

Input formats are the usual retrieval interchange files:

- qrels: ``topic iteration doc_id relevance`` (whitespace separated;
  relevance > 0 is treated as relevant, everything else as not)
- run:   ``topic Q0 doc_id rank score tag``

A parsed topic is a ranking plus aligned binary labels. For the stopping
task the ranking is cut into contiguous, near-equal batches; the per-batch
relevant counts are what the stopping agent gets to observe.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError

log = logging.getLogger(__name__)

# Slack applied to target_recall * n_relevant so decimal targets (0.9, ...)
# don't miss an exact threshold through float rounding.
TARGET_EPS = 1e-9


@dataclass(frozen=True)
class Topic:
    """A ranked document list with aligned binary relevance labels."""

    topic_id: str
    ranking: tuple[str, ...]
    labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranking", tuple(self.ranking))
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if len(self.ranking) == 0:
            raise ValueError(f"topic {self.topic_id!r}: empty ranking")
        if len(set(self.ranking)) != len(self.ranking):
            raise ValueError(f"topic {self.topic_id!r}: duplicate doc ids in ranking")
        if labels.shape != (len(self.ranking),):
            raise ValueError(
                f"topic {self.topic_id!r}: {len(labels)} labels for {len(self.ranking)} documents"
            )
        if not np.isin(labels, (0, 1)).all():
            raise ValueError(f"topic {self.topic_id!r}: labels must be binary")

    @property
    def n_docs(self) -> int:
        return len(self.ranking)

    @property
    def n_relevant(self) -> int:
        return int(self.labels.sum())


@dataclass(frozen=True)
class BatchedTopic:
    """A topic split into contiguous batches whose sizes differ by at most one.

    The leftover of an uneven split goes to the earliest batches, so early
    stopping points stay conservative and the split is deterministic.
    """

    topic: Topic
    batch_sizes: np.ndarray
    batch_rel: np.ndarray
    cum_rel: np.ndarray

    @property
    def n_batches(self) -> int:
        return len(self.batch_sizes)

    def target_batch(self, target_recall: float) -> int:
        """1-based index of the first batch at which the target recall is met."""
        if not 0.0 < target_recall <= 1.0:
            raise ConfigError(f"target recall must be in (0, 1], got {target_recall}")
        if self.topic.n_relevant == 0:
            raise ValueError(
                f"topic {self.topic.topic_id!r}: target batch undefined, no relevant documents"
            )
        need = target_recall * self.topic.n_relevant - TARGET_EPS
        return int(np.searchsorted(self.cum_rel, need, side="left")) + 1


def batch_topic(topic: Topic, n_batches: int) -> BatchedTopic:
    """Split a topic into ``n_batches`` contiguous batches.

    With ``n = n_docs`` the first ``n mod n_batches`` batches get
    ``ceil(n / n_batches)`` documents, the rest ``floor(n / n_batches)``.
    A batch count above ``n_docs`` is clamped to ``n_docs`` with a warning.
    """
    if n_batches < 1:
        raise ConfigError(f"batch count must be >= 1, got {n_batches}")
    n = topic.n_docs
    if n_batches > n:
        log.warning(
            "topic %s: %d batches requested for %d documents, clamping to %d",
            topic.topic_id, n_batches, n, n,
        )
        n_batches = n
    base, extra = divmod(n, n_batches)
    sizes = np.full(n_batches, base, dtype=np.int64)
    sizes[:extra] += 1
    ends = np.cumsum(sizes)
    starts = ends - sizes
    batch_rel = np.add.reduceat(topic.labels, starts)
    return BatchedTopic(topic, sizes, batch_rel, np.cumsum(batch_rel))


def target_batch(bt: BatchedTopic, target_recall: float) -> int:
    return bt.target_batch(target_recall)


def parse_qrels(text: str) -> dict[str, dict[str, int]]:
    """Parse qrels content into ``{topic_id: {doc_id: 0 or 1}}``.

    Graded relevance collapses to binary (> 0 means relevant). A repeated
    (topic, doc) pair overwrites the earlier judgement.
    """
    judgements: dict[str, dict[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4:
            raise ParseError(
                f"qrels line {lineno}: expected 'topic iteration doc relevance', got {raw!r}"
            )
        topic_id, doc_id, rel_field = parts[0], parts[2], parts[3]
        try:
            rel = int(rel_field)
        except ValueError:
            raise ParseError(
                f"qrels line {lineno}: relevance {rel_field!r} is not an integer"
            ) from None
        judgements.setdefault(topic_id, {})[doc_id] = 1 if rel > 0 else 0
    return judgements


def parse_run(text: str) -> dict[str, list[str]]:
    """Parse run content into ``{topic_id: [doc_id, ...]}`` in rank order.

    Documents are ordered by ascending rank; ties break by descending score,
    then lexicographic doc id. A document may appear only once per topic.
    """
    rows: dict[str, list[tuple[int, float, str]]] = {}
    seen: dict[str, set[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 6:
            raise ParseError(
                f"run line {lineno}: expected 'topic Q0 doc rank score tag', got {raw!r}"
            )
        topic_id, doc_id, rank_field, score_field = parts[0], parts[2], parts[3], parts[4]
        try:
            rank = int(rank_field)
        except ValueError:
            raise ParseError(f"run line {lineno}: rank {rank_field!r} is not an integer") from None
        try:
            score = float(score_field)
        except ValueError:
            raise ParseError(f"run line {lineno}: score {score_field!r} is not a number") from None
        if doc_id in seen.setdefault(topic_id, set()):
            raise ParseError(
                f"run line {lineno}: duplicate document {doc_id!r} for topic {topic_id!r}"
            )
        seen[topic_id].add(doc_id)
        rows.setdefault(topic_id, []).append((rank, score, doc_id))
    return {
        topic_id: [doc for _, _, doc in sorted(entries, key=lambda e: (e[0], -e[1], e[2]))]
        for topic_id, entries in rows.items()
    }


def assemble_topics(run: dict[str, list[str]], qrels: dict[str, dict[str, int]]) -> list[Topic]:
    """Join a parsed run with qrels into labelled topics.

    Documents absent from the qrels are labelled 0. Topics whose ranking
    contains no relevant document are dropped with a warning since recall is
    undefined for them.
    """
    for topic_id in qrels:
        if topic_id not in run:
            log.warning("qrels topic %s not in run; ignored", topic_id)
    topics = []
    for topic_id, ranking in run.items():
        if topic_id not in qrels:
            raise ConfigError(f"run topic {topic_id!r} has no qrels entry")
        judged = qrels[topic_id]
        labels = np.fromiter(
            (judged.get(doc, 0) for doc in ranking), dtype=np.int64, count=len(ranking)
        )
        if labels.sum() == 0:
            log.warning("topic %s: no relevant documents, excluded (recall undefined)", topic_id)
            continue
        topics.append(Topic(topic_id, tuple(ranking), labels))
    return topics


def load_qrels(path) -> dict[str, dict[str, int]]:
    with open(path, encoding="utf-8") as fh:
        return parse_qrels(fh.read())


def load_run(path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        return parse_run(fh.read())


def rank_relevance_probs(n_docs: int, prevalence: float, decay: float) -> np.ndarray:
    """Per-rank relevance probabilities for the synthetic generator.

    ``p(r) = min(1, c * exp(-r / decay))`` with the coefficient solved so the
    expected relevant count equals ``prevalence * n_docs``. Small decay means
    strongly front-loaded relevance; decay >> n_docs approaches a uniform
    ``prevalence`` everywhere.
    """
    if n_docs < 1:
        raise ConfigError(f"n_docs must be >= 1, got {n_docs}")
    if not 0.0 < prevalence < 1.0:
        raise ConfigError(f"prevalence must be in (0, 1), got {prevalence}")
    if decay <= 0.0:
        raise ConfigError(f"decay must be positive, got {decay}")
    ranks = np.arange(1, n_docs + 1, dtype=np.float64)
    expected = prevalence * n_docs
    # Uncapped solution saturating the whole list means the decay shape is
    # meaningless at this prevalence.
    log_c0 = math.log(expected) - _logsumexp(-ranks / decay)
    if log_c0 - n_docs / decay > 0.0:
        raise ConfigError(
            f"prevalence {prevalence} infeasible for decay {decay}: "
            "relevance probability would exceed 1 at every rank"
        )

    def expected_count(log_c: float) -> float:
        return float(np.exp(np.minimum(0.0, log_c - ranks / decay)).sum())

    lo, hi = -800.0, n_docs / decay  # expected_count: ~0 at lo, n_docs at hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_count(mid) < expected:
            lo = mid
        else:
            hi = mid
    return np.exp(np.minimum(0.0, hi - ranks / decay))


def _logsumexp(x: np.ndarray) -> float:
    m = float(x.max())
    return m + math.log(float(np.exp(x - m).sum()))


def synth_topics(count: int, n_docs: int, prevalence: float, decay: float, seed: int) -> list[Topic]:
    """Generate ``count`` front-loaded synthetic topics, deterministically per seed.

    Each document at rank r is relevant independently with the probability
    from :func:`rank_relevance_probs`. Topics that come out with zero
    relevant documents are resampled.
    """
    if count < 1:
        raise ConfigError(f"topic count must be >= 1, got {count}")
    probs = rank_relevance_probs(n_docs, prevalence, decay)
    rng = np.random.default_rng(seed)
    topics = []
    for k in range(count):
        for _ in range(1000):
            labels = (rng.random(n_docs) < probs).astype(np.int64)
            if labels.any():
                break
        else:
            raise ConfigError(
                f"could not sample a topic with any relevant document "
                f"(prevalence {prevalence}, n_docs {n_docs})"
            )
        topic_id = f"synth-{k:04d}"
        ranking = tuple(f"{topic_id}-d{r:06d}" for r in range(1, n_docs + 1))
        topics.append(Topic(topic_id, ranking, labels))
    return topics


def write_run_file(path, topics: list[Topic], tag: str = "tarstop") -> None:
    """Write topics as a run file; scores descend so rank order round-trips."""
    with open(path, "w", encoding="utf-8") as fh:
        for topic in topics:
            n = topic.n_docs
            for rank, doc in enumerate(topic.ranking, start=1):
                fh.write(f"{topic.topic_id} Q0 {doc} {rank} {float(n - rank + 1)!r} {tag}\n")


def write_qrels_file(path, topics: list[Topic]) -> None:
    """Write full judgements (including non-relevant) so parsing round-trips."""
    with open(path, "w", encoding="utf-8") as fh:
        for topic in topics:
            for doc, label in zip(topic.ranking, topic.labels):
                fh.write(f"{topic.topic_id} 0 {doc} {int(label)}\n")
