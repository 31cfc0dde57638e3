"""Reference stopping strategies: oracle, gain-curve knee, fixed budget."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import BatchedTopic, Topic
from .errors import ConfigError
from .metrics import StopResult, optimal_stop_rank


def gain_curve(topic: Topic) -> np.ndarray:
    """Cumulative relevant count by rank, with g[0] = 0 and g[n_docs] = n_relevant."""
    return np.concatenate(([0], np.cumsum(topic.labels)))


def oracle_stop(topic: Topic, target_recall: float) -> StopResult:
    """Stop at the first rank whose recall meets or exceeds the target.

    Requires full label knowledge, so it marks the ideal cost rather than a
    usable method. When the target is not exactly attainable it overshoots
    to the next relevant document.
    """
    rank = optimal_stop_rank(topic, target_recall)
    g = gain_curve(topic)
    return StopResult(
        topic_id=topic.topic_id,
        method="oracle",
        target_recall=target_recall,
        docs_examined=rank,
        relevant_found=int(g[rank]),
    )


@dataclass(frozen=True)
class KneeConfig:
    """Knee-detection constants; the slope-ratio threshold adapts downward
    as relevant documents accumulate."""

    threshold_intercept: float = 156.0
    threshold_cap: float = 150.0
    trailing_smoothing: float = 1.0


def knee_stop(
    bt: BatchedTopic,
    config: KneeConfig = KneeConfig(),
    target_recall: float | None = None,
) -> StopResult:
    """Stop when the gain curve's knee indicates diminishing returns.

    Evaluated at successive batch ends so its cost granularity matches the
    trained policy's. At each examined rank i the candidate knee k < i
    maximizes the distance above the chord from (0, 0) to (i, g(i)); the
    rule fires when the slope before the knee exceeds the (smoothed) slope
    after it by the adaptive threshold. If it never fires, the whole
    ranking is read.
    """
    topic = bt.topic
    g = gain_curve(topic)
    ends = np.cumsum(bt.batch_sizes)
    stop_rank = topic.n_docs
    stop_batch = bt.n_batches
    for batch_index, i in enumerate(ends, start=1):
        if i < 2:
            continue
        ks = np.arange(1, i)
        above_chord = g[ks] * i - g[i] * ks  # perpendicular distance modulo a constant factor
        k = int(ks[np.argmax(above_chord)])
        lead_slope = g[k] / k
        trail_slope = (g[i] - g[k] + config.trailing_smoothing) / (i - k)
        rho = lead_slope / trail_slope
        if rho >= config.threshold_intercept - min(float(g[k]), config.threshold_cap):
            stop_rank = int(i)
            stop_batch = batch_index
            break
    return StopResult(
        topic_id=topic.topic_id,
        method="knee",
        target_recall=target_recall,
        docs_examined=stop_rank,
        relevant_found=int(g[stop_rank]),
        stop_batch=stop_batch,
    )


def budget_stop(topic: Topic, fraction: float, target_recall: float | None = None) -> StopResult:
    """Examine a fixed fraction of the collection and stop."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"budget fraction must be in (0, 1], got {fraction}")
    rank = math.ceil(fraction * topic.n_docs)
    g = gain_curve(topic)
    return StopResult(
        topic_id=topic.topic_id,
        method="budget",
        target_recall=target_recall,
        docs_examined=rank,
        relevant_found=int(g[rank]),
    )
