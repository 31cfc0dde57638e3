"""Stopping rules for ranked document review.

Train a stopping policy on batched rankings, run oracle/knee/budget
baselines, and score everything with recall/cost/excess reports.
"""

from .baselines import KneeConfig, budget_stop, gain_curve, knee_stop, oracle_stop
from .corpus import (
    BatchedTopic,
    Topic,
    assemble_topics,
    batch_topic,
    load_qrels,
    load_run,
    parse_qrels,
    parse_run,
    rank_relevance_probs,
    synth_topics,
    target_batch,
    write_qrels_file,
    write_run_file,
)
from .env import CONTINUE, STOP, StoppingEnv, VecStoppingEnv, reward
from .errors import ConfigError, ParseError
from .metrics import (
    MethodSummary,
    MetricsReport,
    StopResult,
    TopicMetrics,
    aggregate,
    cost_of,
    excess_of,
    optimal_stop_rank,
    read_results_csv,
    recall_of,
    write_aggregate_csv,
    write_per_topic_csv,
    write_results_csv,
)
from .nets import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    backward,
    forward,
    init_params,
    log_prob_and_entropy,
)
from .ppo import (
    Checkpoint,
    Hyperparams,
    RolloutBuffer,
    collect_rollout,
    compute_gae,
    infer_stop,
    load_checkpoint,
    ppo_loss,
    ppo_update,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
