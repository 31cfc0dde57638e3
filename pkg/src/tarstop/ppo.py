"""Clipped-surrogate policy-gradient training for the stopping agent.

The loop is the standard one: collect fixed-horizon rollouts from a set of
parallel environments, estimate advantages with GAE, then run several
epochs of clipped-ratio updates over shuffled minibatches. Everything is
driven by explicitly seeded generators so identical configs give
bit-identical checkpoints and logs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import BatchedTopic, Topic, batch_topic
from .env import CONTINUE, OBS_SENTINEL, STOP, VecStoppingEnv
from .errors import ConfigError
from .metrics import StopResult
from .nets import (
    ACTIVATION,
    HIDDEN_SIZES,
    INIT_SCHEME,
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    backward,
    clip_grads,
    forward,
    init_params,
    log_prob_and_entropy,
    log_softmax,
    params_from_jsonable,
    params_to_jsonable,
    softmax,
)

CHECKPOINT_VERSION = 1
POLICY_METHOD = "policy"

TRAINING_LOG_HEADER = (
    "iteration",
    "timesteps",
    "mean_ep_reward",
    "mean_stop_batch",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "approx_kl",
)


class NonFiniteLossError(RuntimeError):
    """Training aborted on a non-finite loss; message carries diagnostics."""


@dataclass(frozen=True)
class Hyperparams:
    total_timesteps: int = 100_000
    n_steps: int = 100
    minibatch_size: int = 100
    learning_rate: float = 1e-4
    n_epochs: int = 8
    entropy_coef: float = 0.1
    gamma: float = 0.99
    clip_range: float = 0.2
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    n_envs: int = 8
    seed: int = 0
    max_grad_norm: float | None = None

    def validate(self) -> None:
        for name in ("total_timesteps", "n_steps", "minibatch_size", "n_epochs", "n_envs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("learning_rate", "entropy_coef", "value_coef"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 < self.clip_range < 1.0:
            raise ConfigError(f"clip_range must be in (0, 1), got {self.clip_range}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must be in (0, 1], got {self.gae_lambda}")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ConfigError(f"max_grad_norm must be positive, got {self.max_grad_norm}")


@dataclass
class RolloutBuffer:
    """Fixed-horizon trajectories, time-major over (n_steps, n_envs)."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap_values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.obs.shape[1]


def collect_rollout(
    actor: MlpParams,
    critic: MlpParams,
    venv: VecStoppingEnv,
    n_steps: int,
    rng: np.random.Generator,
) -> tuple[RolloutBuffer, list[dict]]:
    """Roll the current policy for ``n_steps`` across all slots.

    Actions are sampled from the actor's softmax; finished episodes are
    reported in the returned info records while their slots restart
    mid-rollout.
    """
    n_envs = venv.n_envs
    obs = venv.current_obs()
    buf_obs = np.zeros((n_steps, n_envs, venv.n_batches))
    buf_actions = np.zeros((n_steps, n_envs), dtype=np.int64)
    buf_logp = np.zeros((n_steps, n_envs))
    buf_rewards = np.zeros((n_steps, n_envs))
    buf_values = np.zeros((n_steps, n_envs))
    buf_dones = np.zeros((n_steps, n_envs), dtype=bool)
    episodes: list[dict] = []
    for t in range(n_steps):
        logits, _ = forward(actor, obs)
        values, _ = forward(critic, obs)
        lp = log_softmax(logits)
        actions = np.where(rng.random(n_envs) < np.exp(lp[:, STOP]), STOP, CONTINUE)
        buf_obs[t] = obs
        buf_actions[t] = actions
        buf_logp[t] = lp[np.arange(n_envs), actions]
        buf_values[t] = values[:, 0]
        obs, rewards, dones, infos = venv.step(actions)
        buf_rewards[t] = rewards
        buf_dones[t] = dones
        episodes.extend(infos)
    bootstrap, _ = forward(critic, obs)
    buffer = RolloutBuffer(
        buf_obs, buf_actions, buf_logp, buf_rewards, buf_values, buf_dones, bootstrap[:, 0]
    )
    return buffer, episodes


def compute_gae(
    buffer: RolloutBuffer,
    gamma: float,
    gae_lambda: float,
    bootstrap_values: np.ndarray | None = None,
) -> RolloutBuffer:
    """Fill advantages and returns with truncated GAE.

    The recursion stops at episode boundaries; episodes still open at the
    end of the rollout bootstrap with the critic value of the post-rollout
    state.
    """
    if bootstrap_values is None:
        bootstrap_values = buffer.bootstrap_values
    n_steps = buffer.n_steps
    advantages = np.zeros_like(buffer.rewards)
    carry = np.zeros(buffer.n_envs)
    for t in reversed(range(n_steps)):
        next_values = bootstrap_values if t == n_steps - 1 else buffer.values[t + 1]
        nonterminal = 1.0 - buffer.dones[t]
        delta = buffer.rewards[t] + gamma * next_values * nonterminal - buffer.values[t]
        carry = delta + gamma * gae_lambda * nonterminal * carry
        advantages[t] = carry
    buffer.advantages = advantages
    buffer.returns = advantages + buffer.values
    return buffer


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def ppo_loss(
    actor: MlpParams,
    critic: MlpParams,
    batch: Minibatch,
    hyper: Hyperparams,
    want_grads: bool = False,
):
    """Clipped-surrogate loss on one minibatch (advantages already normalized).

    Returns ``(loss, stats)`` and, with ``want_grads``, exact parameter
    gradients for both networks appended.
    """
    logits, actor_cache = forward(actor, batch.obs)
    values_2d, critic_cache = forward(critic, batch.obs)
    values = values_2d[:, 0]
    logp, entropy = log_prob_and_entropy(logits, batch.actions)
    log_ratio = logp - batch.log_probs_old
    ratio = np.exp(log_ratio)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - hyper.clip_range, 1.0 + hyper.clip_range) * adv
    policy_loss = -np.minimum(unclipped, clipped).mean()
    value_err = values - batch.returns
    value_loss = float(np.mean(value_err**2))
    entropy_mean = float(entropy.mean())
    loss = float(policy_loss + hyper.value_coef * value_loss - hyper.entropy_coef * entropy_mean)
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": entropy_mean,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > hyper.clip_range)),
        "approx_kl": float(np.mean(ratio - 1.0 - log_ratio)),
        "loss": loss,
    }
    if not want_grads:
        return loss, stats

    n = len(adv)
    # The clipped branch has zero gradient wherever it is the strict minimum.
    active = unclipped <= clipped
    d_logp = np.where(active, ratio * adv, 0.0) * (-1.0 / n)
    probs = softmax(logits)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(n), batch.actions] = 1.0
    d_logits = d_logp[:, None] * (one_hot - probs)
    lp_all = log_softmax(logits)
    d_entropy = -probs * (lp_all + entropy[:, None])
    d_logits += (-hyper.entropy_coef / n) * d_entropy
    d_values = (2.0 * hyper.value_coef / n) * value_err
    actor_grads = backward(actor, actor_cache, d_logits)
    critic_grads = backward(critic, critic_cache, d_values[:, None])
    return loss, stats, actor_grads, critic_grads


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(float(adv.std()), 1e-8)


def ppo_update(
    actor: MlpParams,
    critic: MlpParams,
    actor_opt: AdamState,
    critic_opt: AdamState,
    buffer: RolloutBuffer,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> dict:
    """Run ``n_epochs`` of shuffled minibatch updates over one rollout."""
    if buffer.advantages is None or buffer.returns is None:
        raise ValueError("compute_gae() must run before ppo_update()")
    n = buffer.n_steps * buffer.n_envs
    flat_obs = buffer.obs.reshape(n, -1)
    flat_actions = buffer.actions.reshape(n)
    flat_logp = buffer.log_probs.reshape(n)
    flat_adv = buffer.advantages.reshape(n)
    flat_returns = buffer.returns.reshape(n)
    totals: dict[str, float] = {}
    n_updates = 0
    for _ in range(hyper.n_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.minibatch_size):
            idx = perm[start : start + hyper.minibatch_size]
            batch = Minibatch(
                obs=flat_obs[idx],
                actions=flat_actions[idx],
                log_probs_old=flat_logp[idx],
                advantages=normalize_advantages(flat_adv[idx]),
                returns=flat_returns[idx],
            )
            loss, stats, actor_grads, critic_grads = ppo_loss(
                actor, critic, batch, hyper, want_grads=True
            )
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss during update: {stats}")
            if hyper.max_grad_norm is not None:
                clip_grads([actor_grads, critic_grads], hyper.max_grad_norm)
            adam_step(actor, actor_grads, actor_opt, hyper.learning_rate)
            adam_step(critic, critic_grads, critic_opt, hyper.learning_rate)
            for key, value in stats.items():
                totals[key] = totals.get(key, 0.0) + value
            n_updates += 1
    return {key: value / n_updates for key, value in totals.items()}


@dataclass
class Checkpoint:
    """A trained policy plus everything needed to rerun it."""

    actor: MlpParams
    critic: MlpParams
    target_recall: float
    n_batches: int
    normalize_obs: str
    hyper: Hyperparams


def train(
    topics: list[Topic],
    target_recall: float,
    hyper: Hyperparams = Hyperparams(),
    n_batches: int = 100,
    normalize: str = "ratio",
) -> tuple[Checkpoint, list[dict]]:
    """Train one stopping policy for one target recall.

    Consumes ``total_timesteps // (n_steps * n_envs)`` full iterations of
    collect / estimate / update and returns the checkpoint plus one log row
    per iteration.
    """
    hyper.validate()
    if not topics:
        raise ConfigError("no training topics")
    pool = [batch_topic(t, n_batches) for t in topics]
    seeds = np.random.SeedSequence(hyper.seed).spawn(5)
    venv = VecStoppingEnv(pool, target_recall, hyper.n_envs, seeds[0], normalize)
    width = venv.n_batches
    actor = init_params(np.random.default_rng(seeds[1]), (width, *HIDDEN_SIZES, 2), out_gain=0.01)
    critic = init_params(np.random.default_rng(seeds[2]), (width, *HIDDEN_SIZES, 1), out_gain=1.0)
    actor_opt, critic_opt = adam_init(actor), adam_init(critic)
    action_rng = np.random.default_rng(seeds[3])
    shuffle_rng = np.random.default_rng(seeds[4])
    per_iteration = hyper.n_steps * hyper.n_envs
    iterations = hyper.total_timesteps // per_iteration
    if iterations < 1:
        raise ConfigError(
            f"total_timesteps {hyper.total_timesteps} is less than one rollout "
            f"({hyper.n_steps} steps x {hyper.n_envs} envs)"
        )
    rows: list[dict] = []
    for iteration in range(1, iterations + 1):
        buffer, episodes = collect_rollout(actor, critic, venv, hyper.n_steps, action_rng)
        compute_gae(buffer, hyper.gamma, hyper.gae_lambda)
        stats = ppo_update(actor, critic, actor_opt, critic_opt, buffer, hyper, shuffle_rng)
        rewards = [e["episode_reward"] for e in episodes]
        stops = [e["stop_batch"] for e in episodes]
        rows.append(
            {
                "iteration": iteration,
                "timesteps": iteration * per_iteration,
                "mean_ep_reward": float(np.mean(rewards)) if rewards else float("nan"),
                "mean_stop_batch": float(np.mean(stops)) if stops else float("nan"),
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "entropy": stats["entropy"],
                "clip_fraction": stats["clip_fraction"],
                "approx_kl": stats["approx_kl"],
            }
        )
    checkpoint = Checkpoint(actor, critic, target_recall, width, normalize, hyper)
    return checkpoint, rows


def infer_stop(
    checkpoint: Checkpoint,
    bt: BatchedTopic,
    mode: str = "greedy",
    rng=None,
) -> StopResult:
    """Run the trained policy over one topic and report where it stopped.

    The policy sees only the observation vector (examined prefix), never the
    target batch or unexamined labels. Greedy mode takes the argmax action;
    STOP wins exact ties.
    """
    if bt.n_batches != checkpoint.n_batches:
        raise ConfigError(
            f"checkpoint expects {checkpoint.n_batches} batches, "
            f"topic {bt.topic.topic_id!r} has {bt.n_batches}"
        )
    if mode not in ("greedy", "sample"):
        raise ConfigError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    if mode == "sample" and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    obs = np.full(bt.n_batches, OBS_SENTINEL)

    def reveal(index: int) -> None:
        if checkpoint.normalize_obs == "ratio":
            obs[index] = bt.batch_rel[index] / bt.batch_sizes[index]
        else:
            obs[index] = float(bt.batch_rel[index])

    examined = 1
    reveal(0)
    while True:
        logits, _ = forward(checkpoint.actor, obs)
        if mode == "greedy":
            action = int(np.argmax(logits))
        else:
            action = STOP if rng.random() < softmax(logits)[STOP] else CONTINUE
        if action == STOP or examined == bt.n_batches:
            break
        examined += 1
        reveal(examined - 1)
    return StopResult(
        topic_id=bt.topic.topic_id,
        method=POLICY_METHOD,
        target_recall=checkpoint.target_recall,
        docs_examined=int(bt.batch_sizes[:examined].sum()),
        relevant_found=int(bt.cum_rel[examined - 1]),
        stop_batch=examined,
    )


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write the checkpoint as versioned JSON; floats round-trip bit-exactly."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "tarstop-checkpoint",
        "target_recall": checkpoint.target_recall,
        "n_batches": checkpoint.n_batches,
        "normalize_obs": checkpoint.normalize_obs,
        "architecture": {
            "actor_sizes": list(checkpoint.actor.sizes),
            "critic_sizes": list(checkpoint.critic.sizes),
            "activation": ACTIVATION,
            "init": INIT_SCHEME,
        },
        "hyperparams": asdict(checkpoint.hyper),
        "actor": params_to_jsonable(checkpoint.actor),
        "critic": params_to_jsonable(checkpoint.critic),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("kind") != "tarstop-checkpoint":
        raise ConfigError(f"{path}: not a tarstop checkpoint")
    if data.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {data.get('format_version')}")
    return Checkpoint(
        actor=params_from_jsonable(data["actor"]),
        critic=params_from_jsonable(data["critic"]),
        target_recall=data["target_recall"],
        n_batches=data["n_batches"],
        normalize_obs=data["normalize_obs"],
        hyper=Hyperparams(**data["hyperparams"]),
    )


def write_training_log(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_HEADER)
        for row in rows:
            writer.writerow(
                [repr(row[k]) if isinstance(row[k], float) else row[k] for k in TRAINING_LOG_HEADER]
            )
