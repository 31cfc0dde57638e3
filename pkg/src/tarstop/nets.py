"""Tiny dense networks with hand-written gradients and Adam.

The policy and value heads are small enough (input -> 64 -> 64 -> out,
tanh hidden activations) that a tensor framework buys nothing here:
forward, backward and the optimizer fit in a page of numpy, run in float64
and stay bit-reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN_SIZES = (64, 64)
ACTIVATION = "tanh"
INIT_SCHEME = "orthogonal"


@dataclass
class MlpParams:
    """Per-layer weight matrices (in x out) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q)


def init_params(seed, sizes: tuple[int, ...], out_gain: float) -> MlpParams:
    """Orthogonal initialization: gain sqrt(2) on hidden layers, ``out_gain``
    on the output layer, zero biases. Deterministic per seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if k == len(sizes) - 2 else np.sqrt(2.0)
        weights.append(_orthogonal(rng, n_in, n_out, gain))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


def forward(params: MlpParams, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Affine + tanh stack; returns (output, cache of per-layer inputs).

    Accepts a single observation (1-D) or a batch (2-D); the output matches.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    h = np.atleast_2d(arr)
    if h.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]} != network width {params.weights[0].shape[0]}")
    if not np.isfinite(h).all():
        raise ValueError("non-finite values in network input")
    cache = [h]
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ w + b)
        cache.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    return (out[0] if single else out), cache


def backward(params: MlpParams, cache: list[np.ndarray], grad_out) -> MlpParams:
    """Exact gradients for the scalar loss whose output gradient is ``grad_out``.

    ``cache`` must come from a matching :func:`forward` call; gradients are
    summed over the batch dimension.
    """
    g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    n_layers = len(params.weights)
    if len(cache) != n_layers:
        raise ValueError(f"cache has {len(cache)} entries for {n_layers} layers")
    if g.shape != (cache[-1].shape[0], params.weights[-1].shape[1]):
        raise ValueError(f"grad_out shape {g.shape} does not match network output")
    grad_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * n_layers
    for k in reversed(range(n_layers)):
        grad_w[k] = cache[k].T @ g
        grad_b[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ params.weights[k].T) * (1.0 - cache[k] ** 2)  # tanh'
    return MlpParams(grad_w, grad_b)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_prob_and_entropy(logits, actions):
    """Log-probability of the chosen actions and the policy entropy.

    Numerically stable via max-subtracted log-softmax; works on a single
    (logits, action) pair or on batches.
    """
    arr = np.asarray(logits, dtype=np.float64)
    single = arr.ndim == 1
    lp = log_softmax(np.atleast_2d(arr))
    acts = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    chosen = lp[np.arange(len(acts)), acts]
    entropy = -(np.exp(lp) * lp).sum(axis=-1)
    if single:
        return float(chosen[0]), float(entropy[0])
    return chosen, entropy


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams) -> AdamState:
    arrays = params.arrays()
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: MlpParams, grads: MlpParams, state: AdamState, lr: float
) -> tuple[MlpParams, AdamState]:
    """Bias-corrected Adam update, applied in place."""
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def global_grad_norm(*grads: MlpParams) -> float:
    total = 0.0
    for g in grads:
        for a in g.arrays():
            total += float((a * a).sum())
    return float(np.sqrt(total))


def clip_grads(grads: list[MlpParams], max_norm: float) -> None:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(*grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            for a in g.arrays():
                a *= scale


def params_to_jsonable(params: MlpParams) -> dict:
    return {
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_jsonable(data: dict) -> MlpParams:
    return MlpParams(
        [np.asarray(w, dtype=np.float64) for w in data["weights"]],
        [np.asarray(b, dtype=np.float64) for b in data["biases"]],
    )
