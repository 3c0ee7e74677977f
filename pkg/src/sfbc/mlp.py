"""Feed-forward policy network with hand-rolled backprop and Adam.

The network maps the pendulum observation (cos theta, sin theta, omega) to a
torque mean, with tanh hidden layers and a final tanh scaled by the torque
limit so the output always lies in [-2, 2]. The training loss is the
weighted squared error (a - mu)^2 / (2 sigma^2) with a fixed sigma, i.e. the
per-sample Gaussian negative log-likelihood up to constants, scaled by each
sample's success-probability weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pendulum import MAX_TORQUE, State

PARAMS_VERSION = 1

DEFAULT_HIDDEN = (256, 256)
INPUT_DIM = 3
DEFAULT_SIGMA = 0.1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class PolicyParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.weights + self.biases)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


def init_params(
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    seed: int = 0,
    dtype: type = np.float32,
    rng: np.random.Generator | None = None,
) -> PolicyParams:
    """Glorot-uniform initialization; deterministic given the seed."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
    sizes = (INPUT_DIM, *hidden, 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return PolicyParams(weights, biases, meta={"seed": seed})


def features(thetas: np.ndarray, omegas: np.ndarray, dtype: type = np.float64) -> np.ndarray:
    """Observation map (cos theta, sin theta, omega); avoids the angle wrap."""
    return np.column_stack([np.cos(thetas), np.sin(thetas), omegas]).astype(dtype)


def forward(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (torque means shaped (B,), activations for backprop)."""
    acts = [x]
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ w + b)
        acts.append(h)
    z = h @ params.weights[-1] + params.biases[-1]
    mu = MAX_TORQUE * np.tanh(z)
    acts.append(mu)
    return mu[:, 0], acts


def predict(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[0]


def act(params: PolicyParams, s: State) -> float:
    """Deterministic deployment: torque for a single state, always in [-2, 2]."""
    x = features(np.array([s.theta]), np.array([s.omega]), dtype=params.dtype)
    return float(predict(params, x)[0])


def loss_and_grads(
    params: PolicyParams,
    x: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    sigma: float = DEFAULT_SIGMA,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean weighted squared-error loss and its analytic gradients."""
    if len(x) == 0:
        raise ValueError("empty batch")
    mu, acts = forward(params, x)
    diff = mu - targets
    per_sample = weights * diff**2 / (2.0 * sigma**2)
    loss = float(per_sample.mean())
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")

    batch = len(x)
    # d loss / d mu, then through mu = MAX_TORQUE * tanh(z).
    dmu = (weights * diff / (sigma**2 * batch))[:, None]
    mu_col = acts[-1]
    dz = dmu * (MAX_TORQUE - mu_col**2 / MAX_TORQUE)

    grad_w: list[np.ndarray] = [None] * len(params.weights)
    grad_b: list[np.ndarray] = [None] * len(params.biases)
    delta = dz
    for layer in range(len(params.weights) - 1, -1, -1):
        grad_w[layer] = acts[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer].T) * (1.0 - acts[layer] ** 2)
    return loss, grad_w, grad_b


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: PolicyParams) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
        )


def adam_step(
    params: PolicyParams,
    grad_w: list[np.ndarray],
    grad_b: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    state.t += 1
    correct1 = 1.0 - beta1**state.t
    correct2 = 1.0 - beta2**state.t
    for group in (
        zip(params.weights, grad_w, state.m_w, state.v_w),
        zip(params.biases, grad_b, state.m_b, state.v_b),
    ):
        for p, g, m, v in group:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g**2
            p -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)


def save_params(params: PolicyParams, path: str | Path) -> None:
    """Versioned flat serialization: layer shapes plus row-major arrays."""
    arrays = {}
    for idx, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{idx}"] = w
        arrays[f"b{idx}"] = b
    meta = dict(params.meta)
    meta["version"] = PARAMS_VERSION
    meta["n_layers"] = len(params.weights)
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
             **arrays)


def load_params(path: str | Path) -> PolicyParams:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("version") != PARAMS_VERSION:
            raise ValueError(f"params schema version {meta.get('version')!r} is not supported")
        n = meta["n_layers"]
        weights = [data[f"w{i}"] for i in range(n)]
        biases = [data[f"b{i}"] for i in range(n)]
    meta.pop("n_layers")
    meta.pop("version")
    return PolicyParams(weights, biases, meta=meta)
