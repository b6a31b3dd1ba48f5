"""Query-decision agent: feed-forward Q-network trained by replayed one-step
Bellman targets with epsilon-greedy exploration.

The network maps the 4-component state to two action values (wait, query).
Exploration is forced toward the query action: with probability epsilon a
query is issued regardless of the value estimates. Replay buffer and target
network are stability aids; capacity 1 with sync every step degrades to plain
online updates.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .reward import RewardConfig, reward
from .state import AgentState

__all__ = [
    "DqnConfig",
    "QNetwork",
    "Transition",
    "ReplayBuffer",
    "AdamOptimizer",
    "TrainingLog",
    "forward",
    "select_action",
    "bellman_target",
    "loss_and_gradients",
    "train_offline",
    "save_checkpoint",
    "load_checkpoint",
]

BELLMAN_MODES = ("standard", "blended")


@dataclass(frozen=True)
class DqnConfig:
    learning_rate: float = 1e-3
    discount: float = 0.9
    epsilon: float = 0.05
    train_steps: int = 200_000
    batch_size: int = 32
    replay_capacity: int = 10_000
    target_sync_interval: int = 500
    # "standard": target = r + discount * max_a Q'(s', a)
    # "blended": target = (1-lr)*Q(s,a) + discount*(r + lr * max_a Q'(s', a))
    bellman_mode: str = "standard"
    hidden_sizes: tuple = (128, 128)
    l1: float = 1e-5
    l2: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.bellman_mode not in BELLMAN_MODES:
            raise ValueError(f"bellman_mode must be one of {BELLMAN_MODES}")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


class QNetwork:
    """Fully connected ReLU network with identity output, float64 throughout."""

    def __init__(self, layer_sizes=(4, 128, 128, 2), l1=1e-5, l2=1e-5, rng=None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.l1 = float(l1)
        self.l2 = float(l2)
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            scale = math.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_actions(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def check_finite(self) -> None:
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("corrupted model: non-finite parameter detected")

    def forward_batch(self, states: np.ndarray, keep_activations: bool = False):
        self.check_finite()
        a = np.asarray(states, dtype=float)
        if a.ndim != 2 or a.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"expected batch of {self.layer_sizes[0]}-vectors, got {a.shape}")
        pre, post = [], [a]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = np.maximum(z, 0.0) if i < len(self.weights) - 1 else z
            post.append(a)
        if keep_activations:
            return a, pre, post
        return a

    def forward(self, s) -> np.ndarray:
        arr = s.as_array() if isinstance(s, AgentState) else np.asarray(s, dtype=float)
        return self.forward_batch(arr[None, :])[0]

    def copy(self) -> "QNetwork":
        clone = QNetwork.__new__(QNetwork)
        clone.layer_sizes = self.layer_sizes
        clone.l1 = self.l1
        clone.l2 = self.l2
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def regularization(self) -> float:
        # kernel penalties on hidden layers only; the output kernel is free
        total = 0.0
        for w in self.weights[:-1]:
            total += self.l1 * float(np.abs(w).sum()) + self.l2 * float((w * w).sum())
        return total


def forward(net: QNetwork, s) -> tuple[float, float]:
    """Q-values (q0, q1) for one state."""
    q = net.forward(s)
    return float(q[0]), float(q[1])


def select_action(net: QNetwork, s, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-forced query, otherwise greedy; exact ties resolve to waiting."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return 1
    q0, q1 = forward(net, s)
    return 1 if q1 > q0 else 0


def bellman_target(
    r: float,
    q_next_max: float,
    cfg: DqnConfig,
    q_current: float = 0.0,
    terminal: bool = False,
) -> float:
    """Regression target for one transition under the configured update rule."""
    bootstrap = 0.0 if terminal else q_next_max
    if cfg.bellman_mode == "standard":
        return r + cfg.discount * bootstrap
    lr = cfg.learning_rate
    return (1.0 - lr) * q_current + cfg.discount * (r + lr * bootstrap)


def loss_and_gradients(net: QNetwork, states, actions, targets):
    """Mean squared error on the chosen-action outputs plus kernel penalties.

    Returns (loss, grads) with grads ordered like net.parameters().
    """
    S = np.asarray(states, dtype=float)
    A = np.asarray(actions, dtype=np.int64)
    Y = np.asarray(targets, dtype=float)
    n = S.shape[0]

    q, pre, post = net.forward_batch(S, keep_activations=True)
    err = q[np.arange(n), A] - Y
    loss = float(np.mean(err**2)) + net.regularization()

    dq = np.zeros_like(q)
    dq[np.arange(n), A] = 2.0 * err / n

    grads = [None] * (2 * len(net.weights))
    delta = dq
    for i in reversed(range(len(net.weights))):
        a_prev = post[i]
        gw = a_prev.T @ delta
        gb = delta.sum(axis=0)
        if i < len(net.weights) - 1:
            w = net.weights[i]
            gw = gw + net.l1 * np.sign(w) + 2.0 * net.l2 * w
        grads[2 * i] = gw
        grads[2 * i + 1] = gb
        if i > 0:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, grads


class AdamOptimizer:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class ReplayBuffer:
    """Uniform-sampling FIFO buffer of transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[int(i)] for i in idx]


@dataclass
class TrainingLog:
    """Per-step rows (step, episode, epsilon, loss, episode_reward) plus the
    per-episode total reward series used for the saturation check."""

    rows: list = field(default_factory=list)
    episode_rewards: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "episode", "epsilon", "loss", "episode_reward"])
            for step, episode, eps, loss, ep_reward in self.rows:
                writer.writerow(
                    [
                        step,
                        episode,
                        repr(eps),
                        "" if loss is None else repr(loss),
                        "" if ep_reward is None else repr(ep_reward),
                    ]
                )


def _fetch_episode(episode_source) -> list[AgentState]:
    episode = episode_source() if callable(episode_source) else episode_source
    episode = list(episode)
    if not episode:
        raise ValueError("episode source produced an empty episode")
    return episode


def train_offline(
    net: QNetwork,
    episode_source,
    cfg: DqnConfig,
    reward_cfg: RewardConfig = RewardConfig(),
    log_every: int = 1,
) -> tuple[QNetwork, TrainingLog]:
    """Run cfg.train_steps environment steps over cyclically replayed episodes.

    episode_source is a sequence of AgentStates or a zero-argument callable
    producing one; it is consulted again at each episode end. Training is
    deterministic given cfg.seed. The input net is mutated and returned.
    """
    rng = np.random.default_rng(cfg.seed)
    buffer = ReplayBuffer(cfg.replay_capacity)
    target_net = net.copy()
    optimizer = AdamOptimizer(net.parameters(), lr=cfg.learning_rate)
    log = TrainingLog()

    episode = _fetch_episode(episode_source)
    pos = 0
    episode_idx = 0
    episode_reward = 0.0

    for step in range(1, cfg.train_steps + 1):
        s = episode[pos]
        a = select_action(net, s, cfg.epsilon, rng)
        r = reward(s, a, reward_cfg)
        terminal = pos == len(episode) - 1
        s_next = episode[0] if terminal else episode[pos + 1]
        buffer.push(Transition(s.as_array(), a, r, s_next.as_array(), terminal))
        episode_reward += r

        loss = None
        if len(buffer) >= cfg.batch_size:
            batch = buffer.sample(cfg.batch_size, rng)
            S = np.stack([t.s for t in batch])
            A = np.array([t.a for t in batch], dtype=np.int64)
            R = np.array([t.r for t in batch])
            S_next = np.stack([t.s_next for t in batch])
            term = np.array([t.terminal for t in batch], dtype=bool)

            q_next_max = target_net.forward_batch(S_next).max(axis=1)
            if cfg.bellman_mode == "standard":
                targets = R + cfg.discount * np.where(term, 0.0, q_next_max)
            else:
                q_current = net.forward_batch(S)[np.arange(len(batch)), A]
                targets = np.array(
                    [
                        bellman_target(R[j], q_next_max[j], cfg, q_current[j], term[j])
                        for j in range(len(batch))
                    ]
                )
            loss, grads = loss_and_gradients(net, S, A, targets)
            optimizer.step(net.parameters(), grads)

        if step % cfg.target_sync_interval == 0:
            target_net = net.copy()

        finished_reward = None
        if terminal:
            log.episode_rewards.append(episode_reward)
            finished_reward = episode_reward
            episode_reward = 0.0
            episode_idx += 1
            episode = _fetch_episode(episode_source)
            pos = 0
        else:
            pos += 1

        if step % log_every == 0 or finished_reward is not None:
            log.rows.append((step, episode_idx, cfg.epsilon, loss, finished_reward))

    return net, log


CHECKPOINT_FORMAT = "stressloop-qnet-v1"


def save_checkpoint(net: QNetwork, path) -> None:
    """Versioned .npz: layer_sizes, l1/l2, and w{i}/b{i} arrays per layer."""
    arrays = {
        "format": np.array(CHECKPOINT_FORMAT),
        "layer_sizes": np.asarray(net.layer_sizes, dtype=np.int64),
        "l1": np.array(net.l1),
        "l2": np.array(net.l2),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_checkpoint(path) -> QNetwork:
    with np.load(path) as data:
        fmt = str(data["format"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format: {fmt!r}")
        sizes = tuple(int(n) for n in data["layer_sizes"])
        net = QNetwork.__new__(QNetwork)
        net.layer_sizes = sizes
        net.l1 = float(data["l1"])
        net.l2 = float(data["l2"])
        net.weights = [data[f"w{i}"].copy() for i in range(len(sizes) - 1)]
        net.biases = [data[f"b{i}"].copy() for i in range(len(sizes) - 1)]
    net.check_finite()
    return net
