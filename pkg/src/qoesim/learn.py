"""Self-contained neural Q-learning with a branch-dueling head.

A multilayer perceptron trunk feeds one state-value head and one advantage
head per action branch; branch Q-values recombine as

    Q_d(s, a) = V(s) + A_d(s, a) - mean_a' A_d(s, a')

Training is plain DQN-style TD learning with an experience replay buffer,
a periodically synced target network, epsilon-greedy exploration and
hand-written backpropagation (no autograd dependency).
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray  # one action index per branch
    reward: float
    next_state: np.ndarray
    terminal: bool


class BdqNetwork:
    """MLP trunk + dueling value/advantage heads, parameters in plain arrays."""

    def __init__(self, input_dim: int, hidden: tuple[int, ...],
                 num_branches: int, actions_per_branch: int,
                 rng: np.random.Generator | None = None, init: str = "xavier"):
        self.input_dim = input_dim
        self.hidden = tuple(hidden)
        self.num_branches = num_branches
        self.actions_per_branch = actions_per_branch
        dims = [input_dim, *hidden]
        self.trunk_w = []
        self.trunk_b = []
        for d_in, d_out in zip(dims, dims[1:]):
            self.trunk_w.append(self._init_w(d_in, d_out, rng, init))
            self.trunk_b.append(np.zeros(d_out))
        top = dims[-1]
        self.value_w = self._init_w(top, 1, rng, init)
        self.value_b = np.zeros(1)
        self.adv_w = [self._init_w(top, actions_per_branch, rng, init)
                      for _ in range(num_branches)]
        self.adv_b = [np.zeros(actions_per_branch) for _ in range(num_branches)]

    @staticmethod
    def _init_w(d_in, d_out, rng, init):
        if init == "zeros" or rng is None:
            return np.zeros((d_in, d_out))
        limit = math.sqrt(6.0 / (d_in + d_out))
        return rng.uniform(-limit, limit, (d_in, d_out))

    def params(self) -> list[np.ndarray]:
        return [*self.trunk_w, *self.trunk_b, self.value_w, self.value_b,
                *self.adv_w, *self.adv_b]

    def copy(self) -> "BdqNetwork":
        clone = BdqNetwork(self.input_dim, self.hidden, self.num_branches,
                           self.actions_per_branch, rng=None)
        for dst, src in zip(clone.params(), self.params()):
            dst[...] = src
        return clone

    def sync_from(self, other: "BdqNetwork") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src


def _trunk_forward(net: BdqNetwork, states: np.ndarray):
    """Returns hidden activations per layer (post-ReLU), input included."""
    acts = [states]
    h = states
    for w, b in zip(net.trunk_w, net.trunk_b):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    return acts


def forward_batch(net: BdqNetwork, states: np.ndarray) -> np.ndarray:
    """Q-values for a batch: shape (n, num_branches, actions_per_branch)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != net.input_dim:
        raise ShapeMismatch(f"state dim {states.shape[1]} != {net.input_dim}")
    h = _trunk_forward(net, states)[-1]
    v = h @ net.value_w + net.value_b  # (n, 1)
    q = np.empty((states.shape[0], net.num_branches, net.actions_per_branch))
    for d in range(net.num_branches):
        a = h @ net.adv_w[d] + net.adv_b[d]
        q[:, d, :] = v + a - a.mean(axis=1, keepdims=True)
    return q


def forward(net: BdqNetwork, state) -> np.ndarray:
    """Per-branch Q-vectors for one state: shape (num_branches, actions)."""
    return forward_batch(net, np.asarray(state, dtype=float)[None, :])[0]


def state_value(net: BdqNetwork, state) -> float:
    """The dueling V(s) stream on its own."""
    state = np.asarray(state, dtype=float)[None, :]
    if state.shape[1] != net.input_dim:
        raise ShapeMismatch(f"state dim {state.shape[1]} != {net.input_dim}")
    h = _trunk_forward(net, state)[-1]
    return float((h @ net.value_w + net.value_b)[0, 0])


def greedy_actions(net: BdqNetwork, state) -> np.ndarray:
    """Argmax per branch; ties resolve to the lowest index."""
    return forward(net, state).argmax(axis=1)


def td_targets(target_net: BdqNetwork, batch: list[Transition], gamma: float) -> np.ndarray:
    """r + gamma * mean_d max_a Q_d(s', a) for non-terminal transitions."""
    if not batch:
        raise ShapeMismatch("empty batch")
    next_states = np.stack([tr.next_state for tr in batch])
    q_next = forward_batch(target_net, next_states)
    bootstrap = q_next.max(axis=2).mean(axis=1)
    rewards = np.array([tr.reward for tr in batch])
    alive = np.array([0.0 if tr.terminal else 1.0 for tr in batch])
    return rewards + gamma * alive * bootstrap


def loss_and_gradients(net: BdqNetwork, batch: list[Transition],
                       targets: np.ndarray):
    """Mean (over batch and branches) squared TD error and its gradients.

    Targets are treated as constants, as in standard TD learning.
    """
    n = len(batch)
    if n == 0:
        raise ShapeMismatch("empty batch")
    states = np.stack([tr.state for tr in batch])
    actions = np.stack([tr.action for tr in batch])
    if states.shape[1] != net.input_dim:
        raise ShapeMismatch(f"state dim {states.shape[1]} != {net.input_dim}")
    if actions.shape[1] != net.num_branches or actions.max() >= net.actions_per_branch:
        raise ShapeMismatch("action indices incompatible with network branches")

    acts = _trunk_forward(net, states)
    h = acts[-1]
    v = h @ net.value_w + net.value_b  # (n, 1)
    d_count = net.num_branches
    a_count = net.actions_per_branch
    rows = np.arange(n)

    q_sel = np.empty((n, d_count))
    adv = []
    for d in range(d_count):
        a = h @ net.adv_w[d] + net.adv_b[d]
        adv.append(a)
        q_sel[:, d] = (v[:, 0] + a[rows, actions[:, d]] - a.mean(axis=1))

    td = q_sel - targets[:, None]
    loss = float((td * td).mean())
    g_q = 2.0 * td / (n * d_count)  # dL/dQ_d(s, a_d)

    grads = {"trunk_w": [np.zeros_like(w) for w in net.trunk_w],
             "trunk_b": [np.zeros_like(b) for b in net.trunk_b],
             "value_w": np.zeros_like(net.value_w),
             "value_b": np.zeros_like(net.value_b),
             "adv_w": [np.zeros_like(w) for w in net.adv_w],
             "adv_b": [np.zeros_like(b) for b in net.adv_b]}

    dh = np.zeros_like(h)
    # value head: dQ_d/dv = 1 for every branch
    g_v = g_q.sum(axis=1, keepdims=True)
    grads["value_w"][...] = h.T @ g_v
    grads["value_b"][...] = g_v.sum(axis=0)
    dh += g_v @ net.value_w.T
    # advantage heads: dQ_d/dA_d[j] = 1[j = a_d] - 1/A
    for d in range(d_count):
        g_a = np.full((n, a_count), -1.0 / a_count) * g_q[:, d:d + 1]
        g_a[rows, actions[:, d]] += g_q[:, d]
        grads["adv_w"][d][...] = h.T @ g_a
        grads["adv_b"][d][...] = g_a.sum(axis=0)
        dh += g_a @ net.adv_w[d].T
    # trunk
    for layer in reversed(range(len(net.trunk_w))):
        mask = acts[layer + 1] > 0.0
        dz = dh * mask
        grads["trunk_w"][layer][...] = acts[layer].T @ dz
        grads["trunk_b"][layer][...] = dz.sum(axis=0)
        dh = dz @ net.trunk_w[layer].T
    return loss, grads


def backward(net: BdqNetwork, batch: list[Transition], target_net: BdqNetwork,
             gamma: float, lr: float) -> float:
    """One SGD step on the branch-averaged squared TD error; returns the loss."""
    targets = td_targets(target_net, batch, gamma)
    loss, grads = loss_and_gradients(net, batch, targets)
    for w, g in zip(net.trunk_w, grads["trunk_w"]):
        w -= lr * g
    for b, g in zip(net.trunk_b, grads["trunk_b"]):
        b -= lr * g
    net.value_w -= lr * grads["value_w"]
    net.value_b -= lr * grads["value_b"]
    for w, g in zip(net.adv_w, grads["adv_w"]):
        w -= lr * g
    for b, g in zip(net.adv_b, grads["adv_b"]):
        b -= lr * g
    return loss


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: list[Transition] = []
        self.pos = 0

    def push(self, tr: Transition) -> None:
        if len(self.items) < self.capacity:
            self.items.append(tr)
        else:
            self.items[self.pos] = tr
        self.pos = (self.pos + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(0, len(self.items), batch_size)
        return [self.items[i] for i in idx]

    def __len__(self):
        return len(self.items)


@dataclass
class Hyperparams:
    episodes: int = 500
    max_steps: int = 1
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 0.003
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 0  # 0: decay over the whole training run
    batch_size: int = 64
    replay_capacity: int = 10_000
    target_sync: int = 200
    eps_fixed: float | None = None  # pin epsilon (diagnostics)


def train_episodes(env, hp: Hyperparams, rng: np.random.Generator):
    """Epsilon-greedy BDQ training loop; returns (net, per-episode mean reward).

    The env exposes: state_dim, num_branches, actions_per_branch,
    reset() -> state, step(actions) -> (next_state, reward, done).
    """
    net = BdqNetwork(env.state_dim, hp.hidden, env.num_branches,
                     env.actions_per_branch, rng=rng)
    target = net.copy()
    buffer = ReplayBuffer(hp.replay_capacity)
    total_steps = max(hp.episodes * hp.max_steps, 1)
    decay_steps = hp.eps_decay_steps or total_steps
    rewards_per_episode = []
    step_count = 0
    for _ in range(hp.episodes):
        state = np.asarray(env.reset(), dtype=float)
        ep_rewards = []
        for _ in range(hp.max_steps):
            if hp.eps_fixed is not None:
                eps = hp.eps_fixed
            else:
                frac = min(step_count / decay_steps, 1.0)
                eps = hp.eps_start + (hp.eps_end - hp.eps_start) * frac
            explore = rng.random(env.num_branches) < eps
            random_actions = rng.integers(0, env.actions_per_branch,
                                          env.num_branches)
            actions = np.where(explore, random_actions, greedy_actions(net, state))
            next_state, reward, done = env.step(actions)
            next_state = np.asarray(next_state, dtype=float)
            buffer.push(Transition(state, actions.copy(), float(reward),
                                   next_state, bool(done)))
            ep_rewards.append(float(reward))
            state = next_state
            step_count += 1
            if len(buffer) >= hp.batch_size:
                batch = buffer.sample(hp.batch_size, rng)
                backward(net, batch, target, hp.gamma, hp.lr)
                if step_count % hp.target_sync == 0:
                    target.sync_from(net)
            if done:
                break
        rewards_per_episode.append(float(np.mean(ep_rewards)))
    return net, rewards_per_episode


# --- checkpoint format: JSON manifest with base64 little-endian float64 ------

def _encode(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.astype("<f8").tobytes()).decode()}


def _decode(obj) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return arr.reshape(obj["shape"]).copy()


def save_network(net: BdqNetwork, path: str) -> None:
    doc = {
        "input_dim": net.input_dim,
        "hidden": list(net.hidden),
        "num_branches": net.num_branches,
        "actions_per_branch": net.actions_per_branch,
        "trunk_w": [_encode(w) for w in net.trunk_w],
        "trunk_b": [_encode(b) for b in net.trunk_b],
        "value_w": _encode(net.value_w),
        "value_b": _encode(net.value_b),
        "adv_w": [_encode(w) for w in net.adv_w],
        "adv_b": [_encode(b) for b in net.adv_b],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_network(path: str) -> BdqNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    net = BdqNetwork(doc["input_dim"], tuple(doc["hidden"]), doc["num_branches"],
                     doc["actions_per_branch"], rng=None)
    net.trunk_w = [_decode(o) for o in doc["trunk_w"]]
    net.trunk_b = [_decode(o) for o in doc["trunk_b"]]
    net.value_w = _decode(doc["value_w"])
    net.value_b = _decode(doc["value_b"])
    net.adv_w = [_decode(o) for o in doc["adv_w"]]
    net.adv_b = [_decode(o) for o in doc["adv_b"]]
    return net
