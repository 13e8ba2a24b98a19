"""Deep Q-learning for dense ReLU networks with hand-written backprop.

Observations from the difference-frame pipelines are very sparse (a ball trail
and a paddle edge), so the replay memory stores them as index/value pairs and
the first layer is evaluated only over the union of input columns active in a
minibatch. This is exact; it only skips multiplications by zero.
"""
import logging
import math
from dataclasses import asdict, dataclass

import numba
import numpy as np

from . import env as breakout
from .ann import LayerSpec, NetworkDescription, shallow_preset
from .errors import DimensionError, ValidationError
from .tensor import DTYPE

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseObs:
    """Non-zero entries of a flattened observation."""

    index: np.ndarray
    value: np.ndarray
    size: int

    @classmethod
    def from_dense(cls, obs):
        flat = np.asarray(obs, dtype=DTYPE).reshape(-1)
        idx = np.flatnonzero(flat).astype(np.int32)
        return cls(idx, flat[idx], flat.shape[0])

    def dense(self):
        out = np.zeros(self.size, dtype=DTYPE)
        out[self.index] = self.value
        return out


@dataclass(frozen=True)
class Transition:
    s: SparseObs
    a: int
    r: float
    s_next: SparseObs
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValidationError(f"replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def add(self, transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def sample_indices(self, batch_size, rng):
        return rng.integers(0, len(self._items), size=batch_size)

    def sample(self, batch_size, rng):
        if not self._items:
            raise ValidationError("cannot sample from an empty replay buffer")
        return [self._items[i] for i in self.sample_indices(batch_size, rng)]


@dataclass(frozen=True)
class PackedBatch:
    """A minibatch of sparse observations in CSR layout.

    Row ``b`` owns entries ``indptr[b]:indptr[b+1]`` of ``indices`` (input
    positions) and ``values``; ``local`` maps each entry onto ``cols``, the
    sorted union of active inputs.
    """

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    cols: np.ndarray
    local: np.ndarray

    def __len__(self):
        return self.indptr.shape[0] - 1


def pack(observations):
    size = observations[0].size
    if any(o.size != size for o in observations):
        raise DimensionError("observations in a batch differ in size")
    indices = np.concatenate([o.index for o in observations]).astype(np.int64)
    values = np.concatenate([o.value for o in observations]).astype(DTYPE)
    indptr = np.zeros(len(observations) + 1, dtype=np.int64)
    np.cumsum([o.index.shape[0] for o in observations], out=indptr[1:])
    cols = np.unique(indices)
    return PackedBatch(indptr, indices, values, cols, np.searchsorted(cols, indices))


@numba.njit(cache=True)
def _sparse_matmul(indptr, indices, values, weights_t, bias):
    n, m = indptr.shape[0] - 1, weights_t.shape[1]
    out = np.empty((n, m), dtype=weights_t.dtype)
    for b in range(n):
        for j in range(m):
            out[b, j] = bias[j]
        for k in range(indptr[b], indptr[b + 1]):
            row, x = indices[k], values[k]
            for j in range(m):
                out[b, j] += x * weights_t[row, j]
    return out


@numba.njit(cache=True)
def _sparse_outer(indptr, local, values, delta, n_cols):
    m = delta.shape[1]
    grad = np.zeros((n_cols, m), dtype=delta.dtype)
    for b in range(indptr.shape[0] - 1):
        for k in range(indptr[b], indptr[b + 1]):
            row, x = local[k], values[k]
            for j in range(m):
                grad[row, j] += x * delta[b, j]
    return grad


class DenseQNet:
    """Mutable training-side copy of a dense network.

    Weights are held transposed (``n_in x n_out``) so the first layer can
    gather the rows of active input pixels.
    """

    def __init__(self, weights_t, biases, input_shape):
        self.weights_t = [np.ascontiguousarray(w, dtype=DTYPE) for w in weights_t]
        self.biases = [np.ascontiguousarray(b, dtype=DTYPE) for b in biases]
        self.input_shape = tuple(input_shape)

    @classmethod
    def from_description(cls, net):
        if any(layer.kind != "dense" for layer in net.layers):
            raise ValidationError("only dense networks can be trained")
        return cls([layer.weights.T for layer in net.layers], [layer.bias for layer in net.layers], net.input_shape)

    def to_description(self):
        last = len(self.weights_t) - 1
        layers = [
            LayerSpec("dense", w.T.copy(), b.copy(), 1, "identity" if i == last else "relu")
            for i, (w, b) in enumerate(zip(self.weights_t, self.biases))
        ]
        return NetworkDescription(tuple(layers), self.input_shape, self.biases[-1].shape[0])

    def copy(self):
        return DenseQNet([w.copy() for w in self.weights_t], [b.copy() for b in self.biases], self.input_shape)

    def load_from(self, other):
        for dst, src in zip(self.weights_t + self.biases, other.weights_t + other.biases):
            dst[...] = src

    @property
    def params(self):
        return self.weights_t + self.biases

    def forward(self, batch):
        """All layer outputs for a packed batch; the last entry is Q."""
        outs = []
        h = _sparse_matmul(batch.indptr, batch.indices, batch.values, self.weights_t[0], self.biases[0])
        for w, b in zip(self.weights_t[1:], self.biases[1:]):
            h = np.maximum(h, 0)
            outs.append(h)
            h = h @ w + b
        outs.append(h)
        return outs

    def q_values(self, obs):
        o = obs if isinstance(obs, SparseObs) else SparseObs.from_dense(obs)
        h = o.value @ self.weights_t[0][o.index] + self.biases[0]
        for w, b in zip(self.weights_t[1:], self.biases[1:]):
            h = np.maximum(h, 0) @ w + b
        return h

    def backward(self, batch, outs, grad_q):
        """Gradients of the loss given dLoss/dQ; first-layer weight grad covers ``batch.cols`` rows only."""
        n = len(self.weights_t)
        grads_w, grads_b = [None] * n, [None] * n
        delta = grad_q
        for i in range(n - 1, 0, -1):
            h = outs[i - 1]
            grads_w[i] = h.T @ delta
            grads_b[i] = delta.sum(axis=0)
            delta = (delta @ self.weights_t[i].T) * (h > 0)
        grads_w[0] = _sparse_outer(batch.indptr, batch.local, batch.values,
                                   np.ascontiguousarray(delta, dtype=DTYPE), batch.cols.shape[0])
        grads_b[0] = delta.sum(axis=0)
        return grads_w, grads_b


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    learning_rate: float = 0.01
    optimizer: str = "sgd"
    rms_decay: float = 0.95
    rms_eps: float = 0.01
    batch_size: int = 32
    train_every: int = 4
    target_sync_interval: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    episodes: int = 2000
    replay_capacity: int = 20_000
    replay_warmup: int = 2000
    hidden: int = 1000
    input_mode: str = "grayscale"
    clip_rewards: bool = True
    life_loss_terminal: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValidationError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.replay_warmup > self.replay_capacity:
            raise ValidationError("replay_warmup cannot exceed replay_capacity")
        if self.optimizer not in ("sgd", "rmsprop"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.episodes < 0 or self.train_every < 1:
            raise ValidationError("batch_size and train_every must be positive, episodes nonnegative")

    @classmethod
    def paper_scale(cls, **overrides):
        base = dict(replay_capacity=200_000, replay_warmup=50_000, episodes=30_000)
        base.update(overrides)
        return cls(**base)

    def epsilon(self, step):
        """Exploration rate after ``step`` post-warmup environment steps."""
        if step >= self.epsilon_decay_steps:
            return self.epsilon_end
        frac = step / self.epsilon_decay_steps
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def to_dict(self):
        return asdict(self)


def td_target(r, s_next, done, target_net, gamma):
    """Bellman regression target for one transition."""
    if done or gamma == 0:
        return float(r)
    if isinstance(target_net, DenseQNet):
        q = target_net.q_values(s_next)
    else:
        from .ann import ann_forward
        q = ann_forward(target_net, s_next.dense().reshape(target_net.input_shape)
                        if isinstance(s_next, SparseObs) else s_next)
    return float(r) + gamma * float(np.max(q))


class Optimizer:
    def __init__(self, config, params):
        self.config = config
        self.cache = [np.zeros_like(p) for p in params] if config.optimizer == "rmsprop" else None

    def apply(self, net, grads_w, grads_b, cols):
        lr = DTYPE(self.config.learning_rate)
        decay = DTYPE(self.config.rms_decay)
        eps = DTYPE(self.config.rms_eps)
        n = len(net.weights_t)
        for i in range(n):
            for j, (param, grad) in enumerate(((net.weights_t[i], grads_w[i]), (net.biases[i], grads_b[i]))):
                param2 = param.reshape(param.shape[0], -1)
                grad2 = np.ascontiguousarray(grad, dtype=DTYPE).reshape(grad.shape[0], -1)
                rows = cols if (i == 0 and j == 0) else np.arange(param.shape[0])
                if self.cache is None:
                    _sgd_rows(param2, grad2, rows, lr)
                else:
                    cache = self.cache[i if j == 0 else n + i]
                    _rmsprop_rows(param2, cache.reshape(param2.shape), grad2, rows, lr, decay, eps)


@numba.njit(cache=True)
def _sgd_rows(param, grad, rows, lr):
    for r in range(rows.shape[0]):
        row = rows[r]
        for c in range(param.shape[1]):
            param[row, c] -= lr * grad[r, c]


@numba.njit(cache=True)
def _rmsprop_rows(param, cache, grad, rows, lr, decay, eps):
    for r in range(rows.shape[0]):
        row = rows[r]
        for c in range(param.shape[1]):
            g = grad[r, c]
            m = decay * cache[row, c] + (1 - decay) * g * g
            cache[row, c] = m
            param[row, c] -= lr * g / np.sqrt(m + eps)


def train_step(net, target_net, batch, config, optimizer=None):
    """One gradient step on the mean squared TD-error of ``batch``.

    Mutates ``net`` in place and returns ``(net, loss)`` where ``loss`` is
    the pre-update mean squared TD-error.
    """
    if not batch:
        raise ValidationError("train_step needs a non-empty batch")
    optimizer = optimizer or Optimizer(config, net.params)
    packed = pack([t.s for t in batch])
    packed_next = pack([t.s_next for t in batch])
    actions = np.array([t.a for t in batch])
    rewards = np.array([t.r for t in batch], dtype=DTYPE)
    done = np.array([t.done for t in batch])

    q_next = target_net.forward(packed_next)[-1].max(axis=1)
    targets = rewards + DTYPE(config.gamma) * q_next * (~done)
    outs = net.forward(packed)
    rows = np.arange(len(batch))
    err = outs[-1][rows, actions] - targets
    loss = float(np.mean(err.astype(np.float64) ** 2))
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite TD loss {loss}; last targets {targets[:4]}")
    grad_q = np.zeros_like(outs[-1])
    grad_q[rows, actions] = 2.0 * err / len(batch)
    grads_w, grads_b = net.backward(packed, outs, grad_q)
    optimizer.apply(net, grads_w, grads_b, packed.cols)
    return net, loss


def greedy_action(q):
    return int(np.argmax(q))


def train(config, seed=0, initial=None, on_checkpoint=None):
    """Train a shallow Q-network on miniature Breakout.

    Returns ``(NetworkDescription, log)`` where ``log`` holds one dict per
    training episode with keys episode, reward, epsilon, mean_td_error,
    steps.
    """
    rng = np.random.default_rng(seed)
    base = initial or shallow_preset(seed=int(rng.integers(2**31)), hidden=config.hidden,
                                     n_actions=breakout.N_ACTIONS)
    net = DenseQNet.from_description(base)
    target = net.copy()
    optimizer = Optimizer(config, net.params)
    buffer = ReplayBuffer(config.replay_capacity)
    stack = breakout.FrameStack(config.input_mode)

    def play_episode(epsilon_fn, learn):
        nonlocal total_steps
        state = breakout.env_reset(int(rng.integers(2**31)))
        obs = SparseObs.from_dense(stack.reset(state.frame))
        ep_reward, losses, eps, done = 0.0, [], epsilon_fn(), False
        while not done:
            eps = epsilon_fn()
            if rng.random() < eps:
                action = int(rng.integers(breakout.N_ACTIONS))
            else:
                action = greedy_action(net.q_values(obs))
            lives = state.lives
            state, reward, done = breakout.env_step(state, action)
            nxt = SparseObs.from_dense(stack.push(state.frame))
            r = float(np.clip(reward, -1, 1)) if config.clip_rewards else reward
            # a lost life ends the bootstrapped return but not the game
            lost = config.life_loss_terminal and state.lives < lives
            buffer.add(Transition(obs, action, r, nxt, done or lost))
            obs = nxt
            ep_reward += reward
            if learn:
                total_steps += 1
                if total_steps % config.train_every == 0:
                    _, loss = train_step(net, target, buffer.sample(config.batch_size, rng), config, optimizer)
                    losses.append(loss)
                if total_steps % config.target_sync_interval == 0:
                    target.load_from(net)
            elif len(buffer) >= config.replay_warmup:
                break
        return ep_reward, eps, (float(np.mean(losses)) if losses else float("nan"))

    total_steps = 0
    while len(buffer) < config.replay_warmup:
        play_episode(lambda: 1.0, learn=False)

    history = []
    for episode in range(config.episodes):
        reward, eps, td = play_episode(lambda: config.epsilon(total_steps), learn=True)
        history.append({"episode": episode, "reward": reward, "epsilon": eps,
                        "mean_td_error": td, "steps": total_steps})
        if episode % 100 == 0:
            recent = [h["reward"] for h in history[-100:]]
            log.info("episode %d reward %.1f avg100 %.2f eps %.3f td %.4f",
                     episode, reward, np.mean(recent), eps, td)
        if on_checkpoint and config.checkpoint_every and (episode + 1) % config.checkpoint_every == 0:
            on_checkpoint(episode + 1, net.to_description())
    return net.to_description(), history
