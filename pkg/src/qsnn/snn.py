"""Spiking twins of ReLU Q-networks.

Every ReLU unit (and every output unit) becomes a spiking neuron. Layer ``l``
receives ``scale[l] * W_l @ spikes_{l-1}(t-1) + bias_scale[l] * b_l`` as input
current at step ``t``; the first layer sees the observation itself as a
constant input on every step. Output spike counts over ``nt`` steps are the Q
estimates.

Spike rates of layer ``l`` approximate the ReLU activations times the running
product ``scale[0] * ... * scale[l]``. With ``bias_scaling="cumulative"``
(the default) each bias is multiplied by that same running product, which
keeps weights and biases consistent and makes the rates track the ANN
exactly up to quantization. ``bias_scaling="layer"`` multiplies each bias by
its own layer's scale only.

Because the net is feed-forward with a one-step delay between layers, a whole
layer can be simulated for all ``nt`` steps before the next one starts. That
is what :func:`snn_forward` does; :func:`snn_forward_stepwise` is the literal
time-major loop and serves as a cross-check.
"""
from dataclasses import dataclass, field

import numpy as np

from .ann import NetworkDescription
from .errors import DimensionError, ValidationError
from .neurons import LayerState, NeuronConfig, run_layer, step
from .tensor import DTYPE

DEFAULT_NT = 500
BIAS_SCALINGS = ("cumulative", "layer")


@dataclass(frozen=True)
class ScaleVector:
    scales: tuple

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        if not scales:
            raise ValidationError("a scale vector needs at least one entry")
        if not all(np.isfinite(s) and s > 0 for s in scales):
            raise ValidationError(f"every scale must be a positive finite number, got {list(scales)}")
        object.__setattr__(self, "scales", scales)

    def __len__(self):
        return len(self.scales)

    def __iter__(self):
        return iter(self.scales)

    def __getitem__(self, i):
        return self.scales[i]

    @classmethod
    def ones(cls, n):
        return cls((1.0,) * n)


@dataclass
class SpikingNetwork:
    base: NetworkDescription
    scales: ScaleVector
    neurons: tuple
    nt: int = DEFAULT_NT
    seed: int = 0
    bias_scaling: str = "cumulative"
    layers: tuple = field(init=False, repr=False)
    shapes: list = field(init=False, repr=False)

    def __post_init__(self):
        self.layers = tuple(layer.scaled(s, b) for layer, s, b in zip(self.base.layers, self.scales, self.bias_scales))
        self.shapes = self.base.layer_shapes()
        # dense weights transposed for row gathers on sparse inputs
        self._dense_t = {
            i: np.ascontiguousarray(layer.weights.T)
            for i, layer in enumerate(self.layers) if layer.kind == "dense"
        }

    @property
    def bias_scales(self):
        if self.bias_scaling == "layer":
            return tuple(self.scales)
        return tuple(np.cumprod(self.scales))

    @property
    def n_actions(self):
        return self.base.n_actions

    def fresh_states(self, seed=None):
        seed = self.seed if seed is None else seed
        seqs = np.random.SeedSequence(seed).spawn(len(self.layers))
        return [
            LayerState(np.full(shape, cfg.v_rest, dtype=DTYPE), np.random.default_rng(ss))
            for shape, cfg, ss in zip(self.shapes, self.neurons, seqs)
        ]

    def input_current(self, observation):
        """Constant current into the first layer for one observation."""
        layer = self.layers[0]
        if layer.kind == "dense":
            flat = observation.reshape(-1)
            idx = np.flatnonzero(flat)
            if idx.shape[0] * 4 < flat.shape[0]:
                return flat[idx] @ self._dense_t[0][idx] + layer.bias
        return layer.linear(observation)

    def spike_currents(self, i, spikes):
        """Per-step currents into layer ``i`` from the previous layer's spike train."""
        layer = self.layers[i]
        nt = spikes.shape[0]
        delayed = np.zeros(spikes.shape, dtype=DTYPE)
        delayed[1:] = spikes[:-1]
        if layer.kind == "dense":
            return delayed.reshape(nt, -1) @ self._dense_t[i] + layer.bias
        return layer.linear_batch(delayed)


def convert(net, scales, neuron=None, nt=DEFAULT_NT, seed=0, bias_scaling="cumulative"):
    """Build the spiking twin of ``net`` with per-layer weight scales.

    ``neuron`` is one :class:`NeuronConfig` for all layers or a sequence with
    one entry per layer; it defaults to subtractive IF.
    """
    if bias_scaling not in BIAS_SCALINGS:
        raise ValidationError(f"bias_scaling must be one of {BIAS_SCALINGS}, got {bias_scaling!r}")
    if not isinstance(scales, ScaleVector):
        scales = ScaleVector(scales)
    if len(scales) != len(net.layers):
        raise ValidationError(f"{len(scales)} scales given for a {len(net.layers)}-layer network")
    if nt < 1:
        raise ValidationError(f"nt must be at least 1, got {nt}")
    for i, layer in enumerate(net.layers[:-1]):
        if layer.activation != "relu":
            raise ValidationError(f"hidden layer {i} is not ReLU")
    if neuron is None:
        neuron = NeuronConfig("SubIF")
    neurons = tuple(neuron) if isinstance(neuron, (list, tuple)) else (neuron,) * len(net.layers)
    if len(neurons) != len(net.layers):
        raise ValidationError(f"{len(neurons)} neuron configs for a {len(net.layers)}-layer network")
    return SpikingNetwork(net, scales, neurons, nt, seed, bias_scaling)


def _check_obs(snn, observation):
    observation = np.asarray(observation, dtype=DTYPE)
    if observation.shape != snn.base.input_shape:
        raise DimensionError(f"observation shape {observation.shape} does not match network input {snn.base.input_shape}")
    return observation


def snn_forward(snn, observation, seed=None):
    """Simulate ``snn.nt`` steps from rest for one observation.

    Returns ``(q_estimates, spike_counts)``: the output layer's spike counts
    as float32, and a list of per-layer count arrays.
    """
    observation = _check_obs(snn, observation)
    states = snn.fresh_states(seed)
    counts = []
    spikes = run_layer(states[0], snn.input_current(observation), snn.neurons[0], snn.nt)
    counts.append(spikes.sum(axis=0, dtype=np.int64))
    for i in range(1, len(snn.layers)):
        currents = snn.spike_currents(i, spikes)
        spikes = run_layer(states[i], currents, snn.neurons[i], snn.nt)
        counts.append(spikes.sum(axis=0, dtype=np.int64))
    return counts[-1].astype(DTYPE), counts


def snn_forward_stepwise(snn, observation, seed=None):
    """Reference time-major simulation; same results as :func:`snn_forward`."""
    observation = _check_obs(snn, observation)
    states = snn.fresh_states(seed)
    drive = snn.layers[0].linear(observation)
    prev = [np.zeros(shape, dtype=DTYPE) for shape in snn.shapes]
    counts = [np.zeros(shape, dtype=np.int64) for shape in snn.shapes]
    for _ in range(snn.nt):
        new = []
        for i, (layer, state, cfg) in enumerate(zip(snn.layers, states, snn.neurons)):
            current = drive if i == 0 else layer.linear(prev[i - 1]).reshape(snn.shapes[i])
            _, s = step(state, current, cfg)
            counts[i] += s
            new.append(s.astype(DTYPE))
        prev = new
    return counts[-1].astype(DTYPE), counts


@dataclass(frozen=True)
class Policy:
    """Greedy when ``epsilon`` is 0, otherwise epsilon-greedy."""

    epsilon: float = 0.0

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValidationError(f"epsilon must be in [0, 1], got {self.epsilon}")

    @property
    def name(self):
        return "greedy" if self.epsilon == 0 else f"epsilon_greedy({self.epsilon:g})"

    @classmethod
    def parse(cls, text):
        text = str(text).strip().lower()
        if text == "greedy":
            return cls(0.0)
        for prefix in ("epsilon_greedy:", "epsilon-greedy:", "eps:"):
            if text.startswith(prefix):
                return cls(float(text[len(prefix):]))
        raise ValidationError(f"unknown policy {text!r}; use 'greedy' or 'eps:<epsilon>'")


GREEDY = Policy(0.0)


def select_action(q_estimates, policy=GREEDY, rng=None):
    """Argmax with lowest-index tie-break, or a uniform action with probability epsilon."""
    q = np.asarray(q_estimates).reshape(-1)
    if q.shape[0] == 0:
        raise ValidationError("q_estimates is empty")
    if policy.epsilon > 0:
        if rng is None:
            raise ValidationError("epsilon-greedy selection needs a random generator")
        if rng.random() < policy.epsilon:
            return int(rng.integers(q.shape[0]))
    return int(np.argmax(q))
