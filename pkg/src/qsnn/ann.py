"""ReLU Q-networks: description, inference and weight files."""
import base64
import binascii
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError, ValidationError
from .tensor import DTYPE, as_tensor, conv2d_forward, conv_output_size, dense_forward, relu

FORMAT_VERSION = 1
LAYER_KINDS = ("dense", "conv2d")
ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        ndim = 2 if self.kind == "dense" else 4
        object.__setattr__(self, "weights", as_tensor(self.weights, ndim))
        object.__setattr__(self, "bias", as_tensor(self.bias, 1))
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(f"bias {self.bias.shape} does not match weights {self.weights.shape}")
        if self.stride < 1:
            raise ValidationError(f"stride must be positive, got {self.stride}")

    @property
    def n_out(self):
        return self.weights.shape[0]

    def output_shape(self, input_shape):
        if self.kind == "dense":
            n_in = int(np.prod(input_shape))
            if n_in != self.weights.shape[1]:
                raise DimensionError(f"dense layer expects {self.weights.shape[1]} inputs, got shape {tuple(input_shape)}")
            return (self.n_out,)
        k, c, kh, kw = self.weights.shape
        if len(input_shape) != 3 or input_shape[0] != c:
            raise DimensionError(f"conv layer with kernels {self.weights.shape} cannot take input {tuple(input_shape)}")
        h, w = input_shape[1:]
        if h < kh or w < kw:
            raise DimensionError(f"kernel {self.weights.shape} larger than input {tuple(input_shape)}")
        return (k, conv_output_size(h, kh, self.stride), conv_output_size(w, kw, self.stride))

    def linear(self, x):
        """Pre-activation for a single input."""
        if self.kind == "dense":
            flat = np.asarray(x, dtype=DTYPE).reshape(-1)
            idx = np.flatnonzero(flat)
            if flat.shape[0] == self.weights.shape[1] and idx.shape[0] * 8 < flat.shape[0]:
                # difference-frame observations are mostly zeros
                return self.weights[:, idx] @ flat[idx] + self.bias
            return dense_forward(flat, self.weights, self.bias)
        return conv2d_forward(x, self.weights, self.bias, self.stride)

    def linear_batch(self, xs):
        if self.kind == "dense":
            return dense_forward(xs.reshape(xs.shape[0], -1), self.weights, self.bias)
        return conv2d_forward(xs, self.weights, self.bias, self.stride)

    def scaled(self, factor, bias_factor=None):
        """Copy with weights times ``factor`` and bias times ``bias_factor`` (default ``factor``)."""
        bias_factor = factor if bias_factor is None else bias_factor
        return LayerSpec(self.kind, self.weights * DTYPE(factor), self.bias * DTYPE(bias_factor),
                         self.stride, self.activation)

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (self.kind, self.stride, self.activation) == (other.kind, other.stride, other.activation) \
            and _bit_equal(self.weights, other.weights) and _bit_equal(self.bias, other.bias)


def _bit_equal(a, b):
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True, eq=False)
class NetworkDescription:
    layers: tuple
    input_shape: tuple
    n_actions: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if not self.layers:
            raise ValidationError("a network needs at least one layer")
        shapes = self.layer_shapes()
        if shapes[-1] != (self.n_actions,):
            raise DimensionError(f"last layer outputs {shapes[-1]}, expected ({self.n_actions},)")
        for i, layer in enumerate(self.layers):
            want = "identity" if i == len(self.layers) - 1 else "relu"
            if layer.activation != want:
                raise ValidationError(f"layer {i} must use {want} activation, has {layer.activation}")

    def layer_shapes(self):
        """Output shape of every layer, in order."""
        shapes, shape = [], self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except DimensionError as exc:
                raise DimensionError(f"layer {i}: {exc}") from None
            shapes.append(shape)
        return shapes

    def __len__(self):
        return len(self.layers)

    def __eq__(self, other):
        if not isinstance(other, NetworkDescription):
            return NotImplemented
        return self.input_shape == other.input_shape and self.n_actions == other.n_actions \
            and len(self.layers) == len(other.layers) \
            and all(a == b for a, b in zip(self.layers, other.layers))

    def with_layers(self, layers):
        return NetworkDescription(tuple(layers), self.input_shape, self.n_actions)


def _check_observation(net, observation, batched=False):
    observation = np.asarray(observation, dtype=DTYPE)
    shape = observation.shape[1:] if batched else observation.shape
    if shape != net.input_shape:
        raise DimensionError(f"observation shape {observation.shape} does not match network input {net.input_shape}")
    return observation


def ann_forward(net, observation):
    """Q-value estimates for one observation."""
    x = _check_observation(net, observation)
    for layer in net.layers:
        x = layer.linear(x)
        if layer.activation == "relu":
            x = relu(x)
    return x


def layer_activations(net, observations):
    """Per-layer post-activation outputs for a batch of observations.

    Returns a list with one ``(N, *layer_shape)`` array per layer.
    """
    x = _check_observation(net, observations, batched=True)
    outs = []
    for layer in net.layers:
        x = layer.linear_batch(x)
        if layer.activation == "relu":
            x = relu(x)
        outs.append(x)
    return outs


def _init_layer(rng, kind, shape, fan_in, activation, stride=1):
    bound = np.sqrt(6.0 / fan_in) if activation == "relu" else np.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
    return LayerSpec(kind, w, np.zeros(shape[0], dtype=DTYPE), stride, activation)


def shallow_preset(seed=0, hidden=1000, n_actions=4, input_shape=(80, 80)):
    """80x80 input, one dense ReLU hidden layer, dense identity output."""
    rng = np.random.default_rng(seed)
    n_in = int(np.prod(input_shape))
    layers = (
        _init_layer(rng, "dense", (hidden, n_in), n_in, "relu"),
        _init_layer(rng, "dense", (n_actions, hidden), hidden, "identity"),
    )
    return NetworkDescription(layers, input_shape, n_actions)


def deep_preset(seed=0, n_actions=4):
    """Three-conv-layer DQN stack over 4x84x84 frames, then 512 ReLU and the action layer."""
    rng = np.random.default_rng(seed)
    layers = (
        _init_layer(rng, "conv2d", (32, 4, 8, 8), 4 * 8 * 8, "relu", stride=4),
        _init_layer(rng, "conv2d", (64, 32, 4, 4), 32 * 4 * 4, "relu", stride=2),
        _init_layer(rng, "conv2d", (64, 64, 3, 3), 64 * 3 * 3, "relu", stride=1),
        _init_layer(rng, "dense", (512, 64 * 7 * 7), 64 * 7 * 7, "relu"),
        _init_layer(rng, "dense", (n_actions, 512), 512, "identity"),
    )
    return NetworkDescription(layers, (4, 84, 84), n_actions)


def _encode(arr):
    return base64.b64encode(np.asarray(arr, dtype="<f4").tobytes()).decode("ascii")


def network_to_dict(net):
    return {
        "format_version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "n_actions": net.n_actions,
        "layers": [
            {
                "kind": layer.kind,
                "shape": list(layer.weights.shape),
                "stride": layer.stride,
                "activation": layer.activation,
                "weights": _encode(layer.weights),
                "bias": _encode(layer.bias),
            }
            for layer in net.layers
        ],
    }


def _decode(text, shape, what):
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, ValueError, AttributeError) as exc:
        raise ValidationError(f"{what}: invalid base64 payload ({exc})") from None
    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise ValidationError(f"{what}: holds {len(raw) // 4} values, shape {list(shape)} needs {count}")
    return np.frombuffer(raw, dtype="<f4").astype(DTYPE).reshape(shape)


def network_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported weight file (format_version must be {FORMAT_VERSION})")
    try:
        input_shape, n_actions, entries = doc["input_shape"], doc["n_actions"], doc["layers"]
    except KeyError as exc:
        raise ValidationError(f"weight file missing field {exc}") from None
    layers = []
    for i, entry in enumerate(entries):
        what = f"layer {i} ({entry.get('kind', '?')})"
        try:
            shape = tuple(entry["shape"])
            weights = _decode(entry["weights"], shape, f"{what} weights")
            bias = _decode(entry["bias"], (shape[0],), f"{what} bias")
            layers.append(LayerSpec(entry["kind"], weights, bias, int(entry.get("stride", 1)), entry["activation"]))
        except KeyError as exc:
            raise ValidationError(f"{what}: missing field {exc}") from None
        except (DimensionError, ValidationError) as exc:
            if str(exc).startswith(what):
                raise
            raise ValidationError(f"{what}: {exc}") from None
    return NetworkDescription(tuple(layers), tuple(input_shape), int(n_actions))


def save_weights(net, path):
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def load_weights(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"cannot parse weight file {path}: {exc.msg}", offset=exc.pos) from None
    return network_from_dict(doc)
