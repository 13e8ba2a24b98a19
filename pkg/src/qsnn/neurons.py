"""Discrete-time spiking neuron models.

Four kinds share one forward-Euler update:

* ``IF``: ``v += dt/tau * I``, reset to ``v_reset`` after a spike.
* ``SubIF``: same integration, reset subtracts the threshold so the
  overshoot ``v - v_thresh`` is kept.
* ``LIF``: ``v += dt/tau * (-(v - v_rest) + I)``, reset to ``v_reset``.
* ``StochasticLIF``: LIF integration with escape noise; a neuron fires with
  probability ``min(1, exp(beta_sigma * (v - v_thresh)) / tau_sigma)``.

Integration happens before the threshold test within a step. There is no
refractory period.
"""
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import DimensionError, NumericOverflowError, ValidationError
from .tensor import DTYPE

KINDS = ("IF", "SubIF", "LIF", "StochasticLIF")
_KIND_CODE = {kind: i for i, kind in enumerate(KINDS)}


@dataclass(frozen=True)
class NeuronConfig:
    kind: str = "SubIF"
    v_rest: float = 0.0
    v_thresh: float = 1.0
    v_reset: float = 0.0
    tau: float = 1.0
    tau_sigma: float = 1.0
    beta_sigma: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown neuron kind {self.kind!r}; expected one of {KINDS}")
        if not (self.v_thresh > self.v_reset and self.v_thresh > self.v_rest):
            raise ValidationError("v_thresh must exceed both v_reset and v_rest")
        for name in ("tau", "tau_sigma", "beta_sigma", "dt"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def stochastic(self):
        return self.kind == "StochasticLIF"

    def with_kind(self, kind):
        return replace(self, kind=kind)

    def to_dict(self):
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class LayerState:
    """Membrane potentials of one layer plus its private random stream."""

    v: np.ndarray
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @classmethod
    def at_rest(cls, shape, config, seed=0):
        return cls(np.full(shape, config.v_rest, dtype=DTYPE), np.random.default_rng(seed))

    def reset(self, config):
        self.v.fill(config.v_rest)


def spike_probability(v, config):
    """Escape-noise firing probability for a membrane potential ``v``."""
    v = np.asarray(v, dtype=np.float64)
    return np.minimum(1.0, np.exp(config.beta_sigma * (v - config.v_thresh)) / config.tau_sigma)


def _check_finite(v):
    bad = ~np.isfinite(v)
    if bad.any():
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise NumericOverflowError(idx, float(v.ravel()[idx]))


def step(state, current, config):
    """Advance ``state`` one time step in place; return ``(state, spikes)``.

    ``spikes`` is a uint8 array shaped like the membrane.
    """
    current = np.asarray(current, dtype=DTYPE)
    v = state.v
    if current.shape != v.shape:
        raise DimensionError(f"input current shape {current.shape} != membrane shape {v.shape}")
    k = DTYPE(config.dt / config.tau)
    if config.kind in ("IF", "SubIF"):
        v += k * current
    else:
        v += k * (-(v - DTYPE(config.v_rest)) + current)
    _check_finite(v)

    if config.stochastic:
        spikes = state.rng.random(v.shape) < spike_probability(v, config)
    else:
        spikes = v >= DTYPE(config.v_thresh)
    if config.kind == "SubIF":
        v[spikes] = DTYPE(config.v_reset) + (v[spikes] - DTYPE(config.v_thresh))
    else:
        v[spikes] = DTYPE(config.v_reset)
    return state, spikes.astype(np.uint8)


def constant_input_rate(current, config, nt, seed=0):
    """Spikes emitted by a single neuron driven by a fixed current for ``nt`` steps."""
    if nt < 1:
        raise ValidationError(f"nt must be at least 1, got {nt}")
    state = LayerState.at_rest((1,), config, seed)
    drive = np.full(1, current, dtype=DTYPE)
    count = 0
    for _ in range(nt):
        state, spikes = step(state, drive, config)
        count += int(spikes[0])
    return count


@numba.njit(cache=True)
def _run_layer(v, currents, constant, nt, code, k, v_rest, v_thresh, v_reset,
               thresh64, tau_sigma, beta_sigma, uniforms):
    # currents: (nt, n) or (1, n) when constant; uniforms: (nt, n) or (0, 0)
    n = v.shape[0]
    spikes = np.zeros((nt, n), dtype=np.uint8)
    for t in range(nt):
        row = 0 if constant else t
        for i in range(n):
            if code <= 1:
                vi = v[i] + k * currents[row, i]
            else:
                vi = v[i] + k * (-(v[i] - v_rest) + currents[row, i])
            if not np.isfinite(vi):
                v[i] = vi
                return spikes, t * n + i
            if code == 3:
                p = np.exp(beta_sigma * (np.float64(vi) - thresh64)) / tau_sigma
                fire = uniforms[t, i] < min(1.0, p)
            else:
                fire = vi >= v_thresh
            if fire:
                spikes[t, i] = 1
                if code == 1:
                    vi = v_reset + (vi - v_thresh)
                else:
                    vi = v_reset
            v[i] = vi
    return spikes, -1


def run_layer(state, currents, config, nt):
    """Simulate ``nt`` steps of one layer in a compiled loop.

    ``currents`` is either a per-step array ``(nt, *shape)`` or a constant
    array shaped like the membrane. Returns the ``(nt, *shape)`` uint8
    spike train and updates ``state`` in place. Numerically identical to
    calling :func:`step` ``nt`` times (same float32 arithmetic, same random
    draws for the stochastic kind).
    """
    shape = state.v.shape
    currents = np.asarray(currents, dtype=DTYPE)
    if currents.shape == shape:
        constant, cur = True, currents.reshape(1, -1)
    elif currents.shape == (nt, *shape):
        constant, cur = False, currents.reshape(nt, -1)
    else:
        raise DimensionError(f"currents shape {currents.shape} fits neither {shape} nor {(nt, *shape)}")
    flat_v = state.v.reshape(-1)
    if config.stochastic:
        uniforms = np.stack([state.rng.random(shape).reshape(-1) for _ in range(nt)])
    else:
        uniforms = np.zeros((0, 0))
    spikes, bad = _run_layer(
        flat_v, np.ascontiguousarray(cur), constant, nt, _KIND_CODE[config.kind],
        DTYPE(config.dt / config.tau), DTYPE(config.v_rest), DTYPE(config.v_thresh),
        DTYPE(config.v_reset), float(config.v_thresh), config.tau_sigma, config.beta_sigma, uniforms,
    )
    if bad >= 0:
        idx = bad % flat_v.shape[0]
        raise NumericOverflowError(idx, float(flat_v[idx]))
    return spikes.reshape(nt, *shape)
