"""Choosing per-layer weight scales for conversion.

Three routes: exhaustive grid search, global-best particle swarm
optimization, and activation-percentile normalization (no search at all).
Search positions live on a log10 axis by default so that multiplicative
scales are explored evenly.
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ann import layer_activations
from .errors import ValidationError
from .evaluation import SnnAgent, play
from .snn import GREEDY, ScaleVector, convert

log = logging.getLogger(__name__)

GRID_CAP = 10_000


def default_swarm_size(dims):
    # 2*sqrt(D) rounded half up: 13 particles for D=2, 14 for D=5
    return 10 + int(math.floor(2 * math.sqrt(dims) + 0.5))


@dataclass
class SwarmConfig:
    dims: int
    swarm_size: int = None
    iterations: int = 20
    low: float = 0.1
    high: float = 100.0
    log_scale: bool = True
    inertia: float = 0.7298
    cognitive: float = 1.49618
    social: float = 1.49618
    fitness_episodes: int = 100
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.dims < 1:
            raise ValidationError(f"dims must be positive, got {self.dims}")
        if self.swarm_size is None:
            self.swarm_size = default_swarm_size(self.dims)
        if self.swarm_size < 2 or self.iterations < 1:
            raise ValidationError("a swarm needs at least 2 particles and 1 iteration")
        if not self.low < self.high or (self.log_scale and self.low <= 0):
            raise ValidationError(f"bad bounds [{self.low}, {self.high}]")

    @property
    def bounds(self):
        """Search-space bounds (log10 of the scale bounds when ``log_scale``)."""
        if self.log_scale:
            return math.log10(self.low), math.log10(self.high)
        return self.low, self.high

    def to_point(self, position):
        return np.power(10.0, position) if self.log_scale else np.asarray(position, dtype=np.float64)

    def from_point(self, point):
        point = np.asarray(point, dtype=np.float64)
        return np.log10(point) if self.log_scale else point

    def to_dict(self):
        return asdict(self)


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float = -math.inf


@dataclass
class SwarmResult:
    best_point: np.ndarray
    best_fitness: float
    history: list
    evaluations: int
    particles: list = field(repr=False)

    @property
    def scales(self):
        return ScaleVector(self.best_point)


def _evaluate_all(fitness, points, workers):
    if workers <= 1:
        return [float(fitness(p)) for p in points]
    with ThreadPoolExecutor(workers) as pool:
        return [float(f) for f in pool.map(fitness, points)]


def pso_optimize(config, fitness, initial=()):
    """Global-best PSO maximizing ``fitness(point)``.

    ``initial`` optionally pins the first particles to given points (e.g.
    normalization scales). ``history[0]`` is the best fitness of the initial
    swarm and ``history[i]`` the global best after iteration ``i``. All
    particles of an iteration are scored before any best is updated, so
    parallel and serial evaluation give the same result.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.bounds
    span = hi - lo
    d, n = config.dims, config.swarm_size
    pos = rng.uniform(lo, hi, size=(n, d))
    vel = rng.uniform(-span, span, size=(n, d)) * 0.5
    for i, point in enumerate(initial):
        if i >= n:
            break
        pos[i] = np.clip(config.from_point(point), lo, hi)

    fit = _evaluate_all(fitness, [config.to_point(p) for p in pos], config.workers)
    particles = [Particle(pos[i].copy(), vel[i].copy(), pos[i].copy(), fit[i]) for i in range(n)]
    g = int(np.argmax(fit))
    gbest, gfit = pos[g].copy(), fit[g]
    history, evaluations = [gfit], n

    for it in range(config.iterations):
        for p in particles:
            r1, r2 = rng.random(d), rng.random(d)
            p.velocity = (config.inertia * p.velocity
                          + config.cognitive * r1 * (p.best_position - p.position)
                          + config.social * r2 * (gbest - p.position))
            p.velocity = np.clip(p.velocity, -span, span)
            p.position = p.position + p.velocity
            hit = (p.position < lo) | (p.position > hi)
            p.position = np.clip(p.position, lo, hi)
            p.velocity[hit] = 0.0
        fit = _evaluate_all(fitness, [config.to_point(p.position) for p in particles], config.workers)
        evaluations += n
        for p, f in zip(particles, fit):
            if f > p.best_fitness:
                p.best_fitness, p.best_position = f, p.position.copy()
        g = int(np.argmax([p.best_fitness for p in particles]))
        if particles[g].best_fitness > gfit:
            gfit, gbest = particles[g].best_fitness, particles[g].best_position.copy()
        history.append(gfit)
        log.info("pso iteration %d best %.3f", it + 1, gfit)
    return SwarmResult(config.to_point(gbest), gfit, history, evaluations, particles)


@dataclass
class GridResult:
    best_point: np.ndarray
    best_fitness: float
    evaluations: int

    @property
    def scales(self):
        return ScaleVector(self.best_point)


def grid_points(low, high, steps, log_scale=True):
    if steps < 1:
        raise ValidationError(f"steps must be at least 1, got {steps}")
    return np.geomspace(low, high, steps) if log_scale else np.linspace(low, high, steps)


def grid_search(bounds, steps, fitness, log_scale=True, cap=GRID_CAP):
    """Score every point of a Cartesian grid; ties go to the lexicographically smallest point.

    ``bounds`` is a ``(low, high)`` pair per dimension and ``steps`` the
    number of points per dimension (an int applies to all).
    """
    if isinstance(steps, int):
        steps = [steps] * len(bounds)
    if len(steps) != len(bounds):
        raise ValidationError(f"{len(steps)} step counts for {len(bounds)} dimensions")
    axes = [grid_points(lo, hi, s, log_scale) for (lo, hi), s in zip(bounds, steps)]
    size = math.prod(len(a) for a in axes)
    if size > cap:
        raise ValidationError(f"grid has {size} points, over the cap of {cap}; use fewer steps or PSO")
    best, best_fit = None, -math.inf
    for point in itertools.product(*[sorted(a) for a in axes]):
        f = float(fitness(np.array(point)))
        if f > best_fit:
            best, best_fit = np.array(point), f
    return GridResult(best, best_fit, size)


def _percentile_nonzero(values, p):
    values = np.asarray(values, dtype=np.float64).ravel()
    values = values[values > 0]
    return float(np.percentile(values, p)) if values.size else 0.0


def normalize_scales(net, observations, percentile=99.9, threshold=1.0):
    """Per-layer scales ``lambda_{l-1} / lambda_l`` from activation percentiles.

    ``lambda_l`` is the ``percentile``-th percentile of layer ``l``'s
    positive activations over ``observations``; ``lambda_0`` uses the
    positive input values, capped at ``threshold`` so that scaled
    activations never sit above the firing threshold (grayscale frames reach
    1.5). Pass ``threshold=None`` to use the raw input percentile. Zeros are
    excluded because sparse inputs would otherwise pull every percentile to
    0. A layer that never activates gets scale 1 and a warning.
    """
    observations = np.asarray(observations)
    if observations.shape[0] == 0:
        raise ValidationError("normalize_scales needs at least one observation")
    if not 0 < percentile <= 100:
        raise ValidationError(f"percentile must be in (0, 100], got {percentile}")
    lam = [_percentile_nonzero(observations, percentile)]
    if threshold is not None and lam[0] > threshold:
        lam[0] = float(threshold)
    for out in layer_activations(net, observations):
        lam.append(_percentile_nonzero(out, percentile))
    scales = []
    for i in range(1, len(lam)):
        if lam[i] <= 0 or lam[i - 1] <= 0:
            log.warning("layer %d has no positive activations on the sample; using scale 1", i - 1)
            scales.append(1.0)
            # keep the chain going from the unscaled layer
            if lam[i] <= 0:
                lam[i] = lam[i - 1]
        else:
            scales.append(lam[i - 1] / lam[i])
    return ScaleVector(scales)


def game_fitness(net, neuron=None, nt=500, episodes=100, policy=GREEDY, seed=0, input_mode="grayscale",
                 snn_seed=0, bias_scaling="cumulative"):
    """Fitness function for scale search: mean reward of the converted network.

    The episode seed list is fixed by ``seed``, so every candidate is scored
    on the same games (common random numbers).
    """
    def fitness(point):
        snn = convert(net, ScaleVector(point), neuron, nt, snn_seed, bias_scaling)
        results = play(SnnAgent(snn), episodes, policy, seed, input_mode)
        return float(np.mean([r.reward for r in results]))

    return fitness
