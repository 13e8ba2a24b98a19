"""Playing episodes with a fixed agent: evaluation reports and occlusion sweeps.

Every episode gets its own environment seed and policy seed, both drawn from
the master seed up front, so results do not depend on the order in which
episodes run. With ``starts="same"`` all episodes share one environment seed
(the zero-spread protocol for greedy ANN play); ``"distinct"`` gives each
episode its own.
"""
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import env as breakout
from .ann import ann_forward
from .errors import ValidationError
from .snn import GREEDY, Policy, select_action, snn_forward
from .tensor import DTYPE

STARTS = ("same", "distinct")


class AnnAgent:
    def __init__(self, net):
        self.net = net
        self.name = "ann"

    def q_values(self, observation, key):
        return ann_forward(self.net, observation)


class SnnAgent:
    def __init__(self, snn):
        self.snn = snn
        kinds = sorted({n.kind for n in snn.neurons})
        self.name = f"snn({'/'.join(kinds)})"

    def q_values(self, observation, key):
        # fresh membrane state and noise stream for every frame
        return snn_forward(self.snn, observation, seed=[self.snn.seed, *key])[0]


class ConstantAgent:
    """Ignores the screen; used for the random and always-noop baselines."""

    def __init__(self, q, name):
        self.q = np.asarray(q, dtype=DTYPE)
        self.name = name

    def q_values(self, observation, key):
        return self.q


def baseline_agent(kind):
    """Agent and policy for a named baseline: ``random`` or ``noop``."""
    if kind == "random":
        return ConstantAgent(np.zeros(breakout.N_ACTIONS), "random"), Policy(1.0)
    if kind == "noop":
        q = np.zeros(breakout.N_ACTIONS)
        q[breakout.NOOP] = 1
        return ConstantAgent(q, "noop"), GREEDY
    raise ValidationError(f"unknown baseline {kind!r}; use 'random' or 'noop'")


@dataclass(frozen=True)
class EpisodeResult:
    episode: int
    reward: float
    steps: int
    env_seed: int
    trace: list = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class EvalReport:
    rewards: tuple
    policy: str
    network: str
    input_mode: str
    occlusion_row: object = None
    steps: tuple = ()
    env_seeds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        object.__setattr__(self, "env_seeds", tuple(int(s) for s in self.env_seeds))
        if len(self.steps) not in (0, len(self.rewards)) or len(self.env_seeds) not in (0, len(self.rewards)):
            raise ValidationError("steps and env_seeds must list one entry per episode")

    @property
    def mean(self):
        return float(np.mean(self.rewards)) if self.rewards else math.nan

    @property
    def std(self):
        # population standard deviation over the listed episodes
        return float(np.std(self.rewards)) if self.rewards else math.nan

    def summary(self):
        return f"{self.network} {self.policy} {self.input_mode}: {self.mean:.2f} ± {self.std:.2f} ({len(self.rewards)} episodes)"

    def to_dict(self):
        return {
            "network": self.network, "policy": self.policy, "input_mode": self.input_mode,
            "occlusion_row": self.occlusion_row, "episodes": len(self.rewards),
            "mean": self.mean, "std": self.std, "rewards": list(self.rewards), "steps": list(self.steps),
        }


EPISODE_FIELDS = ("network", "policy", "input_mode", "occlusion_row", "episode", "env_seed", "reward", "steps")


def write_episodes_csv(path, reports):
    """One row per episode; :func:`read_episodes_csv` recovers the reports."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_FIELDS)
        for report in reports:
            occ = "" if report.occlusion_row is None else report.occlusion_row
            n = len(report.rewards)
            steps = report.steps or ("",) * n
            seeds = report.env_seeds or ("",) * n
            for i, (r, s, e) in enumerate(zip(report.rewards, steps, seeds)):
                w.writerow((report.network, report.policy, report.input_mode, occ, i, e, repr(r), s))


def read_episodes_csv(path):
    groups = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            occ = int(row["occlusion_row"]) if row["occlusion_row"] else None
            key = (row["network"], row["policy"], row["input_mode"], occ)
            rewards, steps, seeds = groups.setdefault(key, ([], [], []))
            rewards.append(float(row["reward"]))
            if row["steps"]:
                steps.append(int(row["steps"]))
            if row["env_seed"]:
                seeds.append(int(row["env_seed"]))
    return [EvalReport(tuple(r), key[1], key[0], key[2], key[3], tuple(s), tuple(e))
            for key, (r, s, e) in groups.items()]


def reward_histogram(rewards, bins=10):
    """Binned reward counts as ``(low, high, count)`` rows."""
    rewards = np.asarray(rewards, dtype=np.float64)
    lo, hi = (float(rewards.min()), float(rewards.max())) if rewards.size else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1
    counts, edges = np.histogram(rewards, bins=bins, range=(lo, hi))
    return [(float(a), float(b), int(c)) for a, b, c in zip(edges, edges[1:], counts)]


def episode_seeds(seed, episodes, starts="distinct"):
    """``(env_seed, policy_seed)`` per episode, fixed by the master seed."""
    if starts not in STARTS:
        raise ValidationError(f"starts must be one of {STARTS}, got {starts!r}")
    children = np.random.SeedSequence(seed).spawn(episodes)
    pairs = [tuple(int(v) for v in c.generate_state(2)) for c in children]
    if starts == "same":
        shared = int(np.random.SeedSequence(seed).generate_state(1)[0])
        pairs = [(shared, p) for _, p in pairs]
    return pairs


def run_episode(agent, policy, env_seed, policy_seed, input_mode="grayscale", occlusion_row=None,
                record_trace=False, max_steps=None):
    """Play one full game. Returns an :class:`EpisodeResult`."""
    rng = np.random.default_rng(policy_seed)
    stack = breakout.FrameStack(input_mode, occlusion_row)
    state = breakout.env_reset(env_seed)
    obs = stack.reset(state.frame)
    total, done, t, trace = 0.0, False, 0, [] if record_trace else None
    while not done:
        q = agent.q_values(obs, (policy_seed, t))
        action = select_action(q, policy, rng)
        state, reward, done = breakout.env_step(state, action)
        obs = stack.push(state.frame)
        total += reward
        t += 1
        if trace is not None:
            trace.append({"step": t, "action": action, "reward": reward, "lives": state.lives})
        if max_steps is not None and t >= max_steps:
            break
    return EpisodeResult(0, total, t, env_seed, trace)


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def play(agent, episodes, policy=GREEDY, seed=0, input_mode="grayscale", starts="distinct",
         occlusion_row=None, workers=1, record_trace=False):
    """Run ``episodes`` games; results come back sorted by episode index."""
    if episodes < 1:
        raise ValidationError(f"episodes must be at least 1, got {episodes}")
    seeds = episode_seeds(seed, episodes, starts)

    def one(i):
        env_seed, policy_seed = seeds[i]
        res = run_episode(agent, policy, env_seed, policy_seed, input_mode, occlusion_row, record_trace)
        return EpisodeResult(i, res.reward, res.steps, env_seed, res.trace)

    return _map(one, range(episodes), workers)


def evaluate(agent, episodes, policy=GREEDY, seed=0, input_mode="grayscale", starts="distinct",
             occlusion_row=None, workers=1):
    results = play(agent, episodes, policy, seed, input_mode, starts, occlusion_row, workers)
    return report_from(results, agent, policy, input_mode, occlusion_row), results


def report_from(results, agent, policy, input_mode, occlusion_row=None):
    return EvalReport(tuple(r.reward for r in results), policy.name, agent.name, input_mode, occlusion_row,
                      tuple(r.steps for r in results), tuple(r.env_seed for r in results))


def occlusion_sweep(agent, episodes_per_position, policy=GREEDY, seed=0, input_mode="grayscale",
                    positions=None, workers=1):
    """One report per bar position (0 = lowest bar), all positions on the same episode seeds."""
    positions = range(breakout.N_BAR_POSITIONS) if positions is None else positions
    out = []
    for p in positions:
        row = breakout.bar_row_for_position(p)
        report, _ = evaluate(agent, episodes_per_position, policy, seed, input_mode, "distinct", row, workers)
        out.append((p, report))
    return out


def collect_states(agent, n_states, policy, seed=0, input_mode="grayscale"):
    """Observations met while ``agent`` plays under ``policy``, in play order."""
    states = []
    i = 0
    while len(states) < n_states:
        env_seed, policy_seed = episode_seeds(seed + i, 1)[0]
        rng = np.random.default_rng(policy_seed)
        stack = breakout.FrameStack(input_mode)
        state = breakout.env_reset(env_seed)
        obs = stack.reset(state.frame)
        done, t = False, 0
        while not done and len(states) < n_states:
            states.append(obs)
            action = select_action(agent.q_values(obs, (policy_seed, t)), policy, rng)
            state, _, done = breakout.env_step(state, action)
            obs = stack.push(state.frame)
            t += 1
        i += 1
    return np.stack(states)


def write_trace(path, results):
    with open(path, "w") as fh:
        for res in sorted(results, key=lambda r: r.episode):
            for rec in res.trace or ():
                fh.write(json.dumps({"episode": res.episode, **rec}) + "\n")
