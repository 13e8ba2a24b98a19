"""Command-line entry point: ``qsnn <command> [options]``.

Commands: train, convert, optimize, evaluate, robustness, baseline. Every
run writes ``manifest.json`` into its output directory with the fully
resolved options; passing that manifest back through ``--config`` repeats
the run exactly. Options given on the command line override the config
file. Exit status is 0 on success, 2 on usage errors and 1 on runtime
errors.
"""
import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import env as breakout
from .ann import load_weights, save_weights
from .dqn import TrainerConfig, train
from .errors import DimensionError, NumericOverflowError, ParseError, ProtocolError, ValidationError
from .evaluation import (AnnAgent, SnnAgent, baseline_agent, collect_states, evaluate, occlusion_sweep, play,
                         report_from, reward_histogram, write_episodes_csv, write_trace)
from .neurons import KINDS, NeuronConfig
from .optimize import SwarmConfig, game_fitness, grid_search, normalize_scales, pso_optimize
from .snn import BIAS_SCALINGS, DEFAULT_NT, Policy, ScaleVector, convert

log = logging.getLogger("qsnn")

RUNTIME_ERRORS = (DimensionError, ValidationError, ParseError, NumericOverflowError, ProtocolError,
                  FloatingPointError, OSError)


class UsageError(Exception):
    pass


# argument plumbing


def _common(p):
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--config", help="JSON file of option defaults (a manifest.json works too)")
    p.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))


def _network(p, scales=True):
    p.add_argument("--weights", required=False, help="weight file written by 'train'")
    p.add_argument("--input-mode", default="grayscale", choices=("grayscale", "binary"))
    p.add_argument("--neuron", choices=KINDS, default=None, help="spiking neuron model (default SubIF)")
    p.add_argument("--tau", type=float, default=None, help="membrane time constant")
    p.add_argument("--nt", type=int, default=None, help=f"simulation steps per frame (default {DEFAULT_NT})")
    p.add_argument("--bias-scaling", choices=BIAS_SCALINGS, default=None,
                   help="bias multiplier: running product of scales (cumulative, default) or own layer scale")
    if scales:
        p.add_argument("--scales", default=None,
                       help="scales.json from convert/optimize, or comma-separated numbers")


def build_parser():
    parser = argparse.ArgumentParser(prog="qsnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qsnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["train"] = sub.add_parser("train", help="train a shallow Q-network with DQN")
    _common(p)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true",
                   help="replay 200000, warmup 50000, 30000 episodes")
    p.add_argument("--replay-capacity", type=int, default=None)
    p.add_argument("--replay-warmup", type=int, default=None)
    p.add_argument("--optimizer", choices=("sgd", "rmsprop"), default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--target-sync-interval", type=int, default=None)
    p.add_argument("--epsilon-decay-steps", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--input-mode", choices=("grayscale", "binary"), default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)

    p = subs["convert"] = sub.add_parser("convert", help="build a spiking network and write its scales")
    _common(p)
    _network(p)
    p.add_argument("--samples", type=int, default=1000, help="observations for normalization")
    p.add_argument("--percentile", type=float, default=99.9)
    p.add_argument("--sample-policy", default="eps:0.05", help="policy used to gather samples")

    p = subs["optimize"] = sub.add_parser("optimize", help="search per-layer scales")
    _common(p)
    _network(p, scales=False)
    p.add_argument("--method", choices=("pso", "grid", "normalize"), default="pso")
    p.add_argument("--dims-from", choices=("network",), default="network",
                   help="infer the number of scales from the network's layer count")
    p.add_argument("--dims", type=int, default=None, help="explicit dimension count (must match the network)")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--swarm-size", type=int, default=None)
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--high", type=float, default=100.0)
    p.add_argument("--grid-steps", type=int, default=5)
    p.add_argument("--fitness-episodes", type=int, default=100)
    p.add_argument("--policy", default="greedy")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction, default=True,
                   help="seed one particle with normalization scales")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--percentile", type=float, default=99.9)

    p = subs["evaluate"] = sub.add_parser("evaluate", help="play episodes and report mean ± std")
    _common(p)
    _network(p)
    p.add_argument("--kind", choices=("ann", "snn"), default="ann")
    p.add_argument("--policy", default="eps:0.05", help="'greedy' or 'eps:<epsilon>'")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--starts", choices=("distinct", "same"), default="distinct")
    p.add_argument("--occlusion-row", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--trace", action="store_true", help="also write trace.jsonl")
    p.add_argument("--bins", type=int, default=10, help="reward histogram bins")

    p = subs["robustness"] = sub.add_parser("robustness", help="occlusion-bar sweep over 77 positions")
    _common(p)
    _network(p)
    p.add_argument("--kind", choices=("ann", "snn", "both"), default="both")
    p.add_argument("--policy", default="eps:0.05")
    p.add_argument("--episodes-per-position", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)

    p = subs["baseline"] = sub.add_parser("baseline", help="measure random and always-noop play")
    _common(p)
    p.add_argument("--which", choices=("random", "noop", "both"), default="both")
    p.add_argument("--episodes", type=int, default=100)
    return parser, subs


def _load_config(path, command):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"cannot parse config {path}: {exc.msg}", offset=exc.pos) from None
    if not isinstance(doc, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    if "command" in doc and "config" in doc:
        if doc["command"] != command:
            raise UsageError(f"manifest {path} is for '{doc['command']}', not '{command}'")
        doc = doc["config"]
    return {k.replace("-", "_"): v for k, v in doc.items()}


def parse_args(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        defaults = _load_config(args.config, args.command)
        known = {a.dest for a in subs[args.command]._actions}
        unknown = sorted(set(defaults) - known - {"command"})
        if unknown:
            subs[args.command].error(f"unknown option(s) in {args.config}: {', '.join(unknown)}")
        defaults.pop("config", None)
        subs[args.command].set_defaults(**defaults)
        args = parser.parse_args(argv)
    if not args.out:
        subs[args.command].error("--out is required (on the command line or in the config file)")
    return args


# helpers


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest(args, out, extra=None):
    config = {k: v for k, v in vars(args).items() if k not in ("config", "log_level", "func")}
    doc = {"command": args.command, "config": config, "seed": args.seed, "version": __version__,
           "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    if extra:
        doc.update(extra)
    _write_json(out / "manifest.json", doc)


def _policy(text):
    try:
        return Policy.parse(text)
    except (ValidationError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _require_weights(args):
    if not args.weights:
        raise UsageError("--weights is required")
    return load_weights(args.weights)


def _scales_source(args):
    """Scale vector plus any neuron settings stored alongside it."""
    text = args.scales
    if text is None:
        return None, {}
    path = Path(text)
    if path.exists():
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"cannot parse scales file {path}: {exc.msg}", offset=exc.pos) from None
        if "scales" not in doc:
            raise ValidationError(f"{path} has no 'scales' field")
        return ScaleVector(doc["scales"]), doc
    try:
        return ScaleVector([float(v) for v in text.split(",")]), {}
    except ValueError:
        raise UsageError(f"--scales {text!r} is neither a file nor a comma-separated list of numbers") from None


def _neuron(args, stored=None):
    stored = stored or {}
    base = NeuronConfig.from_dict(stored.get("neuron_config", {})) if stored.get("neuron_config") else NeuronConfig()
    kind = args.neuron or stored.get("neuron") or base.kind
    cfg = base.with_kind(kind)
    if args.tau is not None:
        cfg = NeuronConfig.from_dict({**cfg.to_dict(), "tau": args.tau})
    return cfg


def _nt(args, stored=None):
    return args.nt or (stored or {}).get("nt") or DEFAULT_NT


def _bias_scaling(args, stored=None):
    return args.bias_scaling or (stored or {}).get("bias_scaling") or BIAS_SCALINGS[0]


def _spiking(args, net):
    scales, stored = _scales_source(args)
    if scales is None:
        raise UsageError("snn evaluation needs --scales (a scales.json from convert/optimize, or a list)")
    neuron = _neuron(args, stored)
    nt = _nt(args, stored)
    bias = _bias_scaling(args, stored)
    return convert(net, scales, neuron, nt, args.seed, bias), {
        "scales": list(scales), "neuron_config": neuron.to_dict(), "nt": nt, "bias_scaling": bias}


def _sample_states(net, args, policy_text, count):
    policy = _policy(policy_text)
    return collect_states(AnnAgent(net), count, policy, args.seed, args.input_mode)


# commands


def cmd_train(args):
    out = _out_dir(args)
    overrides = {k: getattr(args, k) for k in (
        "episodes", "replay_capacity", "replay_warmup", "optimizer", "learning_rate", "gamma", "batch_size",
        "target_sync_interval", "epsilon_decay_steps", "hidden", "input_mode", "checkpoint_every")
        if getattr(args, k) is not None}
    config = TrainerConfig.paper_scale(**overrides) if args.paper_scale else TrainerConfig(**overrides)
    ckpt = out / "checkpoints"

    def on_checkpoint(episode, net):
        ckpt.mkdir(exist_ok=True)
        save_weights(net, ckpt / f"weights_{episode:06d}.json")

    t0 = time.time()
    net, history = train(config, args.seed, on_checkpoint=on_checkpoint)
    save_weights(net, out / "weights.json")
    with open(out / "training_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode", "reward", "epsilon", "mean_td_error", "steps"))
        for h in history:
            w.writerow((h["episode"], repr(h["reward"]), repr(h["epsilon"]), repr(h["mean_td_error"]), h["steps"]))
    last = [h["reward"] for h in history[-100:]]
    _manifest(args, out, {"trainer": config.to_dict(), "wall_seconds": round(time.time() - t0, 1)})
    print(f"trained {len(history)} episodes; last-100 mean reward {np.mean(last):.2f}" if history else "trained 0 episodes")
    return 0


def _normalized(net, args, neuron=None):
    states = _sample_states(net, args, getattr(args, "sample_policy", "eps:0.05"), args.samples)
    threshold = (neuron or NeuronConfig()).v_thresh
    return normalize_scales(net, states, args.percentile, threshold)


def cmd_convert(args):
    out = _out_dir(args)
    net = _require_weights(args)
    scales, stored = _scales_source(args)
    method = "given"
    neuron = _neuron(args, stored)
    if scales is None:
        scales, method = _normalized(net, args, neuron), "normalize"
    nt = _nt(args, stored)
    bias = _bias_scaling(args, stored)
    convert(net, scales, neuron, nt, args.seed, bias)  # validates the combination
    doc = {"scales": list(scales), "method": method, "neuron": neuron.kind, "neuron_config": neuron.to_dict(),
           "nt": nt, "bias_scaling": bias, "weights": str(args.weights), "seed": args.seed}
    if method == "normalize":
        doc["percentile"] = args.percentile
    _write_json(out / "scales.json", doc)
    _manifest(args, out)
    print("scales " + ", ".join(f"{s:.4g}" for s in scales))
    return 0


def cmd_optimize(args):
    out = _out_dir(args)
    net = _require_weights(args)
    dims = len(net.layers)
    if args.dims is not None and args.dims != dims:
        raise UsageError(f"--dims {args.dims} does not match the network's {dims} layers")
    neuron, nt, bias = _neuron(args), _nt(args), _bias_scaling(args)
    policy = _policy(args.policy)
    doc = {"method": args.method, "neuron": neuron.kind, "neuron_config": neuron.to_dict(), "nt": nt,
           "bias_scaling": bias, "weights": str(args.weights), "seed": args.seed}
    if args.method == "normalize":
        scales = _normalized(net, args, neuron)
        doc.update(scales=list(scales), fitness=None, history=[], config={"percentile": args.percentile})
    else:
        fitness = game_fitness(net, neuron, nt, args.fitness_episodes, policy, args.seed, args.input_mode, args.seed,
                               bias)
        if args.method == "pso":
            cfg = SwarmConfig(dims=dims, swarm_size=args.swarm_size, iterations=args.iterations, low=args.low,
                              high=args.high, fitness_episodes=args.fitness_episodes, seed=args.seed,
                              workers=args.workers)
            initial = [list(_normalized(net, args, neuron))] if args.warm_start else []
            res = pso_optimize(cfg, fitness, initial)
            doc.update(scales=list(res.scales), fitness=res.best_fitness, history=res.history,
                       config=cfg.to_dict(), evaluations=res.evaluations, initial=initial)
        else:
            res = grid_search([(args.low, args.high)] * dims, args.grid_steps, fitness)
            doc.update(scales=list(res.scales), fitness=res.best_fitness, history=[],
                       config={"low": args.low, "high": args.high, "steps": args.grid_steps},
                       evaluations=res.evaluations)
    _write_json(out / "scales.json", doc)
    _manifest(args, out)
    shown = "n/a" if doc["fitness"] is None else f"{doc['fitness']:.2f}"
    print(f"{args.method}: scales " + ", ".join(f"{s:.4g}" for s in doc["scales"]) + f", fitness {shown}")
    return 0


def _agent(args, net, kind):
    if kind == "ann":
        return AnnAgent(net), {}
    snn, info = _spiking(args, net)
    return SnnAgent(snn), info


def cmd_evaluate(args):
    net = _require_weights(args)
    policy = _policy(args.policy)
    agent, info = _agent(args, net, args.kind)
    out = _out_dir(args)
    if args.trace:
        results = play(agent, args.episodes, policy, args.seed, args.input_mode, args.starts,
                       args.occlusion_row, args.workers, record_trace=True)
        report = report_from(results, agent, policy, args.input_mode, args.occlusion_row)
        write_trace(out / "trace.jsonl", results)
    else:
        report, _ = evaluate(agent, args.episodes, policy, args.seed, args.input_mode, args.starts,
                             args.occlusion_row, args.workers)
    _write_json(out / "report.json", {**report.to_dict(), **info})
    write_episodes_csv(out / "episodes.csv", [report])
    with open(out / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("low", "high", "count"))
        w.writerows(reward_histogram(report.rewards, args.bins))
    _manifest(args, out)
    print(report.summary())
    return 0


def cmd_robustness(args):
    net = _require_weights(args)
    policy = _policy(args.policy)
    kinds = ("ann", "snn") if args.kind == "both" else (args.kind,)
    agents = {k: _agent(args, net, k)[0] for k in kinds}
    out = _out_dir(args)
    sweeps = {k: occlusion_sweep(a, args.episodes_per_position, policy, args.seed, args.input_mode,
                                 workers=args.workers) for k, a in agents.items()}
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "bar_row"] + [f"{k}_{s}" for k in kinds for s in ("mean", "std")])
        for i in range(breakout.N_BAR_POSITIONS):
            pos, first = sweeps[kinds[0]][i]
            row = [pos, first.occlusion_row]
            for k in kinds:
                r = sweeps[k][i][1]
                row += [repr(r.mean), repr(r.std)]
            w.writerow(row)
    write_episodes_csv(out / "episodes.csv", [r for k in kinds for _, r in sweeps[k]])
    summary = {k: {"mean_over_positions": float(np.mean([r.mean for _, r in sweeps[k]])),
                   "network": agents[k].name} for k in kinds}
    _write_json(out / "report.json", summary)
    _manifest(args, out)
    for k in kinds:
        print(f"{agents[k].name}: mean reward over {breakout.N_BAR_POSITIONS} bar positions "
              f"{summary[k]['mean_over_positions']:.2f}")
    return 0


def cmd_baseline(args):
    out = _out_dir(args)
    which = ("random", "noop") if args.which == "both" else (args.which,)
    reports = []
    for kind in which:
        agent, policy = baseline_agent(kind)
        report, _ = evaluate(agent, args.episodes, policy, args.seed)
        reports.append(report)
        print(report.summary())
    _write_json(out / "report.json", {r.network: r.to_dict() for r in reports})
    write_episodes_csv(out / "episodes.csv", reports)
    _manifest(args, out)
    return 0


COMMANDS = {"train": cmd_train, "convert": cmd_convert, "optimize": cmd_optimize, "evaluate": cmd_evaluate,
            "robustness": cmd_robustness, "baseline": cmd_baseline}


def main(argv=None):
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code
    except UsageError as exc:
        print(f"qsnn: error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"qsnn: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"qsnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"qsnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
