import json

import numpy as np
import pytest

from qsnn import env as bk
from qsnn.ann import shallow_preset
from qsnn.errors import ValidationError
from qsnn.evaluation import (AnnAgent, EvalReport, SnnAgent, baseline_agent, collect_states, episode_seeds,
                             evaluate, occlusion_sweep, play, read_episodes_csv, reward_histogram,
                             write_episodes_csv, write_trace)
from qsnn.neurons import NeuronConfig
from qsnn.snn import GREEDY, Policy, convert


@pytest.fixture(scope="module")
def net():
    return shallow_preset(seed=3, hidden=32)


def test_report_statistics_recomputed():
    r = EvalReport((1.0, 3.0), "greedy", "ann", "grayscale")
    assert r.mean == 2.0 and r.std == 1.0
    assert r.to_dict()["episodes"] == 2


def test_report_rejects_ragged_fields():
    with pytest.raises(ValidationError):
        EvalReport((1.0, 2.0), "greedy", "ann", "grayscale", steps=(3,))


def test_greedy_ann_same_start_has_zero_spread(net):
    report, _ = evaluate(AnnAgent(net), 4, GREEDY, seed=2, starts="same")
    assert report.std == 0.0 and len(set(report.steps)) == 1


def test_single_episode_report(net):
    report, results = evaluate(AnnAgent(net), 1, Policy(0.05), seed=1)
    assert len(report.rewards) == 1 and len(results) == 1


def test_episode_seeds_fixed_and_distinct():
    a = episode_seeds(4, 10)
    assert a == episode_seeds(4, 10)
    assert len({e for e, _ in a}) == 10
    same = episode_seeds(4, 10, "same")
    assert len({e for e, _ in same}) == 1 and [p for _, p in same] == [p for _, p in a]
    with pytest.raises(ValidationError):
        episode_seeds(0, 3, "mixed")


def test_episodes_csv_round_trip(tmp_path, net):
    report, _ = evaluate(AnnAgent(net), 3, Policy(0.05), seed=0)
    occluded, _ = evaluate(AnnAgent(net), 2, GREEDY, seed=0, occlusion_row=10)
    path = tmp_path / "episodes.csv"
    write_episodes_csv(path, [report, occluded])
    assert read_episodes_csv(path) == [report, occluded]


def test_threaded_play_matches_serial(net):
    serial = play(AnnAgent(net), 4, Policy(0.05), seed=6)
    threaded = play(AnnAgent(net), 4, Policy(0.05), seed=6, workers=3)
    assert serial == threaded


def test_baselines():
    agent, policy = baseline_agent("noop")
    report, _ = evaluate(agent, 2, policy, seed=0)
    assert report.rewards == (0.0, 0.0)
    agent, policy = baseline_agent("random")
    assert policy.epsilon == 1.0
    with pytest.raises(ValidationError):
        baseline_agent("oracle")


def test_snn_agent_plays(net):
    snn = convert(net, [1.0, 1.0], NeuronConfig("StochasticLIF"), nt=20, seed=1)
    a = play(SnnAgent(snn), 1, GREEDY, seed=3)
    b = play(SnnAgent(snn), 1, GREEDY, seed=3)
    assert a == b
    assert SnnAgent(snn).name == "snn(StochasticLIF)"


def test_occlusion_sweep_positions(net):
    sweep = occlusion_sweep(AnnAgent(net), 1, GREEDY, seed=0, positions=[0, 38, 76])
    assert [p for p, _ in sweep] == [0, 38, 76]
    assert [r.occlusion_row for _, r in sweep] == [76, 38, 0]


def test_background_bar_changes_nothing(net):
    # rows 0-2 sit above the wall and never show anything
    plain, _ = evaluate(AnnAgent(net), 3, Policy(0.05), seed=1)
    top, _ = evaluate(AnnAgent(net), 3, Policy(0.05), seed=1, occlusion_row=bk.bar_row_for_position(76))
    assert plain.rewards == top.rewards


def test_trace_lines(tmp_path, net):
    results = play(AnnAgent(net), 1, GREEDY, seed=0, record_trace=True)
    path = tmp_path / "trace.jsonl"
    write_trace(path, results)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == results[0].steps
    assert set(lines[0]) == {"episode", "step", "action", "reward", "lives"}


def test_histogram_counts():
    rows = reward_histogram([0, 0, 1, 5], bins=5)
    assert sum(c for _, _, c in rows) == 4
    assert rows[0] == (0.0, 1.0, 2)
    assert reward_histogram([2.0, 2.0], bins=2)[0][2] == 2


def test_collect_states_shape(net):
    states = collect_states(AnnAgent(net), 50, Policy(0.05), seed=0)
    assert states.shape == (50, 80, 80)
