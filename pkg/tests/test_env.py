import numpy as np
import pytest

from qsnn import env as bk
from qsnn.errors import ProtocolError, ValidationError


def play(seed, policy, limit=100_000):
    state = bk.env_reset(seed)
    total, falls, lives = 0.0, 0, state.lives
    trace = []
    for _ in range(limit):
        state, reward, done = bk.env_step(state, policy(state))
        total += reward
        falls += lives - state.lives
        lives = state.lives
        trace.append((state.paddle_x, state.ball_pos, reward))
        assert state.bricks_remaining + state.score // bk.POINTS_PER_BRICK == bk.BRICK_ROWS * bk.BRICK_COLS
        assert 0 <= state.paddle_x <= bk.WIDTH - bk.PADDLE_W
        if done:
            return state, total, falls, trace
    raise AssertionError("episode did not finish")


def test_reset_is_deterministic():
    a, b = bk.env_reset(7), bk.env_reset(7)
    assert a.paddle_x == b.paddle_x and a.ball_pos == b.ball_pos and a.lives == 5
    np.testing.assert_array_equal(a.frame, b.frame)
    np.testing.assert_array_equal(a.bricks, b.bricks)


def test_noop_loses_five_lives():
    state, total, falls, _ = play(3, lambda s: bk.NOOP)
    assert falls == 5 and state.lives == 0 and state.done
    assert total == state.score == 96 - state.bricks_remaining


def test_same_seed_same_actions_same_episode():
    rng1, rng2 = np.random.default_rng(1), np.random.default_rng(1)
    _, r1, _, t1 = play(11, lambda s: int(rng1.integers(4)))
    _, r2, _, t2 = play(11, lambda s: int(rng2.integers(4)))
    assert r1 == r2 and t1 == t2


def test_step_after_done_is_protocol_error():
    state, *_ = play(0, lambda s: bk.NOOP)
    with pytest.raises(ProtocolError):
        bk.env_step(state, bk.NOOP)


def test_invalid_action():
    with pytest.raises(ValidationError):
        bk.env_step(bk.env_reset(0), 4)


def test_step_does_not_mutate_input_state():
    s0 = bk.env_reset(0)
    bricks = s0.bricks.copy()
    s1, _, _ = bk.env_step(s0, bk.FIRE)
    assert s0.held and not s1.held and s0.steps == 0
    np.testing.assert_array_equal(s0.bricks, bricks)


def test_fire_serves_and_timeout_serves():
    s, _, _ = bk.env_step(bk.env_reset(0), bk.FIRE)
    assert not s.held and s.ball_vel[0] == 1.0
    s = bk.env_reset(0)
    for _ in range(bk.SERVE_TIMEOUT - 1):
        s, _, _ = bk.env_step(s, bk.NOOP)
        assert s.held
    s, _, _ = bk.env_step(s, bk.NOOP)
    assert not s.held


def tracker(state):
    """Scripted paddle that follows the ball column."""
    if state.held:
        return bk.FIRE
    centre = state.paddle_x + bk.PADDLE_W // 2
    col = state.ball_pos[1]
    if col < centre - 1:
        return bk.LEFT
    if col > centre + 1:
        return bk.RIGHT
    return bk.NOOP


def test_tracking_paddle_breaks_bricks_and_gets_reward_only_from_bricks():
    state, total, _, trace = play(5, tracker)
    assert total >= 20
    assert total == state.score
    assert all(r in (0.0, 1.0) for *_, r in trace)


def test_frame_contents():
    s = bk.env_reset(0)
    assert s.frame.shape == (80, 80)
    assert s.frame.min() >= 0 and s.frame.max() <= 1
    s, _, _ = bk.env_step(s, bk.FIRE)
    r, c = map(int, s.ball_pos)
    assert s.frame[r, c] == bk.BALL_SHADE
    assert not s.frame[:bk.TOP_WALL].any()


def test_binary_identical_frames_give_zero():
    f = (np.random.default_rng(0).random((80, 80)) > 0.5).astype(np.float32)
    obs = bk.preprocess_binary([f] * 5)
    assert not obs.any()


def test_binary_moving_object_leaves_leading_edges():
    frames = []
    for t in range(5):
        f = np.zeros((80, 80), np.float32)
        f[10, 20 + t:23 + t] = 1  # 3-px bar moving right 1 px/frame
        frames.append(f)
    obs = bk.preprocess_binary(frames)
    expected = np.zeros((80, 80), np.float32)
    expected[10, [23, 24, 25, 26]] = 1  # leading edge of each of the last four moves
    np.testing.assert_array_equal(obs, expected)
    assert set(np.unique(obs)) <= {0.0, 1.0}


def test_binary_pads_short_history():
    f = np.ones((80, 80), np.float32)
    assert not bk.preprocess_binary([f]).any()


def test_grayscale_weights():
    ones, zeros = np.ones((80, 80), np.float32), np.zeros((80, 80), np.float32)
    np.testing.assert_array_equal(bk.preprocess_grayscale([ones] * 4), np.full((80, 80), 2.5, np.float32))
    np.testing.assert_array_equal(bk.preprocess_grayscale([zeros, zeros, zeros, ones]), ones)
    np.testing.assert_array_equal(bk.preprocess_grayscale([ones, zeros, zeros, zeros]), ones * 0.25)


def test_occlusion():
    ones = np.ones((80, 80), np.float32)
    top = bk.apply_occlusion(ones, 0)
    assert not top[:3].any() and top[3:].all() and top.sum() == 77 * 80
    bottom = bk.apply_occlusion(ones, 76)
    assert not bottom[76:79].any() and bottom[79].all() and bottom[:76].all()
    np.testing.assert_array_equal(bk.apply_occlusion(bottom, 76), bottom)
    for bad in (-1, 77):
        with pytest.raises(ValidationError):
            bk.apply_occlusion(ones, bad)
    assert bk.N_BAR_POSITIONS == 77
    assert bk.bar_row_for_position(0) == 76 and bk.bar_row_for_position(76) == 0


def test_binarize_resizes_and_thresholds():
    raw = np.zeros((160, 160))
    raw[:80, :80] = 0.7
    raw[80:, 80:] = 0.3
    out = bk.binarize(raw)
    assert out.shape == (80, 80)
    assert out[:40, :40].all() and not out[40:].any() and not out[:, 40:].any()
    cropped = bk.binarize(np.vstack([np.ones((20, 80)), np.zeros((80, 80))]), crop_top=20)
    assert not cropped.any()


def test_frame_stack_grayscale_range_and_direction():
    stack = bk.FrameStack("grayscale")
    s = bk.env_reset(2)
    stack.reset(s.frame)
    for _ in range(10):
        s, _, _ = bk.env_step(s, bk.FIRE)
        obs = stack.push(s.frame)
    assert obs.min() >= 0 and obs.max() <= 2.5
    # newest ball pixel carries weight 1, older trail pixels less
    r, c = map(int, s.ball_pos)
    assert obs[r, c] == 1.0
    assert sorted(set(obs[obs > 0].tolist())) == [0.25, 0.5, 0.75, 1.0]


def test_frame_stack_binary_values():
    stack = bk.FrameStack("binary", occlusion_row=0)
    s = bk.env_reset(2)
    stack.reset(s.frame)
    for a in [bk.FIRE] + [bk.LEFT] * 6:
        s, _, _ = bk.env_step(s, a)
        obs = stack.push(s.frame)
    assert set(np.unique(obs)) <= {0.0, 1.0} and obs.sum() > 0
    assert not obs[:3].any()


def test_random_policy_baseline_is_small():
    rng = np.random.default_rng(0)
    rewards = [play(seed, lambda s: int(rng.integers(4)))[1] for seed in range(30)]
    assert np.mean(rewards) < 3


@pytest.mark.parametrize("mode", ["binary", "grayscale"])
def test_frame_stack_matches_pure_pipelines(mode):
    rng = np.random.default_rng(4)
    stack = bk.FrameStack(mode)
    s = bk.env_reset(9)
    raws = [s.frame]
    stack.reset(s.frame)
    for _ in range(60):
        s, _, done = bk.env_step(s, int(rng.integers(4)))
        raws.append(s.frame)
        got = stack.push(s.frame)
        frames = [bk.binarize(r) for r in raws[-5:]]
        if mode == "binary":
            want = bk.preprocess_binary(frames)
        else:
            want = bk.preprocess_grayscale(bk.difference_frames(bk._pad_frames(frames, 5)))
        np.testing.assert_array_equal(got, want)
