"""Miniature deterministic Breakout with ALE-like step semantics.

The native screen is 80x80. Six rows of sixteen bricks sit near the top, a
paddle three pixels thick moves along the bottom, and a one-pixel ball moves
one pixel per tick vertically and one pixel horizontally. Between serves the
ball is off screen; FIRE (or a serve timeout) drops it from the middle of the
screen, falling diagonally. The seeded generator picks each serve's
horizontal direction.

Frames go through one of two preprocessing pipelines before reaching a
network:

* binary: clamped difference frames of consecutive binarized screens,
  summed over the last four and thresholded back to {0, 1};
* grayscale: the same four difference frames weighted 1, 0.75, 0.5, 0.25
  from newest to oldest.
"""
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ProtocolError, ValidationError
from .tensor import DTYPE

HEIGHT = WIDTH = 80
N_ACTIONS = 4
NOOP, FIRE, RIGHT, LEFT = range(4)  # ALE order for Breakout
ACTION_NAMES = ("noop", "fire", "right", "left")

TOP_WALL = 4  # rows above this are never reached by the ball
BRICK_ROWS, BRICK_COLS = 6, 16
BRICK_TOP, BRICK_H, BRICK_W = 10, 2, WIDTH // BRICK_COLS
PADDLE_ROW, PADDLE_H, PADDLE_W = 75, 3, 7
PADDLE_SPEED = 2
SERVE_ROW = 40
SERVE_COL = WIDTH // 2
SERVE_TIMEOUT = 20
START_LIVES = 5
POINTS_PER_BRICK = 1
MAX_STEPS = 5000

BRICK_SHADE, PADDLE_SHADE, BALL_SHADE = 0.6, 0.8, 1.0

GRAYSCALE_WEIGHTS = (1.0, 0.75, 0.5, 0.25)
BAR_THICKNESS = 3
N_BAR_POSITIONS = HEIGHT - BAR_THICKNESS  # 77


@dataclass
class EnvState:
    paddle_x: int
    ball_pos: tuple
    ball_vel: tuple
    bricks: np.ndarray
    lives: int
    score: int
    frame: np.ndarray
    held: bool = True
    held_ticks: int = 0
    steps: int = 0
    done: bool = False
    rng: np.random.Generator = field(default=None, repr=False)

    @property
    def bricks_remaining(self):
        return int(self.bricks.sum())


def render(state):
    frame = np.zeros((HEIGHT, WIDTH), dtype=DTYPE)
    wall = np.repeat(np.repeat(state.bricks, BRICK_H, axis=0), BRICK_W, axis=1)
    frame[BRICK_TOP:BRICK_TOP + BRICK_ROWS * BRICK_H] = wall * DTYPE(BRICK_SHADE)
    frame[PADDLE_ROW:PADDLE_ROW + PADDLE_H, state.paddle_x:state.paddle_x + PADDLE_W] = PADDLE_SHADE
    if not (state.done or state.held):
        r, c = state.ball_pos
        frame[int(r), int(c)] = BALL_SHADE
    return frame


def env_reset(seed=0):
    """Fresh game: full wall, five lives, centred paddle, ball awaiting serve."""
    state = EnvState(
        paddle_x=(WIDTH - PADDLE_W) // 2,
        ball_pos=(float(SERVE_ROW), float(WIDTH // 2)),
        ball_vel=(0.0, 0.0),
        bricks=np.ones((BRICK_ROWS, BRICK_COLS), dtype=np.uint8),
        lives=START_LIVES,
        score=0,
        frame=None,
        rng=np.random.default_rng(seed),
    )
    state.frame = render(state)
    return state


def _brick_at(row, col):
    if BRICK_TOP <= row < BRICK_TOP + BRICK_ROWS * BRICK_H:
        return (row - BRICK_TOP) // BRICK_H, col // BRICK_W
    return None


def env_step(state, action):
    """Advance one physics tick. Returns ``(new_state, reward, done)``.

    ``state`` itself is left untouched.
    """
    if state.done:
        raise ProtocolError("env_step called on a finished episode; call env_reset first")
    if action not in range(N_ACTIONS):
        raise ValidationError(f"action must be in [0, {N_ACTIONS}), got {action!r}")
    s = replace(state, bricks=state.bricks.copy())
    s.steps += 1
    reward = 0.0

    if action == LEFT:
        s.paddle_x = max(0, s.paddle_x - PADDLE_SPEED)
    elif action == RIGHT:
        s.paddle_x = min(WIDTH - PADDLE_W, s.paddle_x + PADDLE_SPEED)

    if s.held:
        s.held_ticks += 1
        if action == FIRE or s.held_ticks >= SERVE_TIMEOUT:
            s.held = False
            s.held_ticks = 0
            s.ball_pos = (float(SERVE_ROW), float(SERVE_COL))
            s.ball_vel = (1.0, float(s.rng.choice((-1, 1))))
    else:
        reward = _move_ball(s)

    if not s.held and s.ball_pos[0] >= HEIGHT:
        s.lives -= 1
        s.held = True
        s.ball_vel = (0.0, 0.0)
    if s.lives == 0 or s.bricks_remaining == 0 or s.steps >= MAX_STEPS:
        s.done = True
    s.frame = render(s)
    return s, reward, s.done


def _move_ball(s):
    r, c = int(s.ball_pos[0]), int(s.ball_pos[1])
    dr, dc = int(s.ball_vel[0]), int(s.ball_vel[1])
    nc = c + dc
    if nc < 0 or nc >= WIDTH:
        dc = -dc
        nc = c + dc
    nr = r + dr
    if nr < TOP_WALL:
        dr = -dr
        nr = r + dr
    reward = 0.0
    hit = _brick_at(nr, nc)
    if hit is not None and s.bricks[hit]:
        s.bricks[hit] = 0
        s.score += POINTS_PER_BRICK
        reward = float(POINTS_PER_BRICK)
        dr = -dr
        nr = r
    elif dr > 0 and nr == PADDLE_ROW and s.paddle_x <= nc < s.paddle_x + PADDLE_W:
        offset = nc - (s.paddle_x + PADDLE_W // 2)
        if offset <= -2:
            dc = -1
        elif offset >= 2:
            dc = 1
        dr = -1
        nr = r
    s.ball_pos = (float(nr), float(nc))
    s.ball_vel = (float(dr), float(dc))
    return reward


# preprocessing


def binarize(raw, size=HEIGHT, crop_top=0, threshold=0.5):
    """Crop, nearest-neighbour resize to ``size``x``size`` and threshold."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 3:
        raw = raw.mean(axis=2)
    raw = raw[crop_top:]
    h, w = raw.shape
    if (h, w) != (size, size):
        rows = (np.arange(size) * h) // size
        cols = (np.arange(size) * w) // size
        raw = raw[rows][:, cols]
    return (raw >= threshold).astype(DTYPE)


def _pad_frames(frames, needed):
    frames = [np.asarray(f, dtype=DTYPE) for f in frames]
    if not frames:
        raise ValidationError("at least one frame is required")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise DimensionError(f"frames differ in shape: {[f.shape for f in frames]}")
    if len(frames) < needed:
        frames = [frames[0]] * (needed - len(frames)) + frames
    return frames[-needed:]


def difference_frames(frames):
    """Clamped forward differences of binarized frames, oldest first (len(frames)-1 of them)."""
    return [np.maximum(cur - prev, 0).astype(DTYPE) for prev, cur in zip(frames, frames[1:])]


def preprocess_binary(frames):
    """Binary state from the last five binarized frames (oldest first)."""
    diffs = difference_frames(_pad_frames(frames, 5))
    return (np.sum(diffs, axis=0) >= 1).astype(DTYPE)


def preprocess_grayscale(frames):
    """Recency-weighted sum of the last four binary frames (oldest first)."""
    frames = _pad_frames(frames, 4)
    out = np.zeros_like(frames[0])
    for weight, frame in zip(GRAYSCALE_WEIGHTS, reversed(frames)):
        out += DTYPE(weight) * frame
    return out


def apply_occlusion(obs, bar_row):
    """Zero a three-row horizontal bar whose top row is ``bar_row``."""
    if not 0 <= bar_row < N_BAR_POSITIONS:
        raise ValidationError(f"bar_row must be in [0, {N_BAR_POSITIONS - 1}], got {bar_row}")
    out = np.array(obs, dtype=DTYPE, copy=True)
    out[..., bar_row:bar_row + BAR_THICKNESS, :] = 0
    return out


def bar_row_for_position(position):
    """Sweep position 0 is the lowest bar; 76 the highest."""
    return N_BAR_POSITIONS - 1 - position


class FrameStack:
    """Rolling buffer of binarized screens that yields observations.

    Keeps the last binarized screen and the last four difference frames, so
    each push costs one subtraction. Observations match
    :func:`preprocess_binary` / :func:`preprocess_grayscale` on the same
    history (missing history is padded by repeating the oldest screen, which
    contributes zero difference frames).
    """

    def __init__(self, mode="grayscale", occlusion_row=None):
        if mode not in ("binary", "grayscale"):
            raise ValidationError(f"unknown input mode {mode!r}")
        if occlusion_row is not None and not 0 <= occlusion_row < N_BAR_POSITIONS:
            raise ValidationError(f"occlusion row must be in [0, {N_BAR_POSITIONS - 1}], got {occlusion_row}")
        self.mode = mode
        self.occlusion_row = occlusion_row
        self.last = None
        self.diffs = deque(maxlen=4)

    def reset(self, raw):
        self.last = binarize(raw)
        self.diffs.clear()
        return self.observation()

    def push(self, raw):
        frame = binarize(raw)
        self.diffs.append(np.maximum(frame - self.last, 0))
        self.last = frame
        return self.observation()

    def observation(self):
        out = np.zeros_like(self.last)
        if self.mode == "binary":
            for diff in self.diffs:
                out += diff
            out = (out >= 1).astype(DTYPE)
        else:
            for weight, diff in zip(GRAYSCALE_WEIGHTS, reversed(self.diffs)):
                out += DTYPE(weight) * diff
        if self.occlusion_row is not None:
            out[self.occlusion_row:self.occlusion_row + BAR_THICKNESS] = 0
        return out
