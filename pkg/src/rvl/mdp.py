"""Decision-problem layer: state binning, the 9-level feed action set,
the per-state benefit table and multi-step action sampling."""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

N_STATES = 10
N_ACTIONS = 9
BIN_WIDTH = 1e-4

# Lower-inclusive bin edges for delta_c - delta_d; >= edges[-1] is state 1,
# < 0 is state 10.
_EDGES = tuple(i / 10000 for i in range(1, 9))

# State 1 is best (product rising much faster than by-product), state 10 worst.
DEFAULT_REWARDS = (100.0, 90.0, 80.0, 70.0, 60.0, 50.0, 40.0, 30.0, 10.0, -50.0)

DEFAULT_M_MAX = 10
DEFAULT_PERIOD_LENGTH = 30


def encode_state(delta_c: float, delta_d: float) -> int:
    """Map the one-step slope difference delta_c - delta_d to a state in 1..10."""
    x = delta_c - delta_d
    if not math.isfinite(x):
        raise ValueError(f"non-finite slope difference: {x}")
    if x < 0:
        return 10
    return 9 - bisect_right(_EDGES, x)


def action_feed(index: int) -> float:
    """Feed rate of action i in 1..9 (0.001 * i)."""
    if not 1 <= index <= N_ACTIONS:
        raise ValueError(f"action index out of range: {index}")
    return index / 1000


def feed_action(u: float) -> int:
    """Inverse of action_feed on the 9-point grid."""
    index = round(u * 1000)
    if not 1 <= index <= N_ACTIONS or action_feed(index) != u:
        raise ValueError(f"feed rate not on the action grid: {u}")
    return index


@dataclass(frozen=True)
class RewardTable:
    """Constant expected benefit per discrete state, strictly decreasing."""

    values: tuple[float, ...] = DEFAULT_REWARDS

    def __post_init__(self) -> None:
        if len(self.values) != N_STATES:
            raise ValueError(f"need {N_STATES} reward values")
        for i in range(1, N_STATES):
            if self.values[i] >= self.values[i - 1]:
                raise ValueError("rewards must be strictly decreasing in state index")

    def __call__(self, state: int) -> float:
        if not 1 <= state <= N_STATES:
            raise ValueError(f"state index out of range: {state}")
        return self.values[state - 1]


def sample_multistep(rng: np.random.Generator, remaining_steps: int, m_max: int = DEFAULT_M_MAX) -> int:
    """Random hold duration m, uniform on {1..min(m_max, remaining_steps)}.

    A degenerate range returns 1 without consuming randomness, so m_max=1
    reduces exactly to single-step sampling under a shared rng stream.
    """
    if remaining_steps < 1:
        raise ValueError("no steps remaining")
    hi = min(m_max, remaining_steps)
    if hi == 1:
        return 1
    return int(rng.integers(1, hi + 1))


def period_index(t: int, period_length: int = DEFAULT_PERIOD_LENGTH) -> int:
    """0-based index of the episode period containing control step t."""
    return t // period_length


def episode_return(rewards: Sequence[float], gamma: float) -> float:
    """Discounted return sum_n gamma^n * r_n (gamma=1 gives the plain total)."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must be in (0, 1]")
    total = 0.0
    g = 1.0
    for r in rewards:
        total += g * r
        g *= gamma
    return total
