"""State encoding, action grid, reward table and multi-step sampling tests."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvl.mdp import (
    DEFAULT_M_MAX,
    DEFAULT_REWARDS,
    N_ACTIONS,
    N_STATES,
    RewardTable,
    action_feed,
    encode_state,
    episode_return,
    feed_action,
    period_index,
    sample_multistep,
)


# (delta_c - delta_d, expected state), one probe inside each bin plus edges
ENCODING_CASES = [
    (0.0012, 1),
    (0.0008, 1),
    (0.00079, 2),
    (0.0007, 2),
    (0.00065, 3),
    (0.00055, 4),
    (0.00045, 5),
    (0.00035, 6),
    (0.00025, 7),
    (0.00015, 8),
    (0.0001, 8),
    (0.00005, 9),
    (0.0, 9),
    (-1e-9, 10),
    (-0.5, 10),
]


@pytest.mark.parametrize("x, expected", ENCODING_CASES)
def test_encode_state_bins(x, expected):
    assert encode_state(x, 0.0) == expected


def test_encode_state_uses_difference():
    # interior probes survive a common offset (edges would not, by rounding)
    assert encode_state(0.00065 + 0.37, 0.37) == 3
    assert encode_state(0.00015 + 0.37, 0.37) == 8


def test_encode_state_rejects_nan():
    with pytest.raises(ValueError):
        encode_state(float("nan"), 0.0)


@given(st.floats(min_value=-1e-3, max_value=2e-3, allow_nan=False))
def test_encode_state_monotone(x):
    """A larger slope difference never maps to a worse (higher) state."""
    s = encode_state(x, 0.0)
    assert 1 <= s <= N_STATES
    assert encode_state(x + 1e-4, 0.0) <= s


def test_action_grid():
    assert [action_feed(i) for i in range(1, 10)] == [
        0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.007, 0.008, 0.009,
    ]
    for i in range(1, N_ACTIONS + 1):
        assert feed_action(action_feed(i)) == i
    with pytest.raises(ValueError):
        action_feed(0)
    with pytest.raises(ValueError):
        action_feed(10)
    with pytest.raises(ValueError):
        feed_action(0.0015)


def test_reward_table_default_values():
    table = RewardTable()
    assert table(1) == 100.0
    assert table(9) == 10.0
    assert table(10) == -50.0
    assert table.values == DEFAULT_REWARDS


def test_reward_table_strictly_decreasing():
    vals = RewardTable().values
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        RewardTable((9, 8, 7, 6, 5, 4, 3, 2, 1, 1))
    with pytest.raises(ValueError):
        RewardTable((1, 2, 3))
    with pytest.raises(ValueError):
        RewardTable()(0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), remaining=st.integers(1, 200))
def test_sample_multistep_bounds(seed, remaining):
    rng = np.random.default_rng(seed)
    m = sample_multistep(rng, remaining)
    assert 1 <= m <= min(DEFAULT_M_MAX, remaining)


def test_sample_multistep_degenerate_preserves_stream():
    """m_max=1 must not consume randomness, so trajectories stay aligned."""
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    for _ in range(10):
        assert sample_multistep(rng_a, 100, m_max=1) == 1
    assert rng_a.integers(0, 1 << 30) == rng_b.integers(0, 1 << 30)
    with pytest.raises(ValueError):
        sample_multistep(rng_a, 0)


def test_sample_multistep_covers_range():
    rng = np.random.default_rng(0)
    seen = {sample_multistep(rng, 100) for _ in range(500)}
    assert seen == set(range(1, 11))


def test_period_index():
    assert period_index(0) == 0
    assert period_index(29) == 0
    assert period_index(30) == 1
    assert period_index(119) == 3


def test_episode_return():
    assert episode_return([1.0, 2.0, 3.0], 1.0) == 6.0
    assert episode_return([1.0, 2.0], 0.5) == 2.0
    assert episode_return([], 1.0) == 0.0
    with pytest.raises(ValueError):
        episode_return([1.0], 0.0)
