"""Reactor physics tests: conservation laws, integrator order, cap handling."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvl.reactor import (
    DEFAULT_INITIAL_STATE,
    NEG_CLAMP_TOL,
    VOLUME_CAP,
    DegenerateVolumeError,
    KineticsParams,
    ReactorState,
    Trajectory,
    apply_volume_cap,
    derivatives,
    integrate_step,
    simulate,
    simulate_batch,
    trajectory_to_csv,
)

PARAMS = KineticsParams()

feed_levels = st.integers(min_value=0, max_value=9).map(lambda i: i / 1000.0)


def random_controls(rng: np.random.Generator, n: int) -> list[float]:
    return [float(rng.integers(0, 10)) / 1000.0 for _ in range(n)]


def test_derivatives_signs_at_mid_batch():
    s = ReactorState(a=0.1, b=0.05, c=0.05, d=0.01, v=0.7)
    dy = derivatives(s, 0.005, PARAMS)
    assert dy[0] < 0  # A consumed
    assert dy[2] > 0  # C produced faster than diluted here
    assert dy[3] > 0
    assert dy[4] == 0.005


def test_derivatives_zero_volume_raises():
    with pytest.raises(DegenerateVolumeError):
        derivatives(ReactorState(0.2, 0.0, 0.0, 0.0, 0.0), 0.001, PARAMS)


def test_c_production_term_positive():
    # with no feed the only change in C comes from reaction 1
    s = ReactorState(a=0.1, b=0.1, c=0.0, d=0.0, v=0.8)
    dy = derivatives(s, 0.0, PARAMS)
    assert dy[2] == pytest.approx(PARAMS.k1 * s.a * s.b)


def test_integrate_step_rejects_negative_feed():
    with pytest.raises(ValueError):
        integrate_step(DEFAULT_INITIAL_STATE, -0.001, PARAMS)


def test_params_validation():
    with pytest.raises(ValueError):
        KineticsParams(k1=0.0)
    with pytest.raises(ValueError):
        KineticsParams(t_f=100.0, dt_control=3.0)  # not an integer grid
    with pytest.raises(ValueError):
        KineticsParams(n_substeps=0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mole_balance_invariants(seed):
    """v*(a+c) and the species-sum combination are conserved step by step."""
    rng = np.random.default_rng(seed)
    traj = simulate(random_controls(rng, PARAMS.n_steps), PARAMS)
    s0 = traj.states[0]
    ac0 = s0.v * (s0.a + s0.c)
    bc0 = s0.v * (s0.b + s0.c + s0.d)
    for s in traj.states:
        assert abs(s.v * (s.a + s.c) - ac0) < 1e-6
        lhs = s.v * (s.b + s.c + s.d) - PARAMS.b_feed * (s.v - s0.v)
        assert abs(lhs - bc0) < 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_volume_monotone_and_capped(seed):
    rng = np.random.default_rng(seed)
    traj = simulate(random_controls(rng, PARAMS.n_steps), PARAMS)
    vols = traj.series("v")
    assert np.all(np.diff(vols) >= -1e-15)
    assert vols.max() <= VOLUME_CAP + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_states_nonnegative(seed):
    rng = np.random.default_rng(seed)
    traj = simulate(random_controls(rng, PARAMS.n_steps), PARAMS)
    for name in "abcd":
        assert traj.series(name).min() >= 0.0


def test_rk4_order():
    """Halving the substep shrinks the error by ~2^4 against a fine reference."""
    u = [0.005] * PARAMS.n_steps

    def final_state(n_substeps):
        p = KineticsParams(n_substeps=n_substeps)
        return simulate(u, p).final.as_array()

    ref = final_state(256)
    errs = [np.abs(final_state(n) - ref).max() for n in (1, 2, 4)]
    for coarse, fine in zip(errs, errs[1:]):
        assert 12.0 <= coarse / fine <= 20.0


def test_apply_volume_cap_truncates_to_fill():
    near_full = ReactorState(0.1, 0.01, 0.05, 0.01, 0.9995)
    u = apply_volume_cap(near_full, 0.009, PARAMS)
    assert u == pytest.approx((VOLUME_CAP - near_full.v) / PARAMS.dt_control)
    nxt = integrate_step(near_full, u, PARAMS)
    assert nxt.v == pytest.approx(VOLUME_CAP)


def test_apply_volume_cap_noop_below_cap():
    assert apply_volume_cap(DEFAULT_INITIAL_STATE, 0.004, PARAMS) == 0.004
    full = ReactorState(0.1, 0.01, 0.05, 0.01, VOLUME_CAP)
    assert apply_volume_cap(full, 0.009, PARAMS) == 0.0


def test_simulate_with_controller_callback():
    def controller(t, states):
        return 0.003 if t < 60 else 0.0

    traj = simulate(controller, PARAMS)
    assert traj.controls[0] == 0.003
    assert traj.controls[-1] == 0.0
    assert len(traj.states) == PARAMS.n_steps + 1


def test_simulate_wrong_length_rejected():
    with pytest.raises(ValueError):
        simulate([0.001] * 10, PARAMS)


def test_simulate_batch_matches_scalar():
    rng = np.random.default_rng(7)
    controls = np.array([random_controls(rng, PARAMS.n_steps) for _ in range(5)])
    states, applied = simulate_batch(controls, PARAMS)
    for i in range(5):
        traj = simulate(list(controls[i]), PARAMS)
        scalar = np.array([s.as_array() for s in traj.states])
        assert np.array_equal(states[i], scalar)
        assert np.array_equal(applied[i], np.array(traj.controls))


def test_trajectory_requires_matching_lengths():
    with pytest.raises(ValueError):
        Trajectory(states=[DEFAULT_INITIAL_STATE], controls=[0.001])


def test_trajectory_csv_roundtrip_shape():
    rng = np.random.default_rng(3)
    traj = simulate(random_controls(rng, PARAMS.n_steps), PARAMS)
    text = trajectory_to_csv(traj, header_comment="meta")
    lines = text.strip().split("\n")
    assert lines[0] == "# meta"
    assert lines[1] == "t,u,A,B,C,D,V"
    assert len(lines) == 2 + PARAMS.n_steps
    last = lines[-1].split(",")
    assert int(last[0]) == PARAMS.n_steps
    assert float(last[6]) == pytest.approx(traj.final.v, rel=1e-9)


def test_neg_clamp_keeps_tiny_undershoots():
    # a state already at zero B cannot go negative under zero feed
    s = ReactorState(a=0.2, b=0.0, c=0.0, d=0.0, v=0.5)
    nxt = integrate_step(s, 0.0, PARAMS)
    assert nxt.b >= 0.0
    assert math.isclose(nxt.a, s.a, rel_tol=1e-12)
