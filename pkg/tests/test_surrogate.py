"""Sequence model tests: gradient correctness, training behavior, the virtual
process interface and checkpointing."""
import numpy as np
import pytest

from rvl.dataset import generate_dataset
from rvl.reactor import KineticsParams
from rvl.surrogate import (
    CellState,
    Normalization,
    RecurrentModel,
    SurrogateError,
    TrainingConfig,
    VirtualSpace,
    _clip_gradients,
    _forward_sequence,
    _loss_and_gradients,
    forward_step,
    init_model,
    load_checkpoint,
    observe_virtual,
    reset_virtual,
    rmse,
    rollout_predict,
    rollout_predict_batch,
    save_checkpoint,
    step_virtual,
    train,
    training_arrays,
    zero_state,
)

PARAMS = KineticsParams()


def tiny_model(seed=0, hidden=4):
    return init_model(hidden, np.random.default_rng(seed))


def tiny_space(seed=0, hidden=4):
    return VirtualSpace(model_c=tiny_model(seed, hidden),
                        model_d=tiny_model(seed + 1, hidden))


def test_init_model_shapes_and_forget_bias():
    m = tiny_model(hidden=6)
    m.validate()
    assert m.wx.shape == (2, 24)
    # forget-gate bias block is shifted by +1
    assert np.all(m.b[6:12] > 0.9)
    assert np.all(np.abs(m.b[:6]) <= 0.08)


def test_forward_step_scalar_batch_agree():
    m = tiny_model()
    x = np.array([0.5, 0.2])
    y_s, st_s = forward_step(m, x, zero_state(m))
    y_b, st_b = forward_step(m, np.tile(x, (3, 1)), zero_state(m, batch=3))
    assert np.allclose(y_b, y_s)
    assert np.allclose(st_b.h[0], st_s.h)
    assert 0.0 < y_s < 1.0


def test_forward_step_rejects_bad_shapes():
    m = tiny_model()
    with pytest.raises(SurrogateError):
        forward_step(m, np.zeros(3), zero_state(m))
    with pytest.raises(SurrogateError):
        forward_step(m, np.zeros(2), CellState(np.zeros(7), np.zeros(7)))


def test_forward_sequence_matches_stepwise():
    m = tiny_model()
    x = np.random.default_rng(1).uniform(0, 1, size=(2, 5, 2))
    ys, _ = _forward_sequence(m, x)
    for b in range(2):
        state = zero_state(m)
        for t in range(5):
            y, state = forward_step(m, x[b, t], state)
            assert ys[b, t] == pytest.approx(y, rel=1e-12)


def test_gradients_match_finite_differences():
    """Exact BPTT against central differences on a 5-step toy, rel. 1e-4."""
    m = tiny_model(seed=3, hidden=3)
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, size=(2, 5, 2))
    targets = rng.uniform(0.2, 0.8, size=(2, 5))
    _, grads = _loss_and_gradients(m, x, targets)
    eps = 1e-6
    for name, arr in m.params().items():
        flat = arr.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            if name == "by":
                m.by = float(flat[0])
            lp, _ = _loss_and_gradients(m, x, targets)
            flat[k] = orig - eps
            if name == "by":
                m.by = float(flat[0])
            lm, _ = _loss_and_gradients(m, x, targets)
            flat[k] = orig
            if name == "by":
                m.by = float(flat[0])
            fd = (lp - lm) / (2 * eps)
            an = grads[name].ravel()[k]
            assert an == pytest.approx(fd, rel=1e-4, abs=1e-9), f"{name}[{k}]"


def test_clip_gradients_scales_to_norm():
    grads = {"a": np.array([3.0, 4.0])}
    _clip_gradients(grads, 1.0)
    assert np.linalg.norm(grads["a"]) == pytest.approx(1.0)
    grads = {"a": np.array([0.3, 0.4])}
    _clip_gradients(grads, 1.0)
    assert np.allclose(grads["a"], [0.3, 0.4])


def test_training_reduces_loss():
    eps = generate_dataset(20, PARAMS, seed=5)
    inputs, targets = training_arrays(eps, "c")
    cfg = TrainingConfig(hidden_size=8, mini_batch=10, epochs=30,
                         learning_rate=0.5, seed=0)
    model = init_model(8, np.random.default_rng(0))
    trained, losses = train(model, inputs, targets, cfg)
    assert len(losses) == 30
    assert losses[-1] < 0.5 * losses[0]
    # original weights untouched
    assert not np.array_equal(model.wx, trained.wx)


def test_training_deterministic():
    eps = generate_dataset(10, PARAMS, seed=5)
    inputs, targets = training_arrays(eps, "d")
    cfg = TrainingConfig(hidden_size=4, mini_batch=5, epochs=3,
                         learning_rate=0.2, seed=7)
    model = init_model(4, np.random.default_rng(1))
    t1, l1 = train(model, inputs, targets, cfg)
    t2, l2 = train(model, inputs, targets, cfg)
    assert l1 == l2
    assert np.array_equal(t1.wx, t2.wx)


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainingConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainingConfig(momentum=1.0)
    with pytest.raises(ValueError):
        train(tiny_model(), np.empty((0, 5, 2)), np.empty((0, 5)), TrainingConfig())


def test_training_arrays_layout():
    eps = generate_dataset(3, PARAMS, seed=2)
    inputs, targets = training_arrays(eps, "c")
    assert inputs.shape == (3, PARAMS.n_steps, 2)
    assert targets.shape == (3, PARAMS.n_steps)
    norm = Normalization()
    assert inputs[0, 0, 0] == pytest.approx(eps[0].controls[0] * norm.u_scale)
    assert targets[0, -1] == pytest.approx(eps[0].c_series[-1] * norm.y_scale)
    with pytest.raises(ValueError):
        training_arrays(eps, "x")


def test_virtual_rollout_shapes_and_batch_parity():
    space = tiny_space()
    rng = np.random.default_rng(0)
    controls = rng.choice([0.001, 0.005, 0.009], size=(4, 20))
    cb, db = rollout_predict_batch(space, controls)
    assert cb.shape == (4, 21)
    for i in range(4):
        c, d = rollout_predict(space, controls[i])
        assert np.allclose(cb[i], c)
        assert np.allclose(db[i], d)


def test_step_virtual_autoregressive_feedback():
    space = tiny_space()
    st0 = reset_virtual(space)
    y_c, y_d, st1 = step_virtual(space, st0, 0.005)
    assert st1.y_c == y_c and st1.y_d == y_d
    # a second step from the new state differs from repeating the first
    y2, _, _ = step_virtual(space, st1, 0.005)
    assert y2 != y_c


def test_observe_virtual_pins_measurements():
    space = tiny_space()
    st = reset_virtual(space)
    st = observe_virtual(space, st, 0.003, c_meas=0.0123, d_meas=0.0045)
    assert st.y_c == 0.0123
    assert st.y_d == 0.0045
    # carried cells advanced: differ from the reset cells
    assert not np.allclose(st.cell_c.h, 0.0)


def test_rmse_values():
    per_step, mean = rmse(np.array([[1.0, 2.0], [3.0, 4.0]]),
                          np.array([[1.0, 0.0], [3.0, 0.0]]))
    assert per_step[0] == 0.0
    assert per_step[1] == pytest.approx(np.sqrt((4 + 16) / 2))
    assert mean == pytest.approx(per_step.mean())
    with pytest.raises(ValueError):
        rmse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_checkpoint_roundtrip(tmp_path):
    space = tiny_space(seed=9)
    path = tmp_path / "ckpt.json"
    save_checkpoint(space, path, extra={"config_hash": "fff"})
    loaded = load_checkpoint(path)
    assert np.array_equal(loaded.model_c.wx, space.model_c.wx)
    assert np.array_equal(loaded.model_d.wy, space.model_d.wy)
    assert loaded.norm == space.norm
    controls = np.full(10, 0.004)
    c1, d1 = rollout_predict(space, controls)
    c2, d2 = rollout_predict(loaded, controls)
    assert np.array_equal(c1, c2) and np.array_equal(d1, d2)


def test_checkpoint_rejects_bad_schema(tmp_path):
    path = tmp_path / "ckpt.json"
    path.write_text('{"schema_version": 99}')
    with pytest.raises(SurrogateError):
        load_checkpoint(path)
